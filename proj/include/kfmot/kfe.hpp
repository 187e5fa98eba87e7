#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "kfmot/rng.hpp"
#include "kfmot/types.hpp"

namespace kfmot::kfe {

/// Q-learning hyperparameters for key-frame segmentation.
struct QConfig {
  double epsilon = 0.1;    // exploration rate
  double learn_rate = 0.1; // q
  double discount = 0.99;  // alpha
  double delta = 1.0;      // reward scale
  double xi = 0.0;         // reward offset, split evenly across the two halves
  int min_len = 1;         // u
  int max_len = 1;         // n
  long long episodes = 0;  // 0 -> default_episodes()
  long long episode_cap = 50000;
  std::uint64_t seed = 0;

  void validate() const;
  int num_actions() const { return max_len - min_len + 1; }
};

/// Default episode budget (LN-u)*(LN-n)*100, clamped to [1, episode_cap].
long long default_episodes(int sequence_length, const QConfig& cfg);

/// Contiguous frame interval [first, last].
struct Segment {
  int first = 0;
  int last = 0;
  int length() const { return last - first + 1; }
  bool operator==(const Segment&) const = default;
};

/// An ordered tiling of [1, LN] plus its normalized reward score.
struct SegmentationStrategy {
  std::vector<Segment> segments;
  double score = 0.0;
};

/// Tabular value function over (frame-index state, segment-length action),
/// default 0 for unseen pairs.
class QTable {
 public:
  QTable() = default;
  QTable(int num_states, int min_action, int max_action);

  double get(int state, int action) const;
  void set(int state, int action, double value);
  /// Largest value in the row; 0-filled rows give 0.
  double max_value(int state) const;
  /// Action attaining max_value, ties to the smallest action.
  int argmax_action(int state) const;
  std::vector<double> row(int state) const;

  int min_action() const { return min_action_; }
  int max_action() const { return max_action_; }
  int num_states() const { return num_states_; }

 private:
  int num_states_ = 0;
  int min_action_ = 0;
  int max_action_ = -1;
  std::vector<double> values_;
};

/// First-frame and last-frame tables of the two-sided selection strategy.
struct QTablePair {
  QTable first;
  QTable last;
};

/// One Q-value update, kept for inspection in tests.
struct QUpdateTrace {
  int state = 0;
  int action = 0;
  double reward = 0.0;
  int next_state = 0;
  double td_term = 0.0;  // lambda at the moment of the update
};

/// Cosine similarity with the zero-vector-maps-to-0 convention.
double cosine_similarity(const std::vector<double>& x, const std::vector<double>& y);

/// Precomputed frame features of one sequence, indexed 1..LN.
class FrameFeatureCache {
 public:
  explicit FrameFeatureCache(const Sequence& seq);
  const std::vector<double>& at(int frame) const;
  int length() const { return static_cast<int>(features_.size()) - 1; }

 private:
  std::vector<std::vector<double>> features_;  // [0] unused
};

/// Boundary reward halves between consecutive segments:
/// kappa_a from the first frames, kappa_b from the last frames;
/// their sum is ((1-phi_a) + (1-phi_b)) * delta + xi.
std::pair<double, double> segment_reward(const Segment& seg, const Segment& seg_next,
                                         const Sequence& seq, const QConfig& cfg);
std::pair<double, double> segment_reward(const Segment& seg, const Segment& seg_next,
                                         const FrameFeatureCache& features,
                                         const QConfig& cfg);

/// Epsilon-greedy over one table row. row[i] is the value of action
/// min_len + i. Exploit ties break to the smallest action.
int select_action(const std::vector<double>& row, const QConfig& cfg, Rng& rng);

/// Eqs. of the classic tabular update: lambda = kappa + discount *
/// max_a' QT[s', a'] - QT[s, a]; QT[s, a] += lambda * learn_rate.
QUpdateTrace update_q(QTable& qt, int state, int action, double kappa, int next_state,
                      const QConfig& cfg);

/// One episode through the sequence. Each step picks a segment length with
/// one epsilon-greedy draw over the summed first/last table rows (the
/// first-frame table is read at the segment start, the last-frame table at
/// the previous segment end); exact value ties prefer the longer length
/// since the episode score divides by segment count. When learn is set,
/// both tables receive their reward half per boundary. The returned score
/// is sum(kappa_a + kappa_b) / #segments.
SegmentationStrategy episode_rollout(const FrameFeatureCache& features, QTablePair& tables,
                                     const QConfig& cfg, Rng& rng, bool learn = true);

/// Greedy (epsilon = 0), non-learning rollout with the given tables.
SegmentationStrategy greedy_rollout(const FrameFeatureCache& features,
                                    const QTablePair& tables, const QConfig& cfg);

/// Recompute a strategy's normalized score from its segments.
double recompute_score(const std::vector<Segment>& segments, const FrameFeatureCache& features,
                       const QConfig& cfg);

struct TrainResult {
  SegmentationStrategy best;  // FS_best with kappa_best as score
  QTablePair tables;
  long long episodes_run = 0;
};

/// Full training loop: episodes rollouts, tracking the strictly-best
/// episode. Deterministic given cfg.seed.
TrainResult train_kfe(const Sequence& seq, const QConfig& cfg);

/// Every tiling of [1, LN] by lengths in [u, n], final segment in [1, n].
/// Refuses LN > 16.
std::vector<std::vector<int>> enumerate_segmentations(int ln, int u, int n);

/// Brute-force best strategy by exhaustive scoring; ties keep the
/// lexicographically smallest length tuple. Refuses LN > 16.
SegmentationStrategy oracle_best_segmentation(const Sequence& seq, const QConfig& cfg);

/// Fixed equal-length tiling (the non-adaptive baseline).
SegmentationStrategy fixed_segmentation(int ln, int segment_len);

std::string write_strategy(const SegmentationStrategy& s);
SegmentationStrategy parse_strategy(const std::string& text);

}  // namespace kfmot::kfe
