#include "kfmot/kfe.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "kfmot/data_io.hpp"

namespace kfmot::kfe {

void QConfig::validate() const {
  if (!(epsilon > 0.0 && epsilon <= 1.0)) {
    throw ValidationError("epsilon must be in (0, 1]");
  }
  if (!(learn_rate > 0.0 && learn_rate <= 1.0)) {
    throw ValidationError("learn_rate must be in (0, 1]");
  }
  if (!(discount >= 0.0 && discount < 1.0)) {
    throw ValidationError("discount must be in [0, 1)");
  }
  if (min_len < 1 || max_len < min_len) {
    throw ValidationError("need 1 <= min_len <= max_len");
  }
  if (episode_cap < 1) throw ValidationError("episode_cap must be positive");
  if (episodes < 0) throw ValidationError("episodes must be non-negative");
}

long long default_episodes(int sequence_length, const QConfig& cfg) {
  const long long a = std::max<long long>(1, sequence_length - cfg.min_len);
  const long long b = std::max<long long>(1, sequence_length - cfg.max_len);
  return std::clamp<long long>(a * b * 100, 1, cfg.episode_cap);
}

QTable::QTable(int num_states, int min_action, int max_action)
    : num_states_(num_states), min_action_(min_action), max_action_(max_action) {
  if (num_states < 0 || max_action < min_action) {
    throw ValidationError("invalid QTable shape");
  }
  values_.assign(static_cast<std::size_t>(num_states) * (max_action - min_action + 1), 0.0);
}

double QTable::get(int state, int action) const {
  if (state < 0 || state >= num_states_ || action < min_action_ || action > max_action_) {
    return 0.0;
  }
  return values_[static_cast<std::size_t>(state) * (max_action_ - min_action_ + 1) +
                 (action - min_action_)];
}

void QTable::set(int state, int action, double value) {
  if (state < 0 || state >= num_states_ || action < min_action_ || action > max_action_) {
    throw std::out_of_range("QTable index out of range");
  }
  values_[static_cast<std::size_t>(state) * (max_action_ - min_action_ + 1) +
          (action - min_action_)] = value;
}

double QTable::max_value(int state) const {
  double best = 0.0;
  if (state < 0 || state >= num_states_) return best;
  bool any = false;
  for (int a = min_action_; a <= max_action_; ++a) {
    const double v = get(state, a);
    if (!any || v > best) {
      best = v;
      any = true;
    }
  }
  return any ? best : 0.0;
}

int QTable::argmax_action(int state) const {
  int best_a = min_action_;
  double best = -std::numeric_limits<double>::infinity();
  for (int a = min_action_; a <= max_action_; ++a) {
    const double v = get(state, a);
    if (v > best) {
      best = v;
      best_a = a;
    }
  }
  return best_a;
}

std::vector<double> QTable::row(int state) const {
  std::vector<double> out;
  out.reserve(max_action_ - min_action_ + 1);
  for (int a = min_action_; a <= max_action_; ++a) out.push_back(get(state, a));
  return out;
}

double cosine_similarity(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) {
    throw DimensionError("cosine_similarity: lengths " + std::to_string(x.size()) +
                         " vs " + std::to_string(y.size()));
  }
  double dot = 0.0, nx = 0.0, ny = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += x[i] * y[i];
    nx += x[i] * x[i];
    ny += y[i] * y[i];
  }
  if (nx == 0.0 || ny == 0.0) return 0.0;
  return dot / (std::sqrt(nx) * std::sqrt(ny));
}

FrameFeatureCache::FrameFeatureCache(const Sequence& seq) {
  features_.resize(static_cast<std::size_t>(seq.length) + 1);
  for (int t = 1; t <= seq.length; ++t) {
    features_[t] = io::frame_feature(seq, t).vec;
  }
}

const std::vector<double>& FrameFeatureCache::at(int frame) const {
  if (frame < 1 || frame >= static_cast<int>(features_.size())) {
    throw std::out_of_range("frame " + std::to_string(frame) + " outside cache");
  }
  return features_[frame];
}

std::pair<double, double> segment_reward(const Segment& seg, const Segment& seg_next,
                                         const FrameFeatureCache& features,
                                         const QConfig& cfg) {
  const double phi_a = cosine_similarity(features.at(seg.first), features.at(seg_next.first));
  const double phi_b = cosine_similarity(features.at(seg.last), features.at(seg_next.last));
  const double half_xi = 0.5 * cfg.xi;
  return {(1.0 - phi_a) * cfg.delta + half_xi, (1.0 - phi_b) * cfg.delta + half_xi};
}

std::pair<double, double> segment_reward(const Segment& seg, const Segment& seg_next,
                                         const Sequence& seq, const QConfig& cfg) {
  const auto fa_i = io::frame_feature(seq, seg.first).vec;
  const auto fa_n = io::frame_feature(seq, seg_next.first).vec;
  const auto fb_i = io::frame_feature(seq, seg.last).vec;
  const auto fb_n = io::frame_feature(seq, seg_next.last).vec;
  const double half_xi = 0.5 * cfg.xi;
  return {(1.0 - cosine_similarity(fa_i, fa_n)) * cfg.delta + half_xi,
          (1.0 - cosine_similarity(fb_i, fb_n)) * cfg.delta + half_xi};
}

namespace {

enum class TieBreak { kSmallest, kLargest };

int epsilon_greedy(const std::vector<double>& row, int min_action, double epsilon, Rng& rng,
                   TieBreak tie) {
  const int n = static_cast<int>(row.size());
  if (n <= 0) throw ValidationError("empty action row");
  if (epsilon > 0.0 && rng.uniform() < epsilon) {
    return min_action + rng.uniform_int(0, n - 1);
  }
  int best = 0;
  for (int i = 1; i < n; ++i) {
    const bool better = tie == TieBreak::kSmallest ? row[i] > row[best] : row[i] >= row[best];
    if (better) best = i;
  }
  return min_action + best;
}

}  // namespace

int select_action(const std::vector<double>& row, const QConfig& cfg, Rng& rng) {
  if (static_cast<int>(row.size()) != cfg.num_actions()) {
    throw DimensionError("row size " + std::to_string(row.size()) +
                         " != action count " + std::to_string(cfg.num_actions()));
  }
  return epsilon_greedy(row, cfg.min_len, cfg.epsilon, rng, TieBreak::kSmallest);
}

QUpdateTrace update_q(QTable& qt, int state, int action, double kappa, int next_state,
                      const QConfig& cfg) {
  const int best_next = qt.argmax_action(next_state);
  const double lambda = kappa + cfg.discount * qt.get(next_state, best_next) -
                        qt.get(state, action);
  qt.set(state, action, qt.get(state, action) + lambda * cfg.learn_rate);
  return QUpdateTrace{state, action, kappa, next_state, lambda};
}

namespace {

SegmentationStrategy rollout_impl(const FrameFeatureCache& features, const QTablePair& tables,
                                  QTablePair* learn_tables, const QConfig& cfg, Rng* rng,
                                  double epsilon) {
  const int ln = features.length();
  SegmentationStrategy out;
  if (ln < 1) return out;

  double total_kappa = 0.0;
  int start = 1;
  Segment prev{};
  int prev_action = 0;
  bool have_prev = false;

  while (start <= ln) {
    // Combined row: first-frame table at the segment start, last-frame
    // table at the previous segment end (state 0 before the first segment).
    std::vector<double> combined(cfg.num_actions());
    for (int a = cfg.min_len; a <= cfg.max_len; ++a) {
      combined[a - cfg.min_len] = tables.first.get(start, a) + tables.last.get(start - 1, a);
    }
    const int action = epsilon_greedy(combined, cfg.min_len, epsilon, *rng, TieBreak::kLargest);
    const int end = std::min(start + action - 1, ln);
    const Segment seg{start, end};

    if (have_prev) {
      const auto [ka, kb] = segment_reward(prev, seg, features, cfg);
      total_kappa += ka + kb;
      if (learn_tables) {
        update_q(learn_tables->first, prev.first, prev_action, ka, seg.first, cfg);
        update_q(learn_tables->last, prev.last, action, kb, seg.last, cfg);
      }
    } else if (learn_tables) {
      // Zero-reward bootstrap from the "no previous end" state so step-one
      // selection sees downstream last-frame values.
      update_q(learn_tables->last, 0, action, 0.0, seg.last, cfg);
    }

    out.segments.push_back(seg);
    prev = seg;
    prev_action = action;
    have_prev = true;
    start = end + 1;
  }
  out.score = out.segments.empty() ? 0.0 : total_kappa / static_cast<double>(out.segments.size());
  return out;
}

QTablePair make_tables(int ln, const QConfig& cfg) {
  // States are frame indices 0..LN (0 = before the first segment).
  return QTablePair{QTable(ln + 1, cfg.min_len, cfg.max_len),
                    QTable(ln + 1, cfg.min_len, cfg.max_len)};
}

}  // namespace

SegmentationStrategy episode_rollout(const FrameFeatureCache& features, QTablePair& tables,
                                     const QConfig& cfg, Rng& rng, bool learn) {
  return rollout_impl(features, tables, learn ? &tables : nullptr, cfg, &rng, cfg.epsilon);
}

SegmentationStrategy greedy_rollout(const FrameFeatureCache& features,
                                    const QTablePair& tables, const QConfig& cfg) {
  Rng unused(0);
  return rollout_impl(features, tables, nullptr, cfg, &unused, 0.0);
}

double recompute_score(const std::vector<Segment>& segments, const FrameFeatureCache& features,
                       const QConfig& cfg) {
  if (segments.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < segments.size(); ++i) {
    const auto [ka, kb] = segment_reward(segments[i], segments[i + 1], features, cfg);
    total += ka + kb;
  }
  return total / static_cast<double>(segments.size());
}

TrainResult train_kfe(const Sequence& seq, const QConfig& cfg) {
  cfg.validate();
  FrameFeatureCache features(seq);
  TrainResult result;
  result.tables = make_tables(seq.length, cfg);
  Rng rng(cfg.seed);
  const long long episodes = cfg.episodes > 0 ? cfg.episodes : default_episodes(seq.length, cfg);

  double best = -std::numeric_limits<double>::infinity();
  for (long long ep = 0; ep < episodes; ++ep) {
    SegmentationStrategy strategy = episode_rollout(features, result.tables, cfg, rng, true);
    if (strategy.score > best) {
      best = strategy.score;
      result.best = std::move(strategy);
    }
  }
  result.episodes_run = episodes;
  return result;
}

std::vector<std::vector<int>> enumerate_segmentations(int ln, int u, int n) {
  if (ln > 16) {
    throw ValidationError("enumerate_segmentations limited to LN <= 16, got " +
                          std::to_string(ln));
  }
  std::vector<std::vector<int>> out;
  if (ln <= 0) return out;
  std::vector<int> prefix;
  // Non-final segments take lengths in [u, n]; the final segment may be any
  // length in [1, n] so every LN is reachable.
  auto rec = [&](auto&& self, int remaining) -> void {
    for (int len = u; len <= std::min(n, remaining - 1); ++len) {
      prefix.push_back(len);
      self(self, remaining - len);
      prefix.pop_back();
    }
    if (remaining <= n) {
      prefix.push_back(remaining);
      out.push_back(prefix);
      prefix.pop_back();
    }
  };
  rec(rec, ln);
  return out;
}

SegmentationStrategy oracle_best_segmentation(const Sequence& seq, const QConfig& cfg) {
  FrameFeatureCache features(seq);
  const auto tilings = enumerate_segmentations(seq.length, cfg.min_len, cfg.max_len);
  SegmentationStrategy best;
  double best_score = -std::numeric_limits<double>::infinity();
  for (const auto& lengths : tilings) {
    std::vector<Segment> segments;
    int start = 1;
    for (int len : lengths) {
      segments.push_back({start, start + len - 1});
      start += len;
    }
    const double score = recompute_score(segments, features, cfg);
    if (score > best_score) {  // strict: enumeration order is lexicographic
      best_score = score;
      best.segments = std::move(segments);
      best.score = score;
    }
  }
  return best;
}

SegmentationStrategy fixed_segmentation(int ln, int segment_len) {
  if (segment_len < 1) throw ValidationError("segment length must be positive");
  SegmentationStrategy out;
  for (int start = 1; start <= ln; start += segment_len) {
    out.segments.push_back({start, std::min(start + segment_len - 1, ln)});
  }
  return out;
}

std::string write_strategy(const SegmentationStrategy& s) {
  std::string out;
  for (std::size_t i = 0; i < s.segments.size(); ++i) {
    out += std::to_string(i + 1);
    out += ',';
    out += std::to_string(s.segments[i].first);
    out += ',';
    out += std::to_string(s.segments[i].last);
    out += '\n';
  }
  out += "# kappa_sum=" + io::format_double(s.score) + "\n";
  return out;
}

SegmentationStrategy parse_strategy(const std::string& text) {
  SegmentationStrategy out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      const auto pos = line.find("kappa_sum=");
      if (pos != std::string::npos) {
        const char* first = line.data() + pos + 10;
        const char* last = line.data() + line.size();
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(first, last, v);
        if (ec != std::errc{} || ptr != last) {
          throw ParseError("line " + std::to_string(line_no) + ": bad kappa_sum value");
        }
        out.score = v;
      }
      continue;
    }
    int idx = 0, first = 0, last = 0;
    if (std::sscanf(line.c_str(), "%d,%d,%d", &idx, &first, &last) != 3) {
      throw ParseError("line " + std::to_string(line_no) +
                       ": expected 'segment_index,first_frame,last_frame'");
    }
    out.segments.push_back({first, last});
  }
  for (std::size_t i = 0; i < out.segments.size(); ++i) {
    if (out.segments[i].first > out.segments[i].last) {
      throw ValidationError("segment " + std::to_string(i + 1) + " has first > last");
    }
    if (i > 0 && out.segments[i].first != out.segments[i - 1].last + 1) {
      throw ValidationError("segments must tile contiguously");
    }
  }
  return out;
}

}  // namespace kfmot::kfe
