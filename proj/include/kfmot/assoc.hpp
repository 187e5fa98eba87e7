#pragma once

#include <Eigen/Dense>
#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kfmot/iff.hpp"
#include "kfmot/kfe.hpp"
#include "kfmot/types.hpp"

namespace kfmot::assoc {

/// A short trajectory fragment; hierarchy levels merge these into tracks.
struct Tracklet {
  int id = 0;
  std::vector<std::pair<int, int>> members;  // (frame, ordinal within frame)
  std::vector<double> feature;               // mean of member features
  int first_frame = 0;
  int last_frame = 0;
  Box first_box;
  Box last_box;
  double vx = 0.0;  // center velocity per frame
  double vy = 0.0;
  int gt_id = -1;   // majority det_id of members, -1 when unknown

  int member_count() const { return static_cast<int>(members.size()); }
};

/// Association hypotheses between one ordered tracklet pair.
struct EdgeFeature {
  double appearance_sim = 0.0;  // cosine of tracklet features
  double time_gap = 0.0;        // frames between spans, >= 1
  double center_dist = 0.0;     // extrapolation error over mean box diagonal
  double iou_pred = 0.0;        // IoU of motion-extrapolated vs observed box
};

struct LevelEdge {
  int from = 0;
  int to = 0;
  EdgeFeature feat;
};

struct LevelGraph {
  int level = 1;
  std::vector<Tracklet> nodes;
  std::vector<LevelEdge> edges;
};

/// Linear edge classifier, one weight set per hierarchy level.
struct EdgeScorer {
  struct LevelWeights {
    double w_app = 0.0;
    double w_gap = 0.0;
    double w_dist = 0.0;
    double w_iou = 0.0;
    double bias = 0.0;
  };
  std::vector<LevelWeights> levels;
  int unfrozen_depth = 1;  // levels <= depth are trainable

  /// Hand-set weights that link obvious continuations and reject clutter;
  /// starting point for training and the no-training default.
  static EdgeScorer defaults(int num_levels);

  double score(const EdgeFeature& f, int level) const;
};

struct FocalLossConfig {
  double gamma = 2.0;
  double alpha_f = 0.25;
  void validate() const;
};

/// Focal loss -alpha_t (1 - p_t)^gamma log(p_t); p must be in (0, 1).
double focal_loss(double p, int y, const FocalLossConfig& cfg);
/// dL/dp of the focal loss.
double focal_loss_dp(double p, int y, const FocalLossConfig& cfg);

/// Greedy frame-to-frame association inside one segment: Hungarian on
/// 1 - IoU between consecutive frames, accepting IoU >= iou_accept.
std::vector<Tracklet> build_tracklets(const Sequence& seq, const kfe::Segment& segment,
                                      double iou_accept = 0.3);

EdgeFeature edge_feature(const Tracklet& a, const Tracklet& b);

/// Candidate successors per tracklet: the max_candidates temporally
/// following tracklets with the smallest time gap within the window.
LevelGraph build_level_graph(std::vector<Tracklet> nodes, int level, int window,
                             int max_candidates);

/// Logistic probability per candidate edge.
std::vector<double> score_edges(const LevelGraph& graph, const EdgeScorer& scorer);

/// Positive iff both tracklets carry the same known gt identity.
std::vector<int> label_edges(const LevelGraph& graph);

/// One-to-one assignment maximizing total score over edges with
/// score >= threshold; accepted chains are concatenated.
std::vector<Tracklet> match_and_merge(const LevelGraph& graph,
                                      const std::vector<double>& scores, double threshold);

/// Inference knobs for the hierarchical pipeline.
struct TrackConfig {
  int levels = 3;
  int max_candidates = 3;
  double merge_threshold = 0.5;
  double base_iou = 0.3;
  int base_window = 0;             // 0 -> max segment length in the strategy
  std::vector<int> fusion_levels = {1};  // levels before which fusion runs

  void validate() const;
};

/// Full pipeline: optional intra-frame fusion, per-segment tracklets, then
/// level-by-level merging with doubling windows. Boxes in the result come
/// from the input detections; stable ids ordered by first frame.
TrackSet track_sequence(const Sequence& seq, const kfe::SegmentationStrategy& strategy,
                        const std::optional<iff::FusionConfig>& fusion,
                        const iff::GcnLayer* layer, const EdgeScorer& scorer,
                        const TrackConfig& cfg);

// ---------------------------------------------------------------------------
// Training

struct TrainSchedule {
  long long iterations = 2000;
  long long unfreeze_every = 500;  // level L+1 unfreezes after this many of <= L
  double step = 1e-2;
};

struct TrainingGraph {
  LevelGraph graph;
  std::vector<int> labels;
};

/// Per-feature standardization constants used inside training.
struct Standardization {
  std::array<double, 4> mean{0, 0, 0, 0};
  std::array<double, 4> stddev{1, 1, 1, 1};
};

struct ScorerTrainResult {
  EdgeScorer scorer;
  std::vector<double> loss_history;  // objective per iteration
};

/// Gradient descent on the summed per-level mean focal losses of the
/// currently unfrozen levels, with the unfreezing schedule. Features are
/// standardized internally; returned weights act on raw features.
ScorerTrainResult train_edge_scorer(const std::vector<TrainingGraph>& levels,
                                    EdgeScorer scorer, const FocalLossConfig& loss_cfg,
                                    const TrainSchedule& schedule);

/// Fixed-structure training batch for joint scorer + GCN optimization.
/// Memberships, motion features and labels are frozen; appearance
/// similarities are recomputed from the current GCN weights each step.
struct JointBatch {
  std::vector<Eigen::MatrixXd> frame_features;  // base features per frame slot
  std::vector<iff::FrameGraph> frame_graphs;
  struct Edge {
    int from = 0;
    int to = 0;
    double time_gap = 0.0;
    double center_dist = 0.0;
    double iou_pred = 0.0;
    int label = 0;
  };
  struct Level {
    std::vector<std::vector<std::pair<int, int>>> members;  // tracklet -> (slot, row)
    std::vector<Edge> edges;
  };
  std::vector<Level> levels;
};

/// Build a batch from a sequence with identity-carrying detections: base
/// tracklets per segment, then a hierarchy grown by ground-truth-consistent
/// merges so the structure does not depend on the scorer under training.
JointBatch build_joint_batch(const Sequence& seq, const kfe::SegmentationStrategy& strategy,
                             const TrackConfig& cfg);

/// Objective value at the given parameters (levels 1..unfrozen_depth).
/// fusion/layer may be null for raw-feature training.
double joint_loss(const JointBatch& batch, const EdgeScorer& scorer,
                  const iff::FusionConfig* fusion, const iff::GcnLayer* layer,
                  const FocalLossConfig& loss_cfg, int unfrozen_depth,
                  const Standardization& std_consts);

struct JointGradients {
  double loss = 0.0;
  std::vector<EdgeScorer::LevelWeights> grad_levels;      // raw-feature space
  std::vector<EdgeScorer::LevelWeights> grad_levels_std;  // standardized space
  Eigen::MatrixXd grad_gcn;  // empty when no GCN in the loop
};

/// Analytic gradients of joint_loss w.r.t. scorer weights and GCN weights
/// (via iff::gcn_gradients).
JointGradients joint_loss_and_gradients(const JointBatch& batch, const EdgeScorer& scorer,
                                        const iff::FusionConfig* fusion,
                                        const iff::GcnLayer* layer,
                                        const FocalLossConfig& loss_cfg, int unfrozen_depth,
                                        const Standardization& std_consts);

Standardization standardize_batch(const JointBatch& batch, const iff::FusionConfig* fusion,
                                  const iff::GcnLayer* layer);

struct JointTrainResult {
  EdgeScorer scorer;
  iff::GcnLayer layer;
  std::vector<double> loss_history;
};

/// Joint training; scorer weights are returned in raw-feature space.
JointTrainResult train_joint(const JointBatch& batch, EdgeScorer scorer, iff::GcnLayer layer,
                             const iff::FusionConfig& fusion, const FocalLossConfig& loss_cfg,
                             const TrainSchedule& schedule);

std::string write_scorer(const EdgeScorer& scorer);
EdgeScorer parse_scorer(const std::string& text);

}  // namespace kfmot::assoc
