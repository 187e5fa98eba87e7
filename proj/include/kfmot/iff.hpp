#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "kfmot/types.hpp"

namespace kfmot::iff {

enum class FusionMode { kAverage, kGcn };
enum class Activation { kIdentity, kRelu };

/// Blend ratio and neighbourhood size for intra-frame fusion.
struct FusionConfig {
  double a = 0.4;  // self weight; b = 1 - a
  int m = 4;       // neighbour count
  FusionMode mode = FusionMode::kAverage;

  double b() const { return 1.0 - a; }
  void validate() const;
};

/// Per-frame m-nearest-neighbour graph over detections.
struct FrameGraph {
  int m = 0;
  std::vector<std::vector<int>> neighbors;  // per node, no self, no dups

  int size() const { return static_cast<int>(neighbors.size()); }
};

/// Single graph-convolution layer: out = activation(S H W) with
/// S = D^{-1/2} (A + I) D^{-1/2} over the symmetrized adjacency.
struct GcnLayer {
  Eigen::MatrixXd weights;  // D x D
  Activation activation = Activation::kIdentity;

  /// Identity plus uniform noise in [-0.01, 0.01], seeded.
  static GcnLayer init(int dim, std::uint64_t seed);
};

/// Neighbours = m nearest detections by box-center Euclidean distance,
/// ties to the smaller ordinal; clamped to |V| - 1.
FrameGraph build_frame_graph(const std::vector<Detection>& dets, int m);

/// a * f + b * mean(neighbors); f unchanged when no neighbours.
std::vector<double> average_fusion(const std::vector<double>& f,
                                   const std::vector<std::vector<double>>& neighbor_feats,
                                   const FusionConfig& cfg);

/// Symmetric-normalized propagation matrix S for the graph.
Eigen::MatrixXd propagation_matrix(const FrameGraph& graph);

Eigen::MatrixXd gcn_layer(const Eigen::MatrixXd& features, const FrameGraph& graph,
                          const GcnLayer& layer);

/// a * H + b * gcn_layer(H), row-wise.
Eigen::MatrixXd gcn_fusion(const Eigen::MatrixXd& features, const FrameGraph& graph,
                           const GcnLayer& layer, const FusionConfig& cfg);

/// Exact gradients of sum(upstream .* gcn_fusion(H)) w.r.t. W and H.
struct GcnGradients {
  Eigen::MatrixXd grad_weights;   // D x D
  Eigen::MatrixXd grad_features;  // N x D
};
GcnGradients gcn_gradients(const Eigen::MatrixXd& features, const FrameGraph& graph,
                           const GcnLayer& layer, const FusionConfig& cfg,
                           const Eigen::MatrixXd& upstream);

/// Apply the configured fusion to every frame of a sequence, in place.
/// layer may be null in average mode.
void fuse_sequence(Sequence& seq, const FusionConfig& cfg, const GcnLayer* layer);

std::string write_gcn_weights(const GcnLayer& layer);
GcnLayer parse_gcn_weights(const std::string& text);

}  // namespace kfmot::iff
