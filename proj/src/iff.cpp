#include "kfmot/iff.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include "kfmot/data_io.hpp"
#include "kfmot/rng.hpp"

namespace kfmot::iff {

void FusionConfig::validate() const {
  if (!(a >= 0.0 && a <= 1.0)) throw ValidationError("fusion ratio a must be in [0, 1]");
  if (m < 1) throw ValidationError("neighbour count m must be >= 1");
}

GcnLayer GcnLayer::init(int dim, std::uint64_t seed) {
  GcnLayer layer;
  layer.weights = Eigen::MatrixXd::Identity(dim, dim);
  Rng rng(seed);
  for (int r = 0; r < dim; ++r) {
    for (int c = 0; c < dim; ++c) {
      layer.weights(r, c) += rng.uniform(-0.01, 0.01);
    }
  }
  return layer;
}

FrameGraph build_frame_graph(const std::vector<Detection>& dets, int m) {
  if (m < 1) throw ValidationError("neighbour count m must be >= 1");
  const int n = static_cast<int>(dets.size());
  FrameGraph graph;
  graph.m = m;
  graph.neighbors.resize(n);
  if (n <= 1) return graph;
  const int k = std::min(m, n - 1);
  for (int i = 0; i < n; ++i) {
    std::vector<std::pair<double, int>> dist;
    dist.reserve(n - 1);
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dx = dets[i].box.center_x() - dets[j].box.center_x();
      const double dy = dets[i].box.center_y() - dets[j].box.center_y();
      dist.emplace_back(dx * dx + dy * dy, j);
    }
    std::sort(dist.begin(), dist.end());
    graph.neighbors[i].reserve(k);
    for (int t = 0; t < k; ++t) graph.neighbors[i].push_back(dist[t].second);
  }
  return graph;
}

std::vector<double> average_fusion(const std::vector<double>& f,
                                   const std::vector<std::vector<double>>& neighbor_feats,
                                   const FusionConfig& cfg) {
  cfg.validate();
  if (neighbor_feats.empty() || cfg.a == 1.0) return f;
  std::vector<double> mean(f.size(), 0.0);
  for (const auto& nf : neighbor_feats) {
    if (nf.size() != f.size()) {
      throw DimensionError("neighbour feature length " + std::to_string(nf.size()) +
                           " != " + std::to_string(f.size()));
    }
    for (std::size_t k = 0; k < f.size(); ++k) mean[k] += nf[k];
  }
  const double inv = 1.0 / static_cast<double>(neighbor_feats.size());
  std::vector<double> out(f.size());
  for (std::size_t k = 0; k < f.size(); ++k) {
    out[k] = cfg.a * f[k] + cfg.b() * mean[k] * inv;
  }
  return out;
}

Eigen::MatrixXd propagation_matrix(const FrameGraph& graph) {
  const int n = graph.size();
  Eigen::MatrixXd adj = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j : graph.neighbors[i]) {
      adj(i, j) = 1.0;
      adj(j, i) = 1.0;  // symmetrize the directed kNN edges
    }
  }
  adj += Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd inv_sqrt_deg = adj.rowwise().sum().cwiseSqrt().cwiseInverse();
  return inv_sqrt_deg.asDiagonal() * adj * inv_sqrt_deg.asDiagonal();
}

namespace {

Eigen::MatrixXd apply_activation(Eigen::MatrixXd z, Activation act) {
  if (act == Activation::kRelu) z = z.cwiseMax(0.0);
  return z;
}

}  // namespace

Eigen::MatrixXd gcn_layer(const Eigen::MatrixXd& features, const FrameGraph& graph,
                          const GcnLayer& layer) {
  if (features.rows() != graph.size()) {
    throw DimensionError("feature rows " + std::to_string(features.rows()) +
                         " != node count " + std::to_string(graph.size()));
  }
  if (features.cols() != layer.weights.rows()) {
    throw DimensionError("feature dim " + std::to_string(features.cols()) +
                         " != weight rows " + std::to_string(layer.weights.rows()));
  }
  return apply_activation(propagation_matrix(graph) * features * layer.weights,
                          layer.activation);
}

Eigen::MatrixXd gcn_fusion(const Eigen::MatrixXd& features, const FrameGraph& graph,
                           const GcnLayer& layer, const FusionConfig& cfg) {
  cfg.validate();
  if (cfg.a == 1.0) return features;
  return cfg.a * features + cfg.b() * gcn_layer(features, graph, layer);
}

GcnGradients gcn_gradients(const Eigen::MatrixXd& features, const FrameGraph& graph,
                           const GcnLayer& layer, const FusionConfig& cfg,
                           const Eigen::MatrixXd& upstream) {
  if (upstream.rows() != features.rows() || upstream.cols() != features.cols()) {
    throw DimensionError("upstream shape must match features");
  }
  cfg.validate();
  const Eigen::MatrixXd s = propagation_matrix(graph);
  const Eigen::MatrixXd sh = s * features;
  const Eigen::MatrixXd z = sh * layer.weights;

  Eigen::MatrixXd dz = cfg.b() * upstream;
  if (layer.activation == Activation::kRelu) {
    dz = dz.cwiseProduct((z.array() > 0.0).cast<double>().matrix());
  }
  GcnGradients g;
  g.grad_weights = sh.transpose() * dz;
  g.grad_features = cfg.a * upstream + s.transpose() * dz * layer.weights.transpose();
  return g;
}

void fuse_sequence(Sequence& seq, const FusionConfig& cfg, const GcnLayer* layer) {
  cfg.validate();
  if (cfg.mode == FusionMode::kGcn && layer == nullptr) {
    throw ValidationError("gcn fusion requires layer weights");
  }
  for (auto& [frame, dets] : seq.frames) {
    if (dets.empty()) continue;
    const FrameGraph graph = build_frame_graph(dets, cfg.m);
    if (cfg.mode == FusionMode::kAverage) {
      std::vector<std::vector<double>> fused(dets.size());
      for (std::size_t i = 0; i < dets.size(); ++i) {
        std::vector<std::vector<double>> nbr;
        nbr.reserve(graph.neighbors[i].size());
        for (int j : graph.neighbors[i]) nbr.push_back(dets[j].feature);
        fused[i] = average_fusion(dets[i].feature, nbr, cfg);
      }
      for (std::size_t i = 0; i < dets.size(); ++i) dets[i].feature = std::move(fused[i]);
    } else {
      const int d = seq.feature_dim;
      Eigen::MatrixXd h(dets.size(), d);
      for (std::size_t i = 0; i < dets.size(); ++i) {
        if (static_cast<int>(dets[i].feature.size()) != d) {
          throw DimensionError("detection feature length mismatch in frame " +
                               std::to_string(frame));
        }
        for (int k = 0; k < d; ++k) h(i, k) = dets[i].feature[k];
      }
      const Eigen::MatrixXd fused = gcn_fusion(h, graph, *layer, cfg);
      for (std::size_t i = 0; i < dets.size(); ++i) {
        for (int k = 0; k < d; ++k) dets[i].feature[k] = fused(i, k);
      }
    }
  }
}

std::string write_gcn_weights(const GcnLayer& layer) {
  const int d = static_cast<int>(layer.weights.rows());
  std::string out = "D=" + std::to_string(d) + "\n";
  for (int r = 0; r < d; ++r) {
    for (int c = 0; c < d; ++c) {
      if (c) out += ' ';
      out += io::format_double(layer.weights(r, c));
    }
    out += '\n';
  }
  return out;
}

GcnLayer parse_gcn_weights(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty gcn weights file");
  while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
  if (!line.starts_with("D=")) throw ParseError("gcn weights file must start with 'D=<int>'");
  const int d = std::stoi(line.substr(2));
  if (d <= 0) throw ValidationError("gcn weight dimension must be positive");
  GcnLayer layer;
  layer.weights.resize(d, d);
  for (int r = 0; r < d; ++r) {
    if (!std::getline(in, line)) {
      throw ParseError("gcn weights file ended after " + std::to_string(r) + " rows");
    }
    std::istringstream row(line);
    for (int c = 0; c < d; ++c) {
      double v = 0.0;
      if (!(row >> v)) {
        throw ParseError("gcn weights row " + std::to_string(r + 1) + " needs " +
                         std::to_string(d) + " values");
      }
      layer.weights(r, c) = v;
    }
  }
  return layer;
}

}  // namespace kfmot::iff
