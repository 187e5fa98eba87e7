#include "kfmot/assoc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "kfmot/hungarian.hpp"

namespace kfmot::assoc {

namespace {

constexpr double kProbClamp = 1e-7;

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double clamp_prob(double p) {
  return std::clamp(p, kProbClamp, 1.0 - kProbClamp);
}

double vec_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double box_diag(const Box& b) {
  return std::sqrt(b.width * b.width + b.height * b.height);
}

double iou_boxes(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.right(), b.right()) - std::max(a.left, b.left));
  const double iy = std::max(0.0, std::min(a.bottom(), b.bottom()) - std::max(a.top, b.top));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni <= 0.0 ? 0.0 : inter / uni;
}

}  // namespace

EdgeScorer EdgeScorer::defaults(int num_levels) {
  EdgeScorer s;
  s.levels.assign(std::max(1, num_levels), LevelWeights{2.5, -0.15, -1.2, 1.5, -0.8});
  return s;
}

double EdgeScorer::score(const EdgeFeature& f, int level) const {
  if (level < 1 || level > static_cast<int>(levels.size())) {
    throw ValidationError("no scorer weights for level " + std::to_string(level));
  }
  const LevelWeights& w = levels[level - 1];
  return logistic(w.w_app * f.appearance_sim + w.w_gap * f.time_gap +
                  w.w_dist * f.center_dist + w.w_iou * f.iou_pred + w.bias);
}

void FocalLossConfig::validate() const {
  if (!(gamma >= 0.0)) throw ValidationError("focal gamma must be >= 0");
  if (!(alpha_f > 0.0 && alpha_f < 1.0)) throw ValidationError("alpha_f must be in (0, 1)");
}

double focal_loss(double p, int y, const FocalLossConfig& cfg) {
  cfg.validate();
  if (!(p > 0.0 && p < 1.0)) {
    throw std::domain_error("focal_loss probability must be in (0, 1), got " +
                            std::to_string(p));
  }
  const double pt = y == 1 ? p : 1.0 - p;
  const double at = y == 1 ? cfg.alpha_f : 1.0 - cfg.alpha_f;
  return -at * std::pow(1.0 - pt, cfg.gamma) * std::log(pt);
}

double focal_loss_dp(double p, int y, const FocalLossConfig& cfg) {
  cfg.validate();
  if (!(p > 0.0 && p < 1.0)) {
    throw std::domain_error("focal_loss probability must be in (0, 1)");
  }
  const double pt = y == 1 ? p : 1.0 - p;
  const double at = y == 1 ? cfg.alpha_f : 1.0 - cfg.alpha_f;
  const double powered = std::pow(1.0 - pt, cfg.gamma);
  double d_pt = -at * powered / pt;  // d/dpt of -at (1-pt)^g log(pt)
  if (cfg.gamma > 0.0) {
    d_pt += at * cfg.gamma * std::pow(1.0 - pt, cfg.gamma - 1.0) * std::log(pt);
  }
  return y == 1 ? d_pt : -d_pt;
}

// ---------------------------------------------------------------------------
// Base tracklets

std::vector<Tracklet> build_tracklets(const Sequence& seq, const kfe::Segment& segment,
                                      double iou_accept) {
  if (segment.first < 1 || segment.last > std::max(seq.length, segment.last) ||
      segment.first > segment.last) {
    throw ValidationError("segment [" + std::to_string(segment.first) + ", " +
                          std::to_string(segment.last) + "] is not a valid interval");
  }

  struct Builder {
    std::vector<std::pair<int, int>> members;
    std::vector<double> feat_sum;
    std::map<int, int> gt_counts;
    int first_frame = 0, last_frame = 0;
    Box first_box, last_box;
  };
  std::vector<Builder> builders;
  std::vector<int> active;  // builders extended in the previous frame

  for (int t = segment.first; t <= segment.last; ++t) {
    const auto* dets = seq.detections_at(t);
    std::vector<int> next_active;
    if (dets && !dets->empty()) {
      std::vector<char> det_used(dets->size(), 0);
      if (!active.empty()) {
        std::vector<std::vector<double>> sim(active.size(),
                                             std::vector<double>(dets->size(), 0.0));
        for (std::size_t i = 0; i < active.size(); ++i) {
          for (std::size_t j = 0; j < dets->size(); ++j) {
            sim[i][j] = iou_boxes(builders[active[i]].last_box, (*dets)[j].box);
          }
        }
        for (const auto& [i, j] : max_similarity_matching(sim, iou_accept)) {
          Builder& b = builders[active[i]];
          b.members.emplace_back(t, j);
          b.last_frame = t;
          b.last_box = (*dets)[j].box;
          ++b.gt_counts[(*dets)[j].det_id];
          for (std::size_t k = 0; k < (*dets)[j].feature.size(); ++k) {
            b.feat_sum[k] += (*dets)[j].feature[k];
          }
          det_used[j] = 1;
          next_active.push_back(active[i]);
        }
      }
      for (std::size_t j = 0; j < dets->size(); ++j) {
        if (det_used[j]) continue;
        Builder b;
        b.members.emplace_back(t, static_cast<int>(j));
        b.feat_sum = (*dets)[j].feature;
        b.gt_counts[(*dets)[j].det_id] = 1;
        b.first_frame = b.last_frame = t;
        b.first_box = b.last_box = (*dets)[j].box;
        builders.push_back(std::move(b));
        next_active.push_back(static_cast<int>(builders.size()) - 1);
      }
    }
    active = std::move(next_active);
  }

  std::vector<Tracklet> out;
  out.reserve(builders.size());
  for (std::size_t i = 0; i < builders.size(); ++i) {
    const Builder& b = builders[i];
    Tracklet t;
    t.id = static_cast<int>(i) + 1;
    t.members = b.members;
    t.first_frame = b.first_frame;
    t.last_frame = b.last_frame;
    t.first_box = b.first_box;
    t.last_box = b.last_box;
    t.feature = b.feat_sum;
    const double inv = 1.0 / static_cast<double>(b.members.size());
    for (double& x : t.feature) x *= inv;
    if (t.last_frame > t.first_frame) {
      const double dt = static_cast<double>(t.last_frame - t.first_frame);
      t.vx = (t.last_box.center_x() - t.first_box.center_x()) / dt;
      t.vy = (t.last_box.center_y() - t.first_box.center_y()) / dt;
    }
    int best_id = -1, best_count = 0;
    for (const auto& [gid, count] : b.gt_counts) {
      if (count > best_count) {
        best_count = count;
        best_id = gid;
      }
    }
    t.gt_id = best_id;
    out.push_back(std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Level graphs

EdgeFeature edge_feature(const Tracklet& a, const Tracklet& b) {
  EdgeFeature f;
  f.appearance_sim = kfe::cosine_similarity(a.feature, b.feature);
  f.time_gap = static_cast<double>(b.first_frame - a.last_frame);
  const double px = a.last_box.center_x() + a.vx * f.time_gap;
  const double py = a.last_box.center_y() + a.vy * f.time_gap;
  const double dx = px - b.first_box.center_x();
  const double dy = py - b.first_box.center_y();
  const double norm = 0.5 * (box_diag(a.last_box) + box_diag(b.first_box));
  f.center_dist = norm > 0.0 ? std::sqrt(dx * dx + dy * dy) / norm : 0.0;
  Box predicted = a.last_box;
  predicted.left = px - predicted.width / 2.0;
  predicted.top = py - predicted.height / 2.0;
  f.iou_pred = iou_boxes(predicted, b.first_box);
  return f;
}

LevelGraph build_level_graph(std::vector<Tracklet> nodes, int level, int window,
                             int max_candidates) {
  if (level < 1) throw ValidationError("level must be >= 1");
  if (window < 1) throw ValidationError("window must be >= 1");
  if (max_candidates < 1) throw ValidationError("max_candidates must be >= 1");
  LevelGraph graph;
  graph.level = level;
  graph.nodes = std::move(nodes);
  const int n = static_cast<int>(graph.nodes.size());
  for (int i = 0; i < n; ++i) {
    std::vector<std::pair<int, int>> cands;  // (gap, j)
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const int gap = graph.nodes[j].first_frame - graph.nodes[i].last_frame;
      if (gap >= 1 && gap <= window) cands.emplace_back(gap, j);
    }
    std::sort(cands.begin(), cands.end());
    const int keep = std::min<int>(max_candidates, static_cast<int>(cands.size()));
    for (int k = 0; k < keep; ++k) {
      const int j = cands[k].second;
      graph.edges.push_back({i, j, edge_feature(graph.nodes[i], graph.nodes[j])});
    }
  }
  return graph;
}

std::vector<double> score_edges(const LevelGraph& graph, const EdgeScorer& scorer) {
  std::vector<double> out;
  out.reserve(graph.edges.size());
  for (const auto& e : graph.edges) out.push_back(scorer.score(e.feat, graph.level));
  return out;
}

std::vector<int> label_edges(const LevelGraph& graph) {
  std::vector<int> out;
  out.reserve(graph.edges.size());
  for (const auto& e : graph.edges) {
    const int ga = graph.nodes[e.from].gt_id;
    const int gb = graph.nodes[e.to].gt_id;
    out.push_back(ga != -1 && ga == gb ? 1 : 0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Merging

namespace {

Tracklet merge_chain(const std::vector<Tracklet>& nodes, const std::vector<int>& chain) {
  Tracklet out = nodes[chain.front()];
  for (std::size_t k = 1; k < chain.size(); ++k) {
    const Tracklet& tail = nodes[chain[k]];
    const int n_a = out.member_count();
    const int n_b = tail.member_count();
    out.members.insert(out.members.end(), tail.members.begin(), tail.members.end());
    if (out.feature.size() == tail.feature.size() && !out.feature.empty()) {
      const double wa = static_cast<double>(n_a) / (n_a + n_b);
      const double wb = static_cast<double>(n_b) / (n_a + n_b);
      for (std::size_t i = 0; i < out.feature.size(); ++i) {
        out.feature[i] = wa * out.feature[i] + wb * tail.feature[i];
      }
    }
    out.last_frame = tail.last_frame;
    out.last_box = tail.last_box;
    if (out.gt_id != tail.gt_id) out.gt_id = -1;
  }
  if (out.last_frame > out.first_frame) {
    const double dt = static_cast<double>(out.last_frame - out.first_frame);
    out.vx = (out.last_box.center_x() - out.first_box.center_x()) / dt;
    out.vy = (out.last_box.center_y() - out.first_box.center_y()) / dt;
  } else {
    out.vx = out.vy = 0.0;
  }
  return out;
}

std::vector<Tracklet> merge_accepted(const std::vector<Tracklet>& nodes,
                                     const std::vector<std::pair<int, int>>& accepted) {
  const int n = static_cast<int>(nodes.size());
  std::vector<int> next(n, -1);
  std::vector<char> has_prev(n, 0);
  for (const auto& [from, to] : accepted) {
    if (next[from] != -1 || has_prev[to]) {
      throw ValidationError("merge pairs violate the one-to-one constraint");
    }
    next[from] = to;
    has_prev[to] = 1;
  }
  std::vector<Tracklet> out;
  for (int i = 0; i < n; ++i) {
    if (has_prev[i]) continue;
    std::vector<int> chain{i};
    while (next[chain.back()] != -1) chain.push_back(next[chain.back()]);
    out.push_back(merge_chain(nodes, chain));
  }
  return out;
}

}  // namespace

std::vector<Tracklet> match_and_merge(const LevelGraph& graph,
                                      const std::vector<double>& scores, double threshold) {
  if (scores.size() != graph.edges.size()) {
    throw DimensionError("scores count " + std::to_string(scores.size()) +
                         " != edge count " + std::to_string(graph.edges.size()));
  }
  std::vector<int> froms, tos;
  for (std::size_t k = 0; k < graph.edges.size(); ++k) {
    if (scores[k] < threshold) continue;
    froms.push_back(graph.edges[k].from);
    tos.push_back(graph.edges[k].to);
  }
  std::sort(froms.begin(), froms.end());
  froms.erase(std::unique(froms.begin(), froms.end()), froms.end());
  std::sort(tos.begin(), tos.end());
  tos.erase(std::unique(tos.begin(), tos.end()), tos.end());

  std::vector<std::pair<int, int>> accepted;
  if (!froms.empty() && !tos.empty()) {
    std::map<int, int> from_idx, to_idx;
    for (std::size_t i = 0; i < froms.size(); ++i) from_idx[froms[i]] = static_cast<int>(i);
    for (std::size_t i = 0; i < tos.size(); ++i) to_idx[tos[i]] = static_cast<int>(i);
    std::vector<std::vector<double>> sim(froms.size(), std::vector<double>(tos.size(), 0.0));
    for (std::size_t k = 0; k < graph.edges.size(); ++k) {
      if (scores[k] < threshold) continue;
      sim[from_idx[graph.edges[k].from]][to_idx[graph.edges[k].to]] = scores[k];
    }
    for (const auto& [r, c] : max_similarity_matching(sim, threshold)) {
      accepted.emplace_back(froms[r], tos[c]);
    }
  }
  return merge_accepted(graph.nodes, accepted);
}

// ---------------------------------------------------------------------------
// Full pipeline

void TrackConfig::validate() const {
  if (levels < 1) throw ValidationError("levels must be >= 1");
  if (max_candidates < 1) throw ValidationError("max_candidates must be >= 1");
  if (!(merge_threshold >= 0.0 && merge_threshold <= 1.0)) {
    throw ValidationError("merge_threshold must be in [0, 1]");
  }
  if (!(base_iou >= 0.0 && base_iou <= 1.0)) {
    throw ValidationError("base_iou must be in [0, 1]");
  }
  for (int lvl : fusion_levels) {
    if (lvl < 1) throw ValidationError("fusion_levels entries must be >= 1");
  }
}

namespace {

void recompute_features(std::vector<Tracklet>& pool, const Sequence& seq) {
  for (Tracklet& t : pool) {
    if (t.members.empty()) continue;
    std::vector<double> sum(seq.feature_dim, 0.0);
    for (const auto& [frame, ord] : t.members) {
      const auto& feat = seq.frames.at(frame)[ord].feature;
      for (int k = 0; k < seq.feature_dim; ++k) sum[k] += feat[k];
    }
    const double inv = 1.0 / static_cast<double>(t.members.size());
    for (double& x : sum) x *= inv;
    t.feature = std::move(sum);
  }
}

void validate_strategy(const kfe::SegmentationStrategy& strategy, int ln) {
  if (ln == 0 && strategy.segments.empty()) return;
  if (strategy.segments.empty()) throw ValidationError("strategy has no segments");
  if (strategy.segments.front().first != 1 || strategy.segments.back().last != ln) {
    throw ValidationError("strategy does not tile [1, " + std::to_string(ln) + "]");
  }
  for (std::size_t i = 0; i + 1 < strategy.segments.size(); ++i) {
    if (strategy.segments[i + 1].first != strategy.segments[i].last + 1) {
      throw ValidationError("strategy segments are not contiguous");
    }
  }
}

int max_segment_length(const kfe::SegmentationStrategy& strategy) {
  int m = 1;
  for (const auto& s : strategy.segments) m = std::max(m, s.length());
  return m;
}

}  // namespace

TrackSet track_sequence(const Sequence& seq, const kfe::SegmentationStrategy& strategy,
                        const std::optional<iff::FusionConfig>& fusion,
                        const iff::GcnLayer* layer, const EdgeScorer& scorer,
                        const TrackConfig& cfg) {
  cfg.validate();
  validate_strategy(strategy, seq.length);

  Sequence work = seq;
  auto fusion_at = [&](int level) {
    return fusion.has_value() &&
           std::find(cfg.fusion_levels.begin(), cfg.fusion_levels.end(), level) !=
               cfg.fusion_levels.end();
  };
  if (fusion_at(1)) iff::fuse_sequence(work, *fusion, layer);

  std::vector<Tracklet> pool;
  for (const auto& seg : strategy.segments) {
    auto part = build_tracklets(work, seg, cfg.base_iou);
    for (Tracklet& t : part) {
      t.id = static_cast<int>(pool.size()) + 1;
      pool.push_back(std::move(t));
    }
  }

  const int base_window =
      cfg.base_window > 0 ? cfg.base_window : max_segment_length(strategy);
  for (int level = 1; level <= cfg.levels; ++level) {
    if (level > 1 && fusion_at(level)) {
      iff::fuse_sequence(work, *fusion, layer);
      recompute_features(pool, work);
    }
    const long long window = static_cast<long long>(base_window) << (level - 1);
    LevelGraph graph = build_level_graph(std::move(pool), level,
                                         static_cast<int>(std::min<long long>(window, 1 << 28)),
                                         cfg.max_candidates);
    if (graph.edges.empty()) {
      pool = std::move(graph.nodes);
      continue;
    }
    const std::vector<double> scores = score_edges(graph, scorer);
    pool = match_and_merge(graph, scores, cfg.merge_threshold);
  }

  std::sort(pool.begin(), pool.end(), [](const Tracklet& a, const Tracklet& b) {
    return a.first_frame != b.first_frame ? a.first_frame < b.first_frame : a.id < b.id;
  });
  TrackSet out;
  int next_id = 1;
  for (const Tracklet& t : pool) {
    auto& track = out.tracks[next_id++];
    for (const auto& [frame, ord] : t.members) {
      track.emplace_back(frame, seq.frames.at(frame)[ord].box);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct StdWeights {
  std::vector<EdgeScorer::LevelWeights> levels;
};

// Raw-space scorer -> standardized-feature space.
StdWeights to_standardized(const EdgeScorer& scorer, const Standardization& s) {
  StdWeights out;
  for (const auto& w : scorer.levels) {
    EdgeScorer::LevelWeights sw;
    sw.w_app = w.w_app * s.stddev[0];
    sw.w_gap = w.w_gap * s.stddev[1];
    sw.w_dist = w.w_dist * s.stddev[2];
    sw.w_iou = w.w_iou * s.stddev[3];
    sw.bias = w.bias + w.w_app * s.mean[0] + w.w_gap * s.mean[1] + w.w_dist * s.mean[2] +
              w.w_iou * s.mean[3];
    out.levels.push_back(sw);
  }
  return out;
}

EdgeScorer to_raw(const StdWeights& sw, const Standardization& s, int unfrozen_depth) {
  EdgeScorer out;
  out.unfrozen_depth = unfrozen_depth;
  for (const auto& w : sw.levels) {
    EdgeScorer::LevelWeights rw;
    rw.w_app = w.w_app / s.stddev[0];
    rw.w_gap = w.w_gap / s.stddev[1];
    rw.w_dist = w.w_dist / s.stddev[2];
    rw.w_iou = w.w_iou / s.stddev[3];
    rw.bias = w.bias - rw.w_app * s.mean[0] - rw.w_gap * s.mean[1] - rw.w_dist * s.mean[2] -
              rw.w_iou * s.mean[3];
    out.levels.push_back(rw);
  }
  return out;
}

Standardization standardize_features(const std::vector<std::array<double, 4>>& rows) {
  Standardization s;
  if (rows.empty()) return s;
  for (int k = 0; k < 4; ++k) {
    double mean = 0.0;
    for (const auto& r : rows) mean += r[k];
    mean /= static_cast<double>(rows.size());
    double var = 0.0;
    for (const auto& r : rows) var += (r[k] - mean) * (r[k] - mean);
    var /= static_cast<double>(rows.size());
    s.mean[k] = mean;
    s.stddev[k] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  return s;
}

std::array<double, 4> standardized_row(const EdgeFeature& f, const Standardization& s) {
  return {(f.appearance_sim - s.mean[0]) / s.stddev[0], (f.time_gap - s.mean[1]) / s.stddev[1],
          (f.center_dist - s.mean[2]) / s.stddev[2], (f.iou_pred - s.mean[3]) / s.stddev[3]};
}

}  // namespace

ScorerTrainResult train_edge_scorer(const std::vector<TrainingGraph>& levels,
                                    EdgeScorer scorer, const FocalLossConfig& loss_cfg,
                                    const TrainSchedule& schedule) {
  loss_cfg.validate();
  if (schedule.iterations < 0 || schedule.unfreeze_every < 1 || schedule.step <= 0.0) {
    throw ValidationError("bad training schedule");
  }
  std::size_t total_edges = 0;
  int max_level = 0;
  for (const auto& tg : levels) {
    if (tg.labels.size() != tg.graph.edges.size()) {
      throw DimensionError("labels count != edge count at level " +
                           std::to_string(tg.graph.level));
    }
    total_edges += tg.graph.edges.size();
    max_level = std::max(max_level, tg.graph.level);
  }
  if (total_edges == 0) throw ValidationError("training requires at least one labeled edge");
  if (max_level > static_cast<int>(scorer.levels.size())) {
    throw ValidationError("scorer has no weights for level " + std::to_string(max_level));
  }

  std::vector<std::array<double, 4>> rows;
  rows.reserve(total_edges);
  for (const auto& tg : levels) {
    for (const auto& e : tg.graph.edges) {
      rows.push_back({e.feat.appearance_sim, e.feat.time_gap, e.feat.center_dist,
                      e.feat.iou_pred});
    }
  }
  const Standardization std_consts = standardize_features(rows);
  StdWeights weights = to_standardized(scorer, std_consts);

  ScorerTrainResult result;
  int depth = 1;
  for (long long iter = 0; iter < schedule.iterations; ++iter) {
    depth = std::min<int>(max_level, 1 + static_cast<int>(iter / schedule.unfreeze_every));
    double loss = 0.0;
    std::vector<EdgeScorer::LevelWeights> grads(weights.levels.size());
    for (const auto& tg : levels) {
      if (tg.graph.level > depth || tg.graph.edges.empty()) continue;
      const auto& w = weights.levels[tg.graph.level - 1];
      auto& g = grads[tg.graph.level - 1];
      const double inv_e = 1.0 / static_cast<double>(tg.graph.edges.size());
      for (std::size_t k = 0; k < tg.graph.edges.size(); ++k) {
        const auto x = standardized_row(tg.graph.edges[k].feat, std_consts);
        const double z =
            w.w_app * x[0] + w.w_gap * x[1] + w.w_dist * x[2] + w.w_iou * x[3] + w.bias;
        const double p = clamp_prob(logistic(z));
        loss += focal_loss(p, tg.labels[k], loss_cfg) * inv_e;
        const double dz =
            focal_loss_dp(p, tg.labels[k], loss_cfg) * p * (1.0 - p) * inv_e;
        g.w_app += dz * x[0];
        g.w_gap += dz * x[1];
        g.w_dist += dz * x[2];
        g.w_iou += dz * x[3];
        g.bias += dz;
      }
    }
    for (int lvl = 1; lvl <= depth && lvl <= static_cast<int>(weights.levels.size()); ++lvl) {
      auto& w = weights.levels[lvl - 1];
      const auto& g = grads[lvl - 1];
      w.w_app -= schedule.step * g.w_app;
      w.w_gap -= schedule.step * g.w_gap;
      w.w_dist -= schedule.step * g.w_dist;
      w.w_iou -= schedule.step * g.w_iou;
      w.bias -= schedule.step * g.bias;
    }
    result.loss_history.push_back(loss);
  }
  result.scorer = to_raw(weights, std_consts, depth);
  return result;
}

// ---------------------------------------------------------------------------
// Joint batch + GCN-aware training

JointBatch build_joint_batch(const Sequence& seq, const kfe::SegmentationStrategy& strategy,
                             const TrackConfig& cfg) {
  cfg.validate();
  validate_strategy(strategy, seq.length);
  JointBatch batch;

  std::map<int, int> slot_of_frame;
  for (const auto& [frame, dets] : seq.frames) {
    if (dets.empty()) continue;
    slot_of_frame[frame] = static_cast<int>(batch.frame_features.size());
    Eigen::MatrixXd h(dets.size(), seq.feature_dim);
    for (std::size_t i = 0; i < dets.size(); ++i) {
      for (int k = 0; k < seq.feature_dim; ++k) h(i, k) = dets[i].feature[k];
    }
    batch.frame_features.push_back(std::move(h));
    batch.frame_graphs.push_back(iff::build_frame_graph(dets, 4));
  }

  std::vector<Tracklet> pool;
  for (const auto& seg : strategy.segments) {
    auto part = build_tracklets(seq, seg, cfg.base_iou);
    for (Tracklet& t : part) {
      t.id = static_cast<int>(pool.size()) + 1;
      pool.push_back(std::move(t));
    }
  }

  const int base_window =
      cfg.base_window > 0 ? cfg.base_window : max_segment_length(strategy);
  for (int level = 1; level <= cfg.levels; ++level) {
    const long long window = static_cast<long long>(base_window) << (level - 1);
    LevelGraph graph = build_level_graph(std::move(pool), level,
                                         static_cast<int>(std::min<long long>(window, 1 << 28)),
                                         cfg.max_candidates);
    const std::vector<int> labels = label_edges(graph);

    JointBatch::Level lv;
    for (const Tracklet& t : graph.nodes) {
      std::vector<std::pair<int, int>> refs;
      refs.reserve(t.members.size());
      for (const auto& [frame, ord] : t.members) refs.emplace_back(slot_of_frame.at(frame), ord);
      lv.members.push_back(std::move(refs));
    }
    for (std::size_t k = 0; k < graph.edges.size(); ++k) {
      const auto& e = graph.edges[k];
      lv.edges.push_back({e.from, e.to, e.feat.time_gap, e.feat.center_dist, e.feat.iou_pred,
                          labels[k]});
    }
    batch.levels.push_back(std::move(lv));

    // Ground-truth-consistent merge so the structure of deeper levels does
    // not depend on the scorer being trained.
    struct Cand {
      double gap;
      int from, to;
    };
    std::vector<Cand> cands;
    for (std::size_t k = 0; k < graph.edges.size(); ++k) {
      if (labels[k] == 1) {
        cands.push_back({graph.edges[k].feat.time_gap, graph.edges[k].from, graph.edges[k].to});
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      return a.gap != b.gap ? a.gap < b.gap
                            : (a.from != b.from ? a.from < b.from : a.to < b.to);
    });
    std::set<int> from_used, to_used;
    std::vector<std::pair<int, int>> accepted;
    for (const auto& c : cands) {
      if (from_used.count(c.from) || to_used.count(c.to)) continue;
      from_used.insert(c.from);
      to_used.insert(c.to);
      accepted.emplace_back(c.from, c.to);
    }
    pool = merge_accepted(graph.nodes, accepted);
  }
  return batch;
}

namespace {

// Fused (or raw) feature matrices for the current GCN weights.
std::vector<Eigen::MatrixXd> forward_features(const JointBatch& batch,
                                              const iff::FusionConfig* fusion,
                                              const iff::GcnLayer* layer) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(batch.frame_features.size());
  for (std::size_t s = 0; s < batch.frame_features.size(); ++s) {
    if (fusion && layer && fusion->mode == iff::FusionMode::kGcn) {
      out.push_back(iff::gcn_fusion(batch.frame_features[s], batch.frame_graphs[s], *layer,
                                    *fusion));
    } else {
      out.push_back(batch.frame_features[s]);
    }
  }
  return out;
}

Eigen::VectorXd tracklet_feature(const std::vector<Eigen::MatrixXd>& feats,
                                 const std::vector<std::pair<int, int>>& members) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(feats.front().cols());
  for (const auto& [slot, row] : members) sum += feats[slot].row(row).transpose();
  return sum / static_cast<double>(members.size());
}

struct EdgeForward {
  double p = 0.0;
  double cos = 0.0;
  std::array<double, 4> x{};
};

EdgeForward edge_forward(const JointBatch::Edge& e, const Eigen::VectorXd& fu,
                         const Eigen::VectorXd& fv, const EdgeScorer::LevelWeights& w,
                         const Standardization& s) {
  EdgeForward out;
  const double nu = fu.norm(), nv = fv.norm();
  out.cos = (nu == 0.0 || nv == 0.0) ? 0.0 : fu.dot(fv) / (nu * nv);
  EdgeFeature f;
  f.appearance_sim = out.cos;
  f.time_gap = e.time_gap;
  f.center_dist = e.center_dist;
  f.iou_pred = e.iou_pred;
  out.x = standardized_row(f, s);
  const double z =
      w.w_app * out.x[0] + w.w_gap * out.x[1] + w.w_dist * out.x[2] + w.w_iou * out.x[3] + w.bias;
  out.p = clamp_prob(logistic(z));
  return out;
}

}  // namespace

Standardization standardize_batch(const JointBatch& batch, const iff::FusionConfig* fusion,
                                  const iff::GcnLayer* layer) {
  const auto feats = forward_features(batch, fusion, layer);
  std::vector<std::array<double, 4>> rows;
  for (const auto& lv : batch.levels) {
    for (const auto& e : lv.edges) {
      const Eigen::VectorXd fu = tracklet_feature(feats, lv.members[e.from]);
      const Eigen::VectorXd fv = tracklet_feature(feats, lv.members[e.to]);
      const double nu = fu.norm(), nv = fv.norm();
      const double cos = (nu == 0.0 || nv == 0.0) ? 0.0 : fu.dot(fv) / (nu * nv);
      rows.push_back({cos, e.time_gap, e.center_dist, e.iou_pred});
    }
  }
  return standardize_features(rows);
}

double joint_loss(const JointBatch& batch, const EdgeScorer& scorer,
                  const iff::FusionConfig* fusion, const iff::GcnLayer* layer,
                  const FocalLossConfig& loss_cfg, int unfrozen_depth,
                  const Standardization& std_consts) {
  const auto feats = forward_features(batch, fusion, layer);
  const StdWeights weights = to_standardized(scorer, std_consts);
  double loss = 0.0;
  for (std::size_t li = 0; li < batch.levels.size(); ++li) {
    const int level = static_cast<int>(li) + 1;
    if (level > unfrozen_depth) break;
    const auto& lv = batch.levels[li];
    if (lv.edges.empty()) continue;
    if (level > static_cast<int>(weights.levels.size())) {
      throw ValidationError("no scorer weights for level " + std::to_string(level));
    }
    const auto& w = weights.levels[li];
    const double inv_e = 1.0 / static_cast<double>(lv.edges.size());
    for (const auto& e : lv.edges) {
      const Eigen::VectorXd fu = tracklet_feature(feats, lv.members[e.from]);
      const Eigen::VectorXd fv = tracklet_feature(feats, lv.members[e.to]);
      const EdgeForward fw = edge_forward(e, fu, fv, w, std_consts);
      loss += focal_loss(fw.p, e.label, loss_cfg) * inv_e;
    }
  }
  return loss;
}

JointGradients joint_loss_and_gradients(const JointBatch& batch, const EdgeScorer& scorer,
                                        const iff::FusionConfig* fusion,
                                        const iff::GcnLayer* layer,
                                        const FocalLossConfig& loss_cfg, int unfrozen_depth,
                                        const Standardization& std_consts) {
  const auto feats = forward_features(batch, fusion, layer);
  const StdWeights weights = to_standardized(scorer, std_consts);
  const bool gcn_active = fusion && layer && fusion->mode == iff::FusionMode::kGcn;

  JointGradients out;
  out.grad_levels.assign(scorer.levels.size(), {});
  std::vector<Eigen::MatrixXd> upstream;
  if (gcn_active) {
    upstream.reserve(batch.frame_features.size());
    for (const auto& h : batch.frame_features) {
      upstream.push_back(Eigen::MatrixXd::Zero(h.rows(), h.cols()));
    }
  }

  for (std::size_t li = 0; li < batch.levels.size(); ++li) {
    const int level = static_cast<int>(li) + 1;
    if (level > unfrozen_depth) break;
    const auto& lv = batch.levels[li];
    if (lv.edges.empty()) continue;
    if (level > static_cast<int>(weights.levels.size())) {
      throw ValidationError("no scorer weights for level " + std::to_string(level));
    }
    const auto& w = weights.levels[li];
    auto& grad_std = out.grad_levels[li];
    const double inv_e = 1.0 / static_cast<double>(lv.edges.size());
    for (const auto& e : lv.edges) {
      const Eigen::VectorXd fu = tracklet_feature(feats, lv.members[e.from]);
      const Eigen::VectorXd fv = tracklet_feature(feats, lv.members[e.to]);
      const EdgeForward fw = edge_forward(e, fu, fv, w, std_consts);
      out.loss += focal_loss(fw.p, e.label, loss_cfg) * inv_e;
      const double dz = focal_loss_dp(fw.p, e.label, loss_cfg) * fw.p * (1.0 - fw.p) * inv_e;
      grad_std.w_app += dz * fw.x[0];
      grad_std.w_gap += dz * fw.x[1];
      grad_std.w_dist += dz * fw.x[2];
      grad_std.w_iou += dz * fw.x[3];
      grad_std.bias += dz;

      if (!gcn_active) continue;
      const double nu = fu.norm(), nv = fv.norm();
      if (nu == 0.0 || nv == 0.0) continue;
      // d loss / d cos, through the appearance standardization.
      const double dcos = dz * w.w_app / std_consts.stddev[0];
      const Eigen::VectorXd dfu = dcos * (fv / (nu * nv) - fw.cos * fu / (nu * nu));
      const Eigen::VectorXd dfv = dcos * (fu / (nu * nv) - fw.cos * fv / (nv * nv));
      const double inv_mu = 1.0 / static_cast<double>(lv.members[e.from].size());
      for (const auto& [slot, row] : lv.members[e.from]) {
        upstream[slot].row(row) += (dfu * inv_mu).transpose();
      }
      const double inv_mv = 1.0 / static_cast<double>(lv.members[e.to].size());
      for (const auto& [slot, row] : lv.members[e.to]) {
        upstream[slot].row(row) += (dfv * inv_mv).transpose();
      }
    }
  }

  // z is linear in the raw weights through the same affine map, so pushing
  // the standardized-space grads through it gives the raw-space grads.
  out.grad_levels_std = out.grad_levels;
  for (std::size_t li = 0; li < out.grad_levels.size(); ++li) {
    const EdgeScorer::LevelWeights g = out.grad_levels_std[li];
    EdgeScorer::LevelWeights raw;
    raw.w_app = g.w_app * std_consts.stddev[0] + g.bias * std_consts.mean[0];
    raw.w_gap = g.w_gap * std_consts.stddev[1] + g.bias * std_consts.mean[1];
    raw.w_dist = g.w_dist * std_consts.stddev[2] + g.bias * std_consts.mean[2];
    raw.w_iou = g.w_iou * std_consts.stddev[3] + g.bias * std_consts.mean[3];
    raw.bias = g.bias;
    out.grad_levels[li] = raw;
  }

  if (gcn_active) {
    const int dim = static_cast<int>(batch.frame_features.front().cols());
    out.grad_gcn = Eigen::MatrixXd::Zero(dim, dim);
    for (std::size_t s = 0; s < batch.frame_features.size(); ++s) {
      if (upstream[s].isZero(0.0)) continue;
      const iff::GcnGradients g = iff::gcn_gradients(batch.frame_features[s],
                                                     batch.frame_graphs[s], *layer, *fusion,
                                                     upstream[s]);
      out.grad_gcn += g.grad_weights;
    }
  }
  return out;
}

JointTrainResult train_joint(const JointBatch& batch, EdgeScorer scorer, iff::GcnLayer layer,
                             const iff::FusionConfig& fusion, const FocalLossConfig& loss_cfg,
                             const TrainSchedule& schedule) {
  loss_cfg.validate();
  if (schedule.iterations < 0 || schedule.unfreeze_every < 1 || schedule.step <= 0.0) {
    throw ValidationError("bad training schedule");
  }
  std::size_t total_edges = 0;
  for (const auto& lv : batch.levels) total_edges += lv.edges.size();
  if (total_edges == 0) throw ValidationError("training requires at least one labeled edge");

  const int max_level = static_cast<int>(batch.levels.size());
  const Standardization std_consts = standardize_batch(batch, &fusion, &layer);

  JointTrainResult result;
  result.scorer = std::move(scorer);
  result.layer = std::move(layer);
  // Descend in the standardized parametrization; the raw scorer is the
  // exact affine image of it after every step.
  StdWeights std_w = to_standardized(result.scorer, std_consts);
  int depth = 1;
  for (long long iter = 0; iter < schedule.iterations; ++iter) {
    depth = std::min<int>(max_level, 1 + static_cast<int>(iter / schedule.unfreeze_every));
    const JointGradients g = joint_loss_and_gradients(batch, result.scorer, &fusion,
                                                      &result.layer, loss_cfg, depth,
                                                      std_consts);
    for (int lvl = 1; lvl <= depth && lvl <= static_cast<int>(std_w.levels.size()); ++lvl) {
      auto& w = std_w.levels[lvl - 1];
      const auto& gw = g.grad_levels_std[lvl - 1];
      w.w_app -= schedule.step * gw.w_app;
      w.w_gap -= schedule.step * gw.w_gap;
      w.w_dist -= schedule.step * gw.w_dist;
      w.w_iou -= schedule.step * gw.w_iou;
      w.bias -= schedule.step * gw.bias;
    }
    if (g.grad_gcn.size() > 0) {
      result.layer.weights -= schedule.step * g.grad_gcn;
    }
    result.scorer = to_raw(std_w, std_consts, depth);
    result.loss_history.push_back(g.loss);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Scorer files

std::string write_scorer(const EdgeScorer& scorer) {
  std::string out;
  for (std::size_t i = 0; i < scorer.levels.size(); ++i) {
    const auto& w = scorer.levels[i];
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", i + 1, w.w_app,
                  w.w_gap, w.w_dist, w.w_iou, w.bias);
    out += buf;
  }
  return out;
}

EdgeScorer parse_scorer(const std::string& text) {
  EdgeScorer scorer;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  std::map<int, EdgeScorer::LevelWeights> by_level;
  while (std::getline(in, line)) {
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    int level = 0;
    EdgeScorer::LevelWeights w;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf", &level, &w.w_app, &w.w_gap,
                    &w.w_dist, &w.w_iou, &w.bias) != 6) {
      throw ParseError("line " + std::to_string(line_no) +
                       ": expected 'level,w_app,w_gap,w_dist,w_iou,bias'");
    }
    if (level < 1) throw ValidationError("scorer level must be >= 1");
    if (by_level.count(level)) {
      throw ValidationError("duplicate scorer weights for level " + std::to_string(level));
    }
    by_level[level] = w;
  }
  if (by_level.empty()) throw ParseError("scorer file has no weight lines");
  const int max_level = by_level.rbegin()->first;
  scorer.levels.resize(max_level);
  for (int lvl = 1; lvl <= max_level; ++lvl) {
    auto it = by_level.find(lvl);
    if (it == by_level.end()) {
      throw ValidationError("scorer file missing level " + std::to_string(lvl));
    }
    scorer.levels[lvl - 1] = it->second;
  }
  return scorer;
}

}  // namespace kfmot::assoc
