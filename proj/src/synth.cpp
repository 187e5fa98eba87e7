#include "kfmot/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "kfmot/rng.hpp"

namespace kfmot::synth {

namespace {

constexpr double kCanvasW = 1920.0;
constexpr double kCanvasH = 1080.0;

std::vector<double> random_unit_vector(int dim, Rng& rng) {
  std::vector<double> v(dim);
  double norm_sq = 0.0;
  do {
    norm_sq = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm_sq += x * x;
    }
  } while (norm_sq == 0.0);
  const double inv = 1.0 / std::sqrt(norm_sq);
  for (double& x : v) x *= inv;
  return v;
}

void renormalize(std::vector<double>& v) {
  double norm_sq = 0.0;
  for (double x : v) norm_sq += x * x;
  if (norm_sq > 0.0) {
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (double& x : v) x *= inv;
  }
}

struct ObjectInit {
  double x, y, w, h, vx, vy;
};

// Base features per track id, honoring lookalike sharing. Draw order is
// fixed (ascending id) so generate() and degrade() agree.
std::map<int, std::vector<double>> base_features(const ScenarioConfig& cfg, Rng& rng,
                                                 const std::vector<int>& ids) {
  std::map<int, int> share;  // id -> smaller paired id
  for (const auto& [a, b] : cfg.lookalike_pairs) {
    share[std::max(a, b)] = std::min(a, b);
  }
  std::map<int, std::vector<double>> out;
  for (int id : ids) {
    auto it = share.find(id);
    if (it != share.end() && out.count(it->second)) {
      out[id] = out[it->second];
    } else {
      out[id] = random_unit_vector(cfg.feature_dim, rng);
    }
  }
  return out;
}

}  // namespace

Kind kind_from_string(const std::string& s) {
  if (s == "occlusion") return Kind::kOcclusion;
  if (s == "lookalike") return Kind::kLookalike;
  if (s == "crossing") return Kind::kCrossing;
  if (s == "random_walk") return Kind::kRandomWalk;
  throw ValidationError("unknown scenario kind: " + s);
}

std::string kind_to_string(Kind k) {
  switch (k) {
    case Kind::kOcclusion: return "occlusion";
    case Kind::kLookalike: return "lookalike";
    case Kind::kCrossing: return "crossing";
    case Kind::kRandomWalk: return "random_walk";
  }
  return "?";
}

void ScenarioConfig::validate() const {
  if (num_objects < 1) throw ValidationError("num_objects must be >= 1");
  if (length < 1) throw ValidationError("length must be >= 1");
  if (feature_dim < 1) throw ValidationError("feature_dim must be >= 1");
  if (!(feature_noise >= 0.0) || !(box_noise >= 0.0)) {
    throw ValidationError("noise sigmas must be non-negative");
  }
  if (!(miss_rate >= 0.0 && miss_rate < 1.0)) {
    throw ValidationError("miss_rate must be in [0, 1)");
  }
  for (const auto& g : gaps) {
    if (g.object < 1 || g.object > num_objects) {
      throw ValidationError("gap object " + std::to_string(g.object) + " out of range");
    }
    if (g.length < 1 || g.start < 1 || g.start + g.length - 1 > length) {
      throw ValidationError("gap [" + std::to_string(g.start) + ", " +
                            std::to_string(g.start + g.length - 1) +
                            "] outside [1, " + std::to_string(length) + "]");
    }
  }
  for (const auto& [a, b] : lookalike_pairs) {
    if (a < 1 || a > num_objects || b < 1 || b > num_objects || a == b) {
      throw ValidationError("bad lookalike pair (" + std::to_string(a) + ", " +
                            std::to_string(b) + ")");
    }
  }
}

SynthOutput generate(const ScenarioConfig& cfg_in) {
  ScenarioConfig cfg = cfg_in;
  cfg.validate();
  Rng rng(cfg.seed);
  const int n = cfg.num_objects;
  const int ln = cfg.length;

  // Fill in kind defaults before any stochastic draws that depend on them.
  if (cfg.kind == Kind::kLookalike && cfg.lookalike_pairs.empty() && n >= 2) {
    cfg.lookalike_pairs.emplace_back(1, 2);
  }

  double vel_jitter = 0.0;
  std::vector<ObjectInit> init(n);
  switch (cfg.kind) {
    case Kind::kOcclusion: {
      // Spread objects horizontally, slow drift.
      for (int i = 0; i < n; ++i) {
        const double lane = n == 1 ? 0.5 : static_cast<double>(i) / (n - 1);
        init[i] = {200.0 + lane * 1500.0, rng.uniform(200.0, 880.0),
                   rng.uniform(45.0, 75.0), rng.uniform(90.0, 150.0),
                   rng.uniform(-4.0, 4.0), rng.uniform(-3.0, 3.0)};
      }
      if (cfg.gaps.empty()) {
        for (int i = 0; i < n; ++i) {
          if (ln < 12) break;
          const int len1 = rng.uniform_int(2, 5);
          const int s1 = rng.uniform_int(std::max(2, ln / 5), std::max(2, 2 * ln / 5));
          cfg.gaps.push_back({i + 1, s1, std::min(len1, ln - s1)});
          const int len2 = rng.uniform_int(2, 5);
          const int s2 = rng.uniform_int(std::max(2, 3 * ln / 5), std::max(2, 4 * ln / 5));
          cfg.gaps.push_back({i + 1, s2, std::min(len2, ln - s2)});
        }
      }
      break;
    }
    case Kind::kLookalike: {
      // Pair members travel in parallel lanes with a companion outside each
      // lane; velocity jitter makes gap extrapolation unreliable so
      // appearance has to break the tie.
      vel_jitter = 2.0;
      const double vx = 6.0;
      for (int i = 0; i < n; ++i) {
        double y = 0.0;
        switch (i) {
          case 0: y = 430.0; break;
          case 1: y = 620.0; break;
          case 2: y = 320.0; break;  // companion of object 1
          case 3: y = 730.0; break;  // companion of object 2
          default: y = rng.uniform(150.0, 930.0);
        }
        init[i] = {260.0 + (i > 3 ? rng.uniform(-80.0, 80.0) : 0.0), y,
                   60.0, 120.0, vx, 0.0};
      }
      if (cfg.gaps.empty() && ln >= 16) {
        const int len1 = rng.uniform_int(3, 5);
        const int s1 = std::max(2, 2 * ln / 5);
        const int len2 = rng.uniform_int(3, 5);
        const int s2 = std::max(2, 7 * ln / 10);
        for (const auto& [a, b] : cfg.lookalike_pairs) {
          cfg.gaps.push_back({a, s1, std::min(len1, ln - s1)});
          cfg.gaps.push_back({b, s1, std::min(len1, ln - s1)});
          cfg.gaps.push_back({a, s2, std::min(len2, ln - s2)});
          cfg.gaps.push_back({b, s2, std::min(len2, ln - s2)});
        }
      }
      break;
    }
    case Kind::kCrossing: {
      for (int i = 0; i < n; ++i) {
        if (i == 0) {
          init[i] = {200.0, 500.0, 60.0, 120.0, 8.0, 0.0};
        } else if (i == 1) {
          init[i] = {1720.0, 520.0, 60.0, 120.0, -8.0, 0.0};
        } else {
          init[i] = {rng.uniform(150.0, 1770.0), rng.uniform(150.0, 930.0),
                     rng.uniform(45.0, 75.0), rng.uniform(90.0, 150.0),
                     rng.uniform(-6.0, 6.0), rng.uniform(-4.0, 4.0)};
        }
      }
      break;
    }
    case Kind::kRandomWalk: {
      vel_jitter = 2.5;
      for (int i = 0; i < n; ++i) {
        init[i] = {rng.uniform(150.0, 1770.0), rng.uniform(150.0, 930.0),
                   rng.uniform(45.0, 75.0), rng.uniform(90.0, 150.0),
                   rng.uniform(-6.0, 6.0), rng.uniform(-4.0, 4.0)};
      }
      break;
    }
  }

  // Occluded frame lookup.
  std::set<std::pair<int, int>> hidden;  // (track id, frame)
  for (const auto& g : cfg.gaps) {
    for (int f = g.start; f < g.start + g.length; ++f) hidden.insert({g.object, f});
  }

  SynthOutput out;
  out.scenario = cfg;
  std::vector<ObjectInit> state = init;
  for (int f = 1; f <= ln; ++f) {
    for (int i = 0; i < n; ++i) {
      ObjectInit& s = state[i];
      if (f > 1) {
        if (vel_jitter > 0.0) {
          s.vx += rng.uniform(-vel_jitter, vel_jitter);
          s.vy += rng.uniform(-vel_jitter, vel_jitter);
        }
        s.x += s.vx;
        s.y += s.vy;
        if (s.x < s.w / 2 || s.x > kCanvasW - s.w / 2) {
          s.vx = -s.vx;
          s.x = std::clamp(s.x, s.w / 2, kCanvasW - s.w / 2);
        }
        if (s.y < s.h / 2 || s.y > kCanvasH - s.h / 2) {
          s.vy = -s.vy;
          s.y = std::clamp(s.y, s.h / 2, kCanvasH - s.h / 2);
        }
      }
      if (hidden.count({i + 1, f})) continue;
      out.gt.tracks[i + 1].emplace_back(f, Box{s.x - s.w / 2, s.y - s.h / 2, s.w, s.h});
    }
  }

  out.detections = degrade(out.gt, cfg, cfg.seed + 1);
  return out;
}

Sequence degrade(const TrackSet& gt, const ScenarioConfig& cfg, std::uint64_t seed) {
  if (!(cfg.miss_rate >= 0.0 && cfg.miss_rate < 1.0)) {
    throw ValidationError("miss_rate must be in [0, 1)");
  }
  Rng rng(seed);
  std::vector<int> ids;
  for (const auto& [id, t] : gt.tracks) ids.push_back(id);
  const auto bases = base_features(cfg, rng, ids);

  // Frame-major traversal in (frame, id) order keeps ordinals stable.
  std::map<int, std::vector<std::pair<int, const Box*>>> frames;
  int max_frame = 0;
  for (const auto& [id, entries] : gt.tracks) {
    for (const auto& [frame, box] : entries) {
      frames[frame].emplace_back(id, &box);
      max_frame = std::max(max_frame, frame);
    }
  }

  Sequence seq;
  seq.length = std::max(max_frame, cfg.length);
  seq.feature_dim = cfg.feature_dim;
  for (auto& [frame, dets] : frames) {
    std::sort(dets.begin(), dets.end());
    for (const auto& [id, box] : dets) {
      if (cfg.miss_rate > 0.0 && rng.uniform() < cfg.miss_rate) continue;
      Detection d;
      d.frame = frame;
      d.det_id = id;
      d.box = *box;
      if (cfg.box_noise > 0.0) {
        d.box.left += rng.normal(0.0, cfg.box_noise);
        d.box.top += rng.normal(0.0, cfg.box_noise);
        d.box.width = std::max(4.0, d.box.width + rng.normal(0.0, cfg.box_noise));
        d.box.height = std::max(4.0, d.box.height + rng.normal(0.0, cfg.box_noise));
      }
      d.feature = bases.at(id);
      if (cfg.feature_noise > 0.0) {
        for (double& x : d.feature) x += rng.normal(0.0, cfg.feature_noise);
        renormalize(d.feature);
      }
      seq.frames[frame].push_back(std::move(d));
    }
  }
  return seq;
}

}  // namespace kfmot::synth
