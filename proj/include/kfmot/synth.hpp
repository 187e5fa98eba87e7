#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "kfmot/types.hpp"

namespace kfmot::synth {

enum class Kind { kOcclusion, kLookalike, kCrossing, kRandomWalk };

Kind kind_from_string(const std::string& s);
std::string kind_to_string(Kind k);

/// Frames [start, start + length - 1] where `object` is invisible.
struct OcclusionGap {
  int object = 0;  // 1-based, equal to the gt track id
  int start = 0;
  int length = 0;
};

struct ScenarioConfig {
  Kind kind = Kind::kRandomWalk;
  int num_objects = 1;
  int length = 60;       // LN
  int feature_dim = 16;  // D
  std::vector<OcclusionGap> gaps;  // auto-derived when empty (occlusion/lookalike kinds)
  std::vector<std::pair<int, int>> lookalike_pairs;  // 1-based ids sharing a base feature
  double feature_noise = 0.0;  // sigma_f
  double box_noise = 0.0;      // sigma_b
  double miss_rate = 0.0;      // missed-detection probability
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthOutput {
  TrackSet gt;
  Sequence detections;  // det_id carries the gt identity for training labels
  ScenarioConfig scenario;
};

/// Build a seeded scenario: linear motion with jitter on a 1920x1080 canvas
/// (reflecting at the borders), occlusion gaps cut from both gt and
/// detections, unit base features per object (shared within lookalike
/// pairs). Deterministic given cfg.seed.
SynthOutput generate(const ScenarioConfig& cfg);

/// Detections from a ground-truth TrackSet under the configured noise:
/// boxes jittered by box_noise, features from seeded per-track unit base
/// vectors jittered by feature_noise and re-normalized, boxes dropped with
/// miss_rate.
Sequence degrade(const TrackSet& gt, const ScenarioConfig& cfg, std::uint64_t seed);

}  // namespace kfmot::synth
