#include <doctest.h>

#include <cmath>
#include <set>

#include "kfmot/data_io.hpp"
#include "kfmot/kfe.hpp"
#include "kfmot/synth.hpp"

using namespace kfmot;
using namespace kfmot::synth;

TEST_CASE("occlusion gaps cut frames from gt and detections") {
  ScenarioConfig cfg;
  cfg.kind = Kind::kOcclusion;
  cfg.num_objects = 1;
  cfg.length = 10;
  cfg.gaps = {{1, 4, 3}};
  cfg.seed = 5;
  const SynthOutput out = generate(cfg);

  REQUIRE(out.gt.tracks.count(1) == 1);
  std::set<int> gt_frames;
  for (const auto& [frame, box] : out.gt.tracks.at(1)) gt_frames.insert(frame);
  CHECK(gt_frames == std::set<int>{1, 2, 3, 7, 8, 9, 10});
  for (int f = 4; f <= 6; ++f) CHECK(out.detections.frames.count(f) == 0);
  CHECK(out.detections.frames.count(3) == 1);
  CHECK(out.detections.frames.count(7) == 1);
}

TEST_CASE("lookalike pairs share the base feature exactly at zero noise") {
  ScenarioConfig cfg;
  cfg.kind = Kind::kLookalike;
  cfg.num_objects = 4;
  cfg.length = 20;
  cfg.lookalike_pairs = {{1, 2}};
  cfg.seed = 9;
  const SynthOutput out = generate(cfg);

  const auto& frame1 = out.detections.frames.at(1);
  REQUIRE(frame1.size() == 4);
  // Detections are ordered by object id within a frame.
  CHECK(frame1[0].det_id == 1);
  CHECK(frame1[1].det_id == 2);
  CHECK(frame1[0].feature == frame1[1].feature);
  CHECK(kfe::cosine_similarity(frame1[0].feature, frame1[1].feature) ==
        doctest::Approx(1.0));
  // Non-paired objects carry distinct features.
  CHECK(kfe::cosine_similarity(frame1[0].feature, frame1[2].feature) < 0.95);
}

TEST_CASE("generate is deterministic under a fixed seed") {
  ScenarioConfig cfg;
  cfg.kind = Kind::kRandomWalk;
  cfg.num_objects = 4;
  cfg.length = 30;
  cfg.feature_noise = 0.1;
  cfg.box_noise = 1.5;
  cfg.miss_rate = 0.1;
  cfg.seed = 31337;
  const SynthOutput a = generate(cfg);
  const SynthOutput b = generate(cfg);
  CHECK(io::write_detections(a.detections) == io::write_detections(b.detections));
  CHECK(io::write_ground_truth(a.gt) == io::write_ground_truth(b.gt));
  CHECK(io::write_features(a.detections) == io::write_features(b.detections));
}

TEST_CASE("degrade with zero noise mirrors the ground truth") {
  ScenarioConfig cfg;
  cfg.kind = Kind::kOcclusion;
  cfg.num_objects = 2;
  cfg.length = 12;
  cfg.seed = 3;
  const SynthOutput out = generate(cfg);

  const Sequence again = degrade(out.gt, cfg, 12345);
  CHECK(again.total_detections() == out.gt.total_boxes());
  for (const auto& [frame, dets] : again.frames) {
    for (const auto& d : dets) {
      bool found = false;
      for (const auto& [f, box] : out.gt.tracks.at(d.det_id)) {
        if (f == frame && box == d.box) found = true;
      }
      CHECK(found);
    }
  }
}

TEST_CASE("drop rate stays within the binomial band") {
  TrackSet gt;
  for (int f = 1; f <= 1000; ++f) gt.tracks[1].emplace_back(f, Box{100, 100, 30, 60});
  ScenarioConfig cfg;
  cfg.num_objects = 1;
  cfg.length = 1000;
  cfg.miss_rate = 0.5;
  const Sequence degraded = degrade(gt, cfg, 777);
  const double retained = static_cast<double>(degraded.total_detections());
  const double sigma = std::sqrt(1000 * 0.5 * 0.5);
  CHECK(std::abs(retained - 500.0) <= 3.0 * sigma);
}

TEST_CASE("boxes stay positive under heavy jitter") {
  ScenarioConfig cfg;
  cfg.kind = Kind::kRandomWalk;
  cfg.num_objects = 3;
  cfg.length = 40;
  cfg.box_noise = 30.0;
  cfg.seed = 8;
  const SynthOutput out = generate(cfg);
  for (const auto& [frame, dets] : out.detections.frames) {
    for (const auto& d : dets) {
      CHECK(d.box.width > 0.0);
      CHECK(d.box.height > 0.0);
    }
  }
}

TEST_CASE("feature jitter keeps unit norm") {
  ScenarioConfig cfg;
  cfg.kind = Kind::kRandomWalk;
  cfg.num_objects = 2;
  cfg.length = 10;
  cfg.feature_noise = 0.3;
  cfg.seed = 44;
  const SynthOutput out = generate(cfg);
  for (const auto& [frame, dets] : out.detections.frames) {
    for (const auto& d : dets) {
      double norm = 0.0;
      for (double x : d.feature) norm += x * x;
      CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("gap validation") {
  ScenarioConfig cfg;
  cfg.num_objects = 1;
  cfg.length = 10;
  cfg.gaps = {{1, 9, 5}};
  CHECK_THROWS_AS(generate(cfg), ValidationError);
  cfg.gaps = {{2, 2, 2}};
  CHECK_THROWS_AS(generate(cfg), ValidationError);
}
