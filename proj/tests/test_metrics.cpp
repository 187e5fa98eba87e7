#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "kfmot/metrics.hpp"
#include "kfmot/rng.hpp"

using namespace kfmot;
using namespace kfmot::metrics;

namespace {

// One gt track over 4 frames; predictions split 2+2 with perfect boxes.
TrackSet split_gt() {
  TrackSet gt;
  for (int f = 1; f <= 4; ++f) gt.tracks[1].emplace_back(f, Box{10.0 * f, 20, 30, 60});
  return gt;
}

TrackSet split_preds() {
  TrackSet p;
  p.tracks[7] = {{1, Box{10, 20, 30, 60}}, {2, Box{20, 20, 30, 60}}};
  p.tracks[8] = {{3, Box{30, 20, 30, 60}}, {4, Box{40, 20, 30, 60}}};
  return p;
}

TrackSet random_trackset(Rng& rng, int num_tracks, int frames) {
  TrackSet t;
  for (int id = 1; id <= num_tracks; ++id) {
    const int start = rng.uniform_int(1, 3);
    const int len = rng.uniform_int(1, frames - start + 1);
    double x = rng.uniform(0, 800), y = rng.uniform(0, 600);
    for (int f = start; f < start + len; ++f) {
      t.tracks[id].emplace_back(f, Box{x, y, 40, 80});
      x += rng.uniform(-5, 5);
      y += rng.uniform(-5, 5);
    }
  }
  return t;
}

bool reports_equal(const MetricReport& a, const MetricReport& b) {
  auto eq = [](const std::optional<double>& x, const std::optional<double>& y) {
    if (x.has_value() != y.has_value()) return false;
    return !x.has_value() || std::abs(*x - *y) <= 1e-12;
  };
  return eq(a.hota, b.hota) && eq(a.deta, b.deta) && eq(a.assa, b.assa) &&
         eq(a.idf1, b.idf1) && eq(a.mota, b.mota) && a.ids == b.ids && a.fp == b.fp &&
         a.fn == b.fn;
}

}  // namespace

TEST_CASE("iou") {
  CHECK(iou({0, 0, 2, 2}, {0, 0, 2, 2}) == doctest::Approx(1.0));
  CHECK(iou({0, 0, 2, 2}, {5, 5, 2, 2}) == doctest::Approx(0.0));
  CHECK(iou({0, 0, 2, 2}, {1, 0, 2, 2}) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("match_frame") {
  SUBCASE("perfect overlap matches everything") {
    const std::vector<Box> boxes = {{0, 0, 10, 10}, {50, 50, 10, 10}};
    const FrameMatch m = match_frame(boxes, boxes, 0.5);
    CHECK(m.matches.size() == 2);
    CHECK(m.unmatched_preds.empty());
    CHECK(m.unmatched_gts.empty());
  }
  SUBCASE("pred without gt is a false positive") {
    const FrameMatch m = match_frame({{0, 0, 10, 10}}, {}, 0.5);
    CHECK(m.matches.empty());
    CHECK(m.unmatched_preds == std::vector<int>{0});
  }
  SUBCASE("two preds on one gt: higher IoU wins") {
    const Box gt{0, 0, 10, 10};
    const Box close{0.5, 0, 10, 10};  // IoU ~ 0.905
    const Box far{2.5, 0, 10, 10};    // IoU = 0.6
    const FrameMatch m = match_frame({close, far}, {gt}, 0.5);
    REQUIRE(m.matches.size() == 1);
    CHECK(m.matches[0] == std::pair<int, int>{0, 0});
    CHECK(m.unmatched_preds == std::vector<int>{1});
  }
}

TEST_CASE("compute_mota") {
  SUBCASE("perfect predictions") {
    const TrackSet gt = split_gt();
    const MotaResult r = compute_mota(gt, gt);
    CHECK(r.mota == doctest::Approx(1.0));
    CHECK(r.ids == 0);
    CHECK(r.fp == 0);
    CHECK(r.fn == 0);
  }
  SUBCASE("2+2 split counts one switch") {
    const MotaResult r = compute_mota(split_preds(), split_gt());
    CHECK(r.fp == 0);
    CHECK(r.fn == 0);
    CHECK(r.ids == 1);
    CHECK(r.mota == doctest::Approx(0.75));
  }
  SUBCASE("no predictions") {
    const MotaResult r = compute_mota(TrackSet{}, split_gt());
    CHECK(r.mota == doctest::Approx(0.0));
    CHECK(r.fn == 4);
  }
  SUBCASE("empty ground truth reports an absent value") {
    const MotaResult r = compute_mota(split_preds(), TrackSet{});
    CHECK_FALSE(r.mota.has_value());
    CHECK(r.fp == 4);
  }
}

TEST_CASE("compute_idf1") {
  SUBCASE("perfect predictions") {
    const Idf1Result r = compute_idf1(split_gt(), split_gt());
    CHECK(r.idf1 == doctest::Approx(1.0));
  }
  SUBCASE("2+2 split halves IDF1") {
    const Idf1Result r = compute_idf1(split_preds(), split_gt());
    CHECK(r.idtp == 2);
    CHECK(r.idfp == 2);
    CHECK(r.idfn == 2);
    CHECK(r.idf1 == doctest::Approx(0.5));
  }
  SUBCASE("no predictions") {
    const Idf1Result r = compute_idf1(TrackSet{}, split_gt());
    CHECK(r.idf1 == doctest::Approx(0.0));
  }
}

TEST_CASE("compute_hota") {
  SUBCASE("perfect predictions give the all-ones report") {
    const MetricReport r = compute_hota(split_gt(), split_gt());
    CHECK(r.hota == doctest::Approx(1.0));
    CHECK(r.deta == doctest::Approx(1.0));
    CHECK(r.assa == doctest::Approx(1.0));
  }
  SUBCASE("2+2 split: DetA 1, AssA 0.5, HOTA sqrt(0.5)") {
    const MetricReport r = compute_hota(split_preds(), split_gt());
    CHECK(r.deta == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.assa == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(r.hota == doctest::Approx(std::sqrt(0.5)).epsilon(1e-9));
  }
  SUBCASE("empty predictions against non-empty gt") {
    const MetricReport r = compute_hota(TrackSet{}, split_gt());
    CHECK(r.hota == doctest::Approx(0.0));
  }
  SUBCASE("per-alpha sqrt identity holds exactly") {
    const MetricReport r = compute_hota(split_preds(), split_gt());
    for (const auto& am : r.per_alpha) {
      CHECK(am.hota == doctest::Approx(std::sqrt(am.deta * am.assa)).epsilon(1e-15));
    }
  }
}

TEST_CASE("evaluate is invariant to id permutations") {
  Rng rng(123);
  for (int trial = 0; trial < 20; ++trial) {
    const TrackSet gt = random_trackset(rng, rng.uniform_int(1, 4), 8);
    TrackSet preds = random_trackset(rng, rng.uniform_int(1, 4), 8);
    const MetricReport base = evaluate(preds, gt);

    // Relabel both sides with disjoint random ids.
    TrackSet preds2, gt2;
    int offset = 100 + rng.uniform_int(0, 50);
    for (const auto& [id, t] : preds.tracks) preds2.tracks[offset - id] = t;
    offset = 300 + rng.uniform_int(0, 50);
    for (const auto& [id, t] : gt.tracks) gt2.tracks[offset - id] = t;
    const MetricReport permuted = evaluate(preds2, gt2);
    CHECK(reports_equal(base, permuted));
  }
}

TEST_CASE("evaluate is invariant to uniform frame translation") {
  Rng rng(321);
  const TrackSet gt = random_trackset(rng, 3, 8);
  TrackSet preds = random_trackset(rng, 3, 8);
  const MetricReport base = evaluate(preds, gt);

  auto shift = [](const TrackSet& t, int delta) {
    TrackSet out;
    for (const auto& [id, entries] : t.tracks) {
      for (const auto& [frame, box] : entries) out.tracks[id].emplace_back(frame + delta, box);
    }
    return out;
  };
  const MetricReport shifted = evaluate(shift(preds, 11), shift(gt, 11));
  CHECK(reports_equal(base, shifted));
}

TEST_CASE("mota weakly decreases as errors grow") {
  const TrackSet gt = split_gt();
  TrackSet good = split_gt();
  const MetricReport base = evaluate(good, gt);

  TrackSet with_fp = good;
  with_fp.tracks[9] = {{1, Box{500, 500, 10, 10}}};
  CHECK(*evaluate(with_fp, gt).mota <= *base.mota);

  TrackSet with_fn = good;
  with_fn.tracks[1].pop_back();
  CHECK(*evaluate(with_fn, gt).mota <= *base.mota);

  CHECK(*evaluate(split_preds(), gt).mota <= *base.mota);
}

TEST_CASE("combine pools counts across sequences") {
  const MetricReport a = evaluate(split_preds(), split_gt());
  const MetricReport b = evaluate(split_gt(), split_gt());
  const MetricReport c = combine({a, b});
  CHECK(c.ids == 1);
  CHECK(c.gt_total == 8);
  // Pooled DetA is 1 at every alpha, pooled AssA = (4*0.5 + 4*1.0) / 8.
  CHECK(c.assa == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(*c.mota == doctest::Approx(1.0 - 1.0 / 8.0));
}

TEST_CASE("report csv has one row per sequence plus COMBINED") {
  MetricReport a = evaluate(split_preds(), split_gt());
  a.name = "seq-a";
  const std::string csv = report_csv({a}, true);
  CHECK(csv.find("sequence,hota,deta,assa,idf1,mota,ids,fp,fn\n") == 0);
  CHECK(csv.find("seq-a,") != std::string::npos);
  CHECK(csv.find("COMBINED,") != std::string::npos);
}
