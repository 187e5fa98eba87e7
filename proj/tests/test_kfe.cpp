#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "kfmot/kfe.hpp"
#include "kfmot/rng.hpp"

using namespace kfmot;
using namespace kfmot::kfe;

namespace {

// One detection per frame carrying the given feature.
Sequence sequence_with_features(const std::vector<std::vector<double>>& frame_feats) {
  Sequence seq;
  seq.length = static_cast<int>(frame_feats.size());
  seq.feature_dim = frame_feats.empty() ? 0 : static_cast<int>(frame_feats[0].size());
  for (int t = 1; t <= seq.length; ++t) {
    seq.frames[t].push_back(
        Detection{t, -1, {10.0 * t, 10.0, 5, 5}, 1.0, frame_feats[t - 1]});
  }
  return seq;
}

// e1,e1,e2,e2,e3,e3 -- the structured fixture.
Sequence basis_fixture() {
  return sequence_with_features({{1, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 1, 0}, {0, 0, 1},
                                 {0, 0, 1}});
}

Sequence random_sequence(int ln, int dim, Rng& rng) {
  std::vector<std::vector<double>> feats(ln);
  for (auto& f : feats) {
    f.resize(dim);
    double norm = 0.0;
    for (double& x : f) {
      x = rng.normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : f) x /= norm;
  }
  return sequence_with_features(feats);
}

bool tiles(const SegmentationStrategy& s, int ln) {
  if (ln == 0) return s.segments.empty();
  if (s.segments.empty() || s.segments.front().first != 1 || s.segments.back().last != ln) {
    return false;
  }
  for (std::size_t i = 0; i + 1 < s.segments.size(); ++i) {
    if (s.segments[i + 1].first != s.segments[i].last + 1) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("cosine similarity basics") {
  CHECK(cosine_similarity({1, 0}, {1, 0}) == doctest::Approx(1.0));
  CHECK(cosine_similarity({1, 0}, {0, 1}) == doctest::Approx(0.0));
  CHECK(cosine_similarity({0, 0}, {1, 0}) == 0.0);
  CHECK_THROWS_AS(cosine_similarity({1, 0}, {1, 0, 0}), DimensionError);
}

TEST_CASE("segment_reward evaluates the boundary dissimilarity") {
  QConfig cfg;
  cfg.min_len = 1;
  cfg.max_len = 2;

  SUBCASE("identical boundary features collapse to xi") {
    const Sequence seq = sequence_with_features({{1, 0}, {1, 0}, {1, 0}, {1, 0}});
    const auto [ka, kb] = segment_reward({1, 2}, {3, 4}, seq, cfg);
    CHECK(ka == doctest::Approx(0.0));
    CHECK(kb == doctest::Approx(0.0));
  }
  SUBCASE("orthogonal first frames, identical last frames") {
    // first frames of the two segments: e1 vs e2; last frames: e2 vs e2.
    const Sequence seq = sequence_with_features({{1, 0}, {0, 1}, {0, 1}, {0, 1}});
    const auto [ka, kb] = segment_reward({1, 2}, {3, 4}, seq, cfg);
    CHECK(ka == doctest::Approx(1.0));
    CHECK(kb == doctest::Approx(0.0));
  }
  SUBCASE("orthogonal on both ends with delta and xi") {
    cfg.delta = 2.0;
    cfg.xi = 0.5;
    const Sequence seq = sequence_with_features({{1, 0}, {1, 0}, {0, 1}, {0, 1}});
    const auto [ka, kb] = segment_reward({1, 2}, {3, 4}, seq, cfg);
    CHECK(ka == doctest::Approx(2.25));
    CHECK(kb == doctest::Approx(2.25));
    CHECK(ka + kb == doctest::Approx(4.5));
  }
}

TEST_CASE("select_action is epsilon-greedy with smallest-action ties") {
  QConfig cfg;
  cfg.min_len = 2;
  cfg.max_len = 5;
  Rng rng(3);

  SUBCASE("pure exploitation") {
    cfg.epsilon = 0.0;
    for (int i = 0; i < 100; ++i) {
      CHECK(select_action({0.1, 0.9, 0.2, 0.0}, cfg, rng) == 3);
    }
  }
  SUBCASE("all-zero row ties to the smallest action") {
    cfg.epsilon = 0.0;
    CHECK(select_action({0, 0, 0, 0}, cfg, rng) == 2);
  }
  SUBCASE("epsilon = 1 draws uniformly") {
    cfg.epsilon = 1.0;
    std::vector<int> counts(4, 0);
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
      ++counts[select_action({0.1, 0.9, 0.2, 0.0}, cfg, rng) - cfg.min_len];
    }
    const double expected = draws / 4.0;
    const double sigma = std::sqrt(draws * 0.25 * 0.75);
    for (int c : counts) {
      CHECK(std::abs(c - expected) <= 3.0 * sigma);
    }
  }
}

TEST_CASE("update_q follows the tabular rule") {
  QConfig cfg;
  cfg.min_len = 1;
  cfg.max_len = 3;

  SUBCASE("single step from a zero table") {
    QTable qt(10, 1, 3);
    const auto trace = update_q(qt, 2, 1, 1.0, 3, cfg);
    CHECK(qt.get(2, 1) == doctest::Approx(0.1));
    CHECK(trace.td_term == doctest::Approx(1.0));
  }
  SUBCASE("bootstrapped target") {
    QTable qt(10, 1, 3);
    qt.set(3, 2, 2.0);  // max at next state
    qt.set(2, 1, 1.0);
    update_q(qt, 2, 1, 0.0, 3, cfg);
    CHECK(qt.get(2, 1) == doctest::Approx(1.098));
  }
  SUBCASE("fixed point is a no-op") {
    QTable qt(10, 1, 3);
    qt.set(3, 1, 2.0);
    qt.set(2, 1, 1.0 + 0.99 * 2.0);  // kappa + alpha * max
    const auto trace = update_q(qt, 2, 1, 1.0, 3, cfg);
    CHECK(trace.td_term == doctest::Approx(0.0));
    CHECK(qt.get(2, 1) == doctest::Approx(1.0 + 0.99 * 2.0));
  }
}

TEST_CASE("episode_rollout degenerate cases") {
  QConfig cfg;
  cfg.min_len = 1;
  cfg.max_len = 1;
  cfg.seed = 5;

  SUBCASE("single frame") {
    const Sequence seq = sequence_with_features({{1, 0}});
    FrameFeatureCache cache(seq);
    QTablePair tables{QTable(2, 1, 1), QTable(2, 1, 1)};
    Rng rng(5);
    const auto s = episode_rollout(cache, tables, cfg, rng);
    REQUIRE(s.segments.size() == 1);
    CHECK(s.segments[0] == Segment{1, 1});
    CHECK(s.score == 0.0);
  }
  SUBCASE("forced tiling when u == n") {
    cfg.min_len = cfg.max_len = 2;
    const Sequence seq = sequence_with_features({{1, 0}, {1, 0}, {0, 1}, {0, 1}});
    FrameFeatureCache cache(seq);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      QTablePair tables{QTable(5, 2, 2), QTable(5, 2, 2)};
      Rng rng(seed);
      const auto s = episode_rollout(cache, tables, cfg, rng);
      REQUIRE(s.segments.size() == 2);
      CHECK(s.segments[0] == Segment{1, 2});
      CHECK(s.segments[1] == Segment{3, 4});
    }
  }
  SUBCASE("LN below min_len yields one short segment") {
    cfg.min_len = 4;
    cfg.max_len = 5;
    const Sequence seq = sequence_with_features({{1, 0}, {0, 1}});
    FrameFeatureCache cache(seq);
    QTablePair tables{QTable(3, 4, 5), QTable(3, 4, 5)};
    Rng rng(0);
    const auto s = episode_rollout(cache, tables, cfg, rng);
    REQUIRE(s.segments.size() == 1);
    CHECK(s.segments[0] == Segment{1, 2});
  }
}

TEST_CASE("enumerate_segmentations") {
  SUBCASE("LN=3, u=1, n=2") {
    const auto tilings = enumerate_segmentations(3, 1, 2);
    REQUIRE(tilings.size() == 3);
    CHECK(tilings[0] == std::vector<int>{1, 1, 1});
    CHECK(tilings[1] == std::vector<int>{1, 2});
    CHECK(tilings[2] == std::vector<int>{2, 1});
  }
  SUBCASE("LN=2, u=2, n=2") {
    const auto tilings = enumerate_segmentations(2, 2, 2);
    REQUIRE(tilings.size() == 1);
    CHECK(tilings[0] == std::vector<int>{2});
  }
  SUBCASE("LN=0") { CHECK(enumerate_segmentations(0, 1, 2).empty()); }
  SUBCASE("size guard") { CHECK_THROWS_AS(enumerate_segmentations(17, 1, 2), ValidationError); }
  SUBCASE("every tiling covers LN with valid lengths") {
    for (int ln = 1; ln <= 9; ++ln) {
      const auto tilings = enumerate_segmentations(ln, 2, 3);
      std::set<std::vector<int>> unique(tilings.begin(), tilings.end());
      CHECK(unique.size() == tilings.size());
      for (const auto& t : tilings) {
        int sum = 0;
        for (std::size_t i = 0; i < t.size(); ++i) {
          sum += t[i];
          if (i + 1 < t.size()) {
            CHECK(t[i] >= 2);
            CHECK(t[i] <= 3);
          } else {
            CHECK(t[i] >= 1);
            CHECK(t[i] <= 3);
          }
        }
        CHECK(sum == ln);
      }
    }
  }
}

TEST_CASE("oracle_best_segmentation") {
  QConfig cfg;
  cfg.min_len = 1;
  cfg.max_len = 3;

  SUBCASE("constant features tie to the lexicographically smallest tiling") {
    const Sequence seq = sequence_with_features({{1, 0}, {1, 0}, {1, 0}, {1, 0}});
    const auto best = oracle_best_segmentation(seq, cfg);
    REQUIRE(best.segments.size() == 4);  // all-ones tuple is lexicographically first
    CHECK(best.segments[0] == Segment{1, 1});
  }
  SUBCASE("basis fixture attains 4/3 on pairs") {
    const auto best = oracle_best_segmentation(basis_fixture(), cfg);
    REQUIRE(best.segments.size() == 3);
    CHECK(best.segments[0] == Segment{1, 2});
    CHECK(best.segments[1] == Segment{3, 4});
    CHECK(best.segments[2] == Segment{5, 6});
    CHECK(best.score == doctest::Approx(4.0 / 3.0).epsilon(1e-12));
  }
  SUBCASE("two frames, distinct features: splitting wins") {
    cfg.max_len = 2;
    const Sequence seq = sequence_with_features({{1, 0}, {0, 1}});
    const auto best = oracle_best_segmentation(seq, cfg);
    REQUIRE(best.segments.size() == 2);
    CHECK(best.score == doctest::Approx(1.0));
  }
}

TEST_CASE("train_kfe on the basis fixture matches the oracle") {
  QConfig cfg;
  cfg.min_len = 1;
  cfg.max_len = 3;
  cfg.episodes = 3000;
  cfg.seed = 11;
  const Sequence seq = basis_fixture();
  const auto result = train_kfe(seq, cfg);
  const auto oracle = oracle_best_segmentation(seq, cfg);
  CHECK(result.best.score == doctest::Approx(oracle.score).epsilon(1e-9));
  CHECK(tiles(result.best, 6));

  // Greedy post-training rollout recovers the exact optimal tiling.
  FrameFeatureCache cache(seq);
  const auto greedy = greedy_rollout(cache, result.tables, cfg);
  REQUIRE(greedy.segments.size() == 3);
  CHECK(greedy.segments[0] == Segment{1, 2});
  CHECK(greedy.segments[1] == Segment{3, 4});
  CHECK(greedy.segments[2] == Segment{5, 6});
  CHECK(greedy.score == doctest::Approx(4.0 / 3.0).epsilon(1e-9));
}

TEST_CASE("train_kfe with constant features keeps the first episode") {
  QConfig cfg;
  cfg.min_len = 1;
  cfg.max_len = 3;
  cfg.episodes = 50;
  cfg.seed = 2;
  const Sequence seq = sequence_with_features({{1, 0}, {1, 0}, {1, 0}, {1, 0}, {1, 0}});
  const auto result = train_kfe(seq, cfg);
  CHECK(result.best.score == doctest::Approx(0.0));

  // Reproduce the first episode by hand: same tables, same stream.
  FrameFeatureCache cache(seq);
  QTablePair tables{QTable(6, 1, 3), QTable(6, 1, 3)};
  Rng rng(2);
  const auto first = episode_rollout(cache, tables, cfg, rng);
  REQUIRE(result.best.segments.size() == first.segments.size());
  for (std::size_t i = 0; i < first.segments.size(); ++i) {
    CHECK(result.best.segments[i] == first.segments[i]);
  }
}

TEST_CASE("train_kfe determinism under a fixed seed") {
  Rng feature_rng(31);
  const Sequence seq = random_sequence(10, 4, feature_rng);
  QConfig cfg;
  cfg.min_len = 1;
  cfg.max_len = 4;
  cfg.episodes = 500;
  cfg.seed = 77;
  const auto a = train_kfe(seq, cfg);
  const auto b = train_kfe(seq, cfg);
  CHECK(a.best.score == b.best.score);
  REQUIRE(a.best.segments.size() == b.best.segments.size());
  for (std::size_t i = 0; i < a.best.segments.size(); ++i) {
    CHECK(a.best.segments[i] == b.best.segments[i]);
  }
}

TEST_CASE("strategies always tile and never beat the oracle") {
  Rng rng(500);
  for (int trial = 0; trial < 15; ++trial) {
    const int ln = rng.uniform_int(1, 12);
    QConfig cfg;
    cfg.min_len = rng.uniform_int(1, 3);
    cfg.max_len = cfg.min_len + rng.uniform_int(0, 3);
    cfg.episodes = 400;
    cfg.seed = rng.next_u64();
    const Sequence seq = random_sequence(ln, 4, rng);
    const auto result = train_kfe(seq, cfg);
    CHECK(tiles(result.best, ln));
    for (std::size_t i = 0; i + 1 < result.best.segments.size(); ++i) {
      CHECK(result.best.segments[i].length() >= cfg.min_len);
      CHECK(result.best.segments[i].length() <= cfg.max_len);
    }
    FrameFeatureCache cache(seq);
    CHECK(recompute_score(result.best.segments, cache, cfg) ==
          doctest::Approx(result.best.score).epsilon(1e-12));

    const auto oracle = oracle_best_segmentation(seq, cfg);
    CHECK(result.best.score <= oracle.score + 1e-9);
  }
}

TEST_CASE("zero delta makes every tiling with equal segment count score alike") {
  QConfig cfg;
  cfg.min_len = 1;
  cfg.max_len = 3;
  cfg.delta = 0.0;
  cfg.xi = 0.8;
  Rng rng(9);
  const Sequence seq = random_sequence(7, 3, rng);
  FrameFeatureCache cache(seq);
  const auto tilings = enumerate_segmentations(7, 1, 3);
  for (const auto& lengths : tilings) {
    std::vector<Segment> segments;
    int start = 1;
    for (int len : lengths) {
      segments.push_back({start, start + len - 1});
      start += len;
    }
    const double k = static_cast<double>(segments.size());
    CHECK(recompute_score(segments, cache, cfg) ==
          doctest::Approx(cfg.xi * (k - 1.0) / k).epsilon(1e-12));
  }
}

TEST_CASE("default episode formula is clamped") {
  QConfig cfg;
  cfg.min_len = 2;
  cfg.max_len = 4;
  cfg.episode_cap = 50000;
  CHECK(default_episodes(10, cfg) == (10 - 2) * (10 - 4) * 100);
  CHECK(default_episodes(500, cfg) == 50000);
  CHECK(default_episodes(2, cfg) == 100);  // degenerate factors clamp to 1
}

TEST_CASE("strategy file round-trip") {
  SegmentationStrategy s;
  s.segments = {{1, 3}, {4, 4}, {5, 9}};
  s.score = 1.25;
  const std::string text = write_strategy(s);
  const auto parsed = parse_strategy(text);
  REQUIRE(parsed.segments.size() == 3);
  CHECK(parsed.segments[2] == Segment{5, 9});
  CHECK(parsed.score == doctest::Approx(1.25));
  CHECK_THROWS_AS(parse_strategy("1,1,3\n2,5,9\n"), ValidationError);
}
