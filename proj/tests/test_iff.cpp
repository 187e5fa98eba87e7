#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "kfmot/iff.hpp"
#include "kfmot/rng.hpp"

using namespace kfmot;
using namespace kfmot::iff;

namespace {

Detection det_at(double x, double y) {
  return Detection{1, -1, {x - 2.5, y - 2.5, 5, 5}, 1.0, {}};
}

FrameGraph random_graph(int n, int m, Rng& rng) {
  std::vector<Detection> dets;
  for (int i = 0; i < n; ++i) dets.push_back(det_at(rng.uniform(0, 500), rng.uniform(0, 500)));
  return build_frame_graph(dets, m);
}

Eigen::MatrixXd random_matrix(int r, int c, Rng& rng) {
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) m(i, j) = rng.normal();
  }
  return m;
}

}  // namespace

TEST_CASE("build_frame_graph picks nearest neighbours by center distance") {
  SUBCASE("collinear points") {
    const std::vector<Detection> dets = {det_at(0, 0), det_at(1, 0), det_at(10, 0)};
    const FrameGraph g = build_frame_graph(dets, 1);
    CHECK(g.neighbors[0] == std::vector<int>{1});
    CHECK(g.neighbors[1] == std::vector<int>{0});
    CHECK(g.neighbors[2] == std::vector<int>{1});
  }
  SUBCASE("single detection") {
    const FrameGraph g = build_frame_graph({det_at(5, 5)}, 4);
    CHECK(g.neighbors[0].empty());
  }
  SUBCASE("neighbour count clamps to |V| - 1") {
    const FrameGraph g = build_frame_graph({det_at(0, 0), det_at(9, 0)}, 5);
    CHECK(g.neighbors[0].size() == 1);
    CHECK(g.neighbors[1].size() == 1);
  }
  SUBCASE("distance ties break to the smaller ordinal") {
    const std::vector<Detection> dets = {det_at(0, 0), det_at(4, 0), det_at(-4, 0)};
    const FrameGraph g = build_frame_graph(dets, 1);
    CHECK(g.neighbors[0] == std::vector<int>{1});
  }
}

TEST_CASE("average_fusion blends self with the neighbour mean") {
  FusionConfig cfg;
  SUBCASE("symmetric blend") {
    cfg.a = 0.5;
    const auto out = average_fusion({1, 0}, {{0, 1}}, cfg);
    CHECK(out[0] == doctest::Approx(0.5));
    CHECK(out[1] == doctest::Approx(0.5));
  }
  SUBCASE("a = 1 is the identity, bit-exact") {
    cfg.a = 1.0;
    const std::vector<double> f = {0.3, -0.7, 2.5};
    CHECK(average_fusion(f, {{9, 9, 9}, {-1, 0, 1}}, cfg) == f);
  }
  SUBCASE("opposing neighbours cancel") {
    cfg.a = 0.4;
    const auto out = average_fusion({1, 0}, {{0, 1}, {0, -1}}, cfg);
    CHECK(out[0] == doctest::Approx(0.4));
    CHECK(out[1] == doctest::Approx(0.0));
  }
  SUBCASE("no neighbours leaves the feature untouched") {
    cfg.a = 0.2;
    const std::vector<double> f = {1, 2};
    CHECK(average_fusion(f, {}, cfg) == f);
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(average_fusion({1, 0}, {{1, 0, 0}}, cfg), DimensionError);
  }
}

TEST_CASE("gcn_layer propagation") {
  GcnLayer layer;
  layer.weights = Eigen::MatrixXd::Identity(2, 2);

  SUBCASE("2-node complete graph averages rows") {
    const FrameGraph g = build_frame_graph({det_at(0, 0), det_at(10, 0)}, 1);
    Eigen::MatrixXd h(2, 2);
    h << 1, 0, 0, 1;
    const Eigen::MatrixXd out = gcn_layer(h, g, layer);
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) CHECK(out(i, j) == doctest::Approx(0.5).epsilon(1e-12));
    }
  }
  SUBCASE("1-node graph is the identity") {
    const FrameGraph g = build_frame_graph({det_at(0, 0)}, 1);
    Eigen::MatrixXd h(1, 2);
    h << 3, -4;
    const Eigen::MatrixXd out = gcn_layer(h, g, layer);
    CHECK(out(0, 0) == doctest::Approx(3.0));
    CHECK(out(0, 1) == doctest::Approx(-4.0));
  }
  SUBCASE("zero weights annihilate") {
    layer.weights.setZero();
    const FrameGraph g = build_frame_graph({det_at(0, 0), det_at(10, 0)}, 1);
    Eigen::MatrixXd h = Eigen::MatrixXd::Random(2, 2);
    CHECK(gcn_layer(h, g, layer).isZero(0.0));
  }
}

TEST_CASE("gcn_fusion blends with the propagated features") {
  GcnLayer layer;
  layer.weights = Eigen::MatrixXd::Identity(2, 2);
  FusionConfig cfg;
  cfg.mode = FusionMode::kGcn;

  SUBCASE("a = 1 returns the input bit-exactly") {
    cfg.a = 1.0;
    Rng rng(4);
    const FrameGraph g = random_graph(5, 2, rng);
    const Eigen::MatrixXd h = random_matrix(5, 2, rng);
    const Eigen::MatrixXd out = gcn_fusion(h, g, layer, cfg);
    CHECK((out - h).isZero(0.0));
  }
  SUBCASE("2-node example lands at (0.7, 0.3)") {
    cfg.a = 0.4;
    const FrameGraph g = build_frame_graph({det_at(0, 0), det_at(10, 0)}, 1);
    Eigen::MatrixXd h(2, 2);
    h << 1, 0, 0, 1;
    const Eigen::MatrixXd out = gcn_fusion(h, g, layer, cfg);
    CHECK(out(0, 0) == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(out(0, 1) == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(out(1, 0) == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(out(1, 1) == doctest::Approx(0.7).epsilon(1e-12));
  }
  SUBCASE("edgeless graph with identity weights is a no-op") {
    cfg.a = 0.4;
    FrameGraph g;
    g.m = 1;
    g.neighbors = {{}, {}, {}};
    Rng rng(8);
    const Eigen::MatrixXd h = random_matrix(3, 2, rng);
    CHECK((gcn_fusion(h, g, layer, cfg) - h).norm() == doctest::Approx(0.0));
  }
}

TEST_CASE("propagation rows sum to one on degree-regular graphs") {
  // Complete graph: all augmented degrees equal.
  std::vector<Detection> dets;
  for (int i = 0; i < 5; ++i) dets.push_back(det_at(10.0 * i, 0));
  const FrameGraph g = build_frame_graph(dets, 4);
  const Eigen::MatrixXd s = propagation_matrix(g);
  for (int i = 0; i < 5; ++i) {
    CHECK(s.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("fusion is permutation-equivariant") {
  Rng rng(21);
  GcnLayer layer;
  layer.weights = random_matrix(3, 3, rng);
  FusionConfig cfg;
  cfg.a = 0.4;
  cfg.mode = FusionMode::kGcn;

  std::vector<Detection> dets;
  for (int i = 0; i < 6; ++i) dets.push_back(det_at(rng.uniform(0, 300), rng.uniform(0, 300)));
  const Eigen::MatrixXd h = random_matrix(6, 3, rng);
  const Eigen::MatrixXd out = gcn_fusion(h, build_frame_graph(dets, 2), layer, cfg);

  const std::vector<int> perm = {3, 0, 5, 1, 4, 2};
  std::vector<Detection> permuted(6);
  Eigen::MatrixXd hp(6, 3);
  for (int i = 0; i < 6; ++i) {
    permuted[i] = dets[perm[i]];
    hp.row(i) = h.row(perm[i]);
  }
  const Eigen::MatrixXd outp = gcn_fusion(hp, build_frame_graph(permuted, 2), layer, cfg);
  for (int i = 0; i < 6; ++i) {
    CHECK((outp.row(i) - out.row(perm[i])).norm() == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("average_fusion norm bound") {
  Rng rng(33);
  FusionConfig cfg;
  for (int trial = 0; trial < 30; ++trial) {
    cfg.a = rng.uniform();
    std::vector<double> f(4);
    for (double& x : f) x = rng.normal();
    const int n = rng.uniform_int(1, 5);
    std::vector<std::vector<double>> nbrs(n, std::vector<double>(4));
    double max_nbr_norm = 0.0;
    for (auto& nf : nbrs) {
      double norm = 0.0;
      for (double& x : nf) {
        x = rng.normal();
        norm += x * x;
      }
      max_nbr_norm = std::max(max_nbr_norm, std::sqrt(norm));
    }
    double f_norm = 0.0, out_norm = 0.0;
    const auto out = average_fusion(f, nbrs, cfg);
    for (double x : f) f_norm += x * x;
    for (double x : out) out_norm += x * x;
    CHECK(std::sqrt(out_norm) <=
          cfg.a * std::sqrt(f_norm) + cfg.b() * max_nbr_norm + 1e-12);
  }
}

TEST_CASE("gcn_gradients") {
  FusionConfig cfg;
  cfg.a = 0.4;
  cfg.mode = FusionMode::kGcn;

  SUBCASE("zero upstream gives zero gradients") {
    Rng rng(2);
    const FrameGraph g = random_graph(4, 2, rng);
    const Eigen::MatrixXd h = random_matrix(4, 3, rng);
    GcnLayer layer;
    layer.weights = random_matrix(3, 3, rng);
    const auto grads = gcn_gradients(h, g, layer, cfg, Eigen::MatrixXd::Zero(4, 3));
    CHECK(grads.grad_weights.isZero(0.0));
    CHECK(grads.grad_features.isZero(0.0));
  }
  SUBCASE("1-node scalar closed form") {
    // out = a h + b h w, so d(out * u)/dw = b h u.
    const FrameGraph g = build_frame_graph({det_at(0, 0)}, 1);
    Eigen::MatrixXd h(1, 1), u(1, 1);
    h << 1.7;
    u << -0.6;
    GcnLayer layer;
    layer.weights = Eigen::MatrixXd::Constant(1, 1, 0.9);
    const auto grads = gcn_gradients(h, g, layer, cfg, u);
    CHECK(grads.grad_weights(0, 0) == doctest::Approx(cfg.b() * 1.7 * -0.6));
    CHECK(grads.grad_features(0, 0) ==
          doctest::Approx(cfg.a * -0.6 + cfg.b() * -0.6 * 0.9));
  }
  SUBCASE("matches central finite differences") {
    Rng rng(77);
    for (int trial = 0; trial < 10; ++trial) {
      const int n = rng.uniform_int(2, 5);
      const int d = rng.uniform_int(1, 3);
      const FrameGraph g = random_graph(n, 2, rng);
      const Eigen::MatrixXd h = random_matrix(n, d, rng);
      const Eigen::MatrixXd u = random_matrix(n, d, rng);
      GcnLayer layer;
      layer.weights = random_matrix(d, d, rng);
      if (trial % 2 == 0) {
        layer.activation = Activation::kRelu;
        // Keep pre-activations away from the relu kink so central
        // differences stay valid.
        const Eigen::MatrixXd z = propagation_matrix(g) * h * layer.weights;
        if (z.array().abs().minCoeff() < 1e-3) layer.activation = Activation::kIdentity;
      }

      const auto grads = gcn_gradients(h, g, layer, cfg, u);
      const double step = 1e-5;
      auto objective = [&](const GcnLayer& l, const Eigen::MatrixXd& feats) {
        return (gcn_fusion(feats, g, l, cfg).array() * u.array()).sum();
      };
      for (int r = 0; r < d; ++r) {
        for (int c = 0; c < d; ++c) {
          GcnLayer lp = layer, lm = layer;
          lp.weights(r, c) += step;
          lm.weights(r, c) -= step;
          const double fd = (objective(lp, h) - objective(lm, h)) / (2 * step);
          const double an = grads.grad_weights(r, c);
          CHECK(std::abs(fd - an) <= 1e-4 * std::max(1.0, std::abs(fd)));
        }
      }
      for (int r = 0; r < n; ++r) {
        for (int c = 0; c < d; ++c) {
          Eigen::MatrixXd hp = h, hm = h;
          hp(r, c) += step;
          hm(r, c) -= step;
          const double fd = (objective(layer, hp) - objective(layer, hm)) / (2 * step);
          const double an = grads.grad_features(r, c);
          CHECK(std::abs(fd - an) <= 1e-4 * std::max(1.0, std::abs(fd)));
        }
      }
    }
  }
}

TEST_CASE("gcn weights file round-trip") {
  Rng rng(5);
  GcnLayer layer;
  layer.weights = random_matrix(3, 3, rng);
  const GcnLayer parsed = parse_gcn_weights(write_gcn_weights(layer));
  CHECK((parsed.weights - layer.weights).norm() == doctest::Approx(0.0));
  CHECK_THROWS_AS(parse_gcn_weights("bogus"), kfmot::ParseError);
}
