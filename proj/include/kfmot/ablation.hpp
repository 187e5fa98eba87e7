#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kfmot/assoc.hpp"
#include "kfmot/iff.hpp"
#include "kfmot/kfe.hpp"
#include "kfmot/metrics.hpp"
#include "kfmot/synth.hpp"

namespace kfmot::ablation {

/// Fusion-ratio sweep `start:end:step` (inclusive endpoints).
struct SweepSpec {
  double start = 0.0;
  double end = 1.0;
  double step = 0.1;
};

/// Variants mirror the module-effectiveness table: baseline tracker,
/// +IFF, +KFE, and both.
struct AblationConfig {
  synth::ScenarioConfig scenario;  // template; seed is overridden per cell
  std::vector<std::string> variants = {"baseline", "iff", "kfe", "both"};
  int num_seeds = 1;
  std::uint64_t base_seed = 1;
  kfe::QConfig qcfg;
  iff::FusionConfig fusion;
  assoc::EdgeScorer scorer = assoc::EdgeScorer::defaults(3);
  assoc::TrackConfig track;
  std::optional<SweepSpec> sweep_a;  // when set, replaces the variant list
  std::uint64_t gcn_seed = 99;
  int threads = 1;
};

struct CellResult {
  std::string variant;
  double a = -1.0;  // sweep ratio, -1 outside sweep mode
  std::uint64_t seed = 0;
  metrics::MetricReport report;
};

/// Run every (variant | sweep ratio) x seed cell of the deterministic
/// pipeline synth -> segment -> fuse -> track -> eval. Cells may execute in
/// parallel; results always come back in the same order.
std::vector<CellResult> run_ablation(const AblationConfig& cfg);

/// Aggregated CSV: one row per variant with mean and stddev per metric.
std::string ablation_csv(const std::vector<CellResult>& cells);

/// Per-cell CSV (one row per variant x seed).
std::string ablation_detail_csv(const std::vector<CellResult>& cells);

/// One-sided sign test: p-value for "variant beats reference" given wins
/// among n non-tied pairs.
double sign_test_p(int wins, int non_tied);

}  // namespace kfmot::ablation
