#include "kfmot/ablation.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <thread>

#include "kfmot/data_io.hpp"

namespace kfmot::ablation {

namespace {

struct Cell {
  std::string variant;
  double a = -1.0;
  std::uint64_t seed = 0;
};

bool variant_uses_kfe(const std::string& v) { return v == "kfe" || v == "both"; }
bool variant_uses_iff(const std::string& v) { return v == "iff" || v == "both"; }

CellResult run_cell(const AblationConfig& cfg, const Cell& cell) {
  synth::ScenarioConfig scenario = cfg.scenario;
  scenario.seed = cell.seed;
  const synth::SynthOutput data = synth::generate(scenario);

  kfe::SegmentationStrategy strategy;
  if (variant_uses_kfe(cell.variant)) {
    kfe::QConfig qcfg = cfg.qcfg;
    qcfg.seed = cell.seed * 1000003 + 17;
    strategy = kfe::train_kfe(data.detections, qcfg).best;
  } else {
    strategy = kfe::fixed_segmentation(data.detections.length, cfg.qcfg.max_len);
  }

  std::optional<iff::FusionConfig> fusion;
  iff::GcnLayer layer;
  const iff::GcnLayer* layer_ptr = nullptr;
  const bool sweeping = cell.a >= 0.0;
  if (variant_uses_iff(cell.variant) || sweeping) {
    fusion = cfg.fusion;
    if (sweeping) fusion->a = cell.a;
    if (fusion->mode == iff::FusionMode::kGcn) {
      layer = iff::GcnLayer::init(scenario.feature_dim, cfg.gcn_seed);
      layer_ptr = &layer;
    }
  }

  const TrackSet tracks = assoc::track_sequence(data.detections, strategy, fusion, layer_ptr,
                                                cfg.scorer, cfg.track);
  CellResult out;
  out.variant = cell.variant;
  out.a = cell.a;
  out.seed = cell.seed;
  out.report = metrics::evaluate(tracks, data.gt);
  out.report.name = cell.variant;
  return out;
}

struct Stats {
  double mean = 0.0;
  double stddev = 0.0;
};

Stats stats_of(const std::vector<double>& xs) {
  Stats s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(var / static_cast<double>(xs.size()));
  return s;
}

}  // namespace

std::vector<CellResult> run_ablation(const AblationConfig& cfg) {
  if (cfg.num_seeds < 1) throw ValidationError("num_seeds must be >= 1");
  std::vector<Cell> cells;
  if (cfg.sweep_a.has_value()) {
    const SweepSpec& sw = *cfg.sweep_a;
    if (sw.step <= 0.0) throw ValidationError("sweep step must be positive");
    // Integer stepping avoids accumulation drift at the endpoints.
    const int steps = static_cast<int>(std::llround((sw.end - sw.start) / sw.step));
    for (int i = 0; i <= steps; ++i) {
      const double a = sw.start + sw.step * i;
      if (a < -1e-12 || a > 1.0 + 1e-12) continue;
      char name[32];
      std::snprintf(name, sizeof(name), "a=%.6g", a);
      for (int s = 0; s < cfg.num_seeds; ++s) {
        cells.push_back({name, std::min(1.0, std::max(0.0, a)), cfg.base_seed + s});
      }
    }
  } else {
    if (cfg.variants.empty()) throw ValidationError("no ablation variants given");
    for (const std::string& v : cfg.variants) {
      if (v != "baseline" && v != "iff" && v != "kfe" && v != "both") {
        throw ValidationError("unknown variant: " + v);
      }
      for (int s = 0; s < cfg.num_seeds; ++s) {
        cells.push_back({v, -1.0, cfg.base_seed + s});
      }
    }
  }

  std::vector<CellResult> results(cells.size());
  const int threads = std::max(1, std::min<int>(cfg.threads, static_cast<int>(cells.size())));
  if (threads == 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) results[i] = run_cell(cfg, cells[i]);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) break;
            results[i] = run_cell(cfg, cells[i]);
          }
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& err : errors) {
      if (err) std::rethrow_exception(err);
    }
  }
  return results;
}

namespace {

const char* kMetricNames[] = {"hota", "deta", "assa", "idf1", "mota", "ids", "fp", "fn"};

std::vector<double> metric_values(const std::vector<const CellResult*>& cells, int metric) {
  std::vector<double> xs;
  xs.reserve(cells.size());
  for (const CellResult* c : cells) {
    const metrics::MetricReport& r = c->report;
    switch (metric) {
      case 0: xs.push_back(r.hota.value_or(0.0)); break;
      case 1: xs.push_back(r.deta.value_or(0.0)); break;
      case 2: xs.push_back(r.assa.value_or(0.0)); break;
      case 3: xs.push_back(r.idf1.value_or(0.0)); break;
      case 4: xs.push_back(r.mota.value_or(0.0)); break;
      case 5: xs.push_back(static_cast<double>(r.ids)); break;
      case 6: xs.push_back(static_cast<double>(r.fp)); break;
      case 7: xs.push_back(static_cast<double>(r.fn)); break;
    }
  }
  return xs;
}

}  // namespace

std::string ablation_csv(const std::vector<CellResult>& cells) {
  // Group by variant, preserving first-seen order.
  std::vector<std::string> order;
  std::vector<std::vector<const CellResult*>> groups;
  for (const CellResult& c : cells) {
    std::size_t gi = 0;
    for (; gi < order.size(); ++gi) {
      if (order[gi] == c.variant) break;
    }
    if (gi == order.size()) {
      order.push_back(c.variant);
      groups.emplace_back();
    }
    groups[gi].push_back(&c);
  }

  std::string out = "variant,a,seeds";
  for (const char* m : kMetricNames) {
    out += ',';
    out += m;
    out += "_mean,";
    out += m;
    out += "_std";
  }
  out += '\n';
  for (std::size_t gi = 0; gi < order.size(); ++gi) {
    out += order[gi];
    out += ',';
    out += groups[gi].front()->a >= 0.0 ? io::format_double(groups[gi].front()->a) : "";
    out += ',';
    out += std::to_string(groups[gi].size());
    for (int m = 0; m < 8; ++m) {
      const Stats s = stats_of(metric_values(groups[gi], m));
      out += ',';
      out += io::format_double(s.mean);
      out += ',';
      out += io::format_double(s.stddev);
    }
    out += '\n';
  }
  return out;
}

std::string ablation_detail_csv(const std::vector<CellResult>& cells) {
  std::string out = "variant,a,seed,hota,deta,assa,idf1,mota,ids,fp,fn\n";
  for (const CellResult& c : cells) {
    const metrics::MetricReport& r = c.report;
    out += c.variant;
    out += ',';
    out += c.a >= 0.0 ? io::format_double(c.a) : "";
    out += ',';
    out += std::to_string(c.seed);
    auto add = [&out](const std::optional<double>& v) {
      out += ',';
      if (v.has_value()) out += io::format_double(*v);
    };
    add(r.hota);
    add(r.deta);
    add(r.assa);
    add(r.idf1);
    add(r.mota);
    out += ',';
    out += std::to_string(r.ids);
    out += ',';
    out += std::to_string(r.fp);
    out += ',';
    out += std::to_string(r.fn);
    out += '\n';
  }
  return out;
}

double sign_test_p(int wins, int non_tied) {
  if (non_tied <= 0) return 1.0;
  if (wins < 0 || wins > non_tied) throw ValidationError("wins outside [0, n]");
  // P(X >= wins), X ~ Binomial(n, 1/2).
  double p = 0.0;
  for (int k = wins; k <= non_tied; ++k) {
    double log_c = 0.0;
    for (int i = 1; i <= non_tied; ++i) {
      log_c += std::log(static_cast<double>(i));
      if (i <= k) log_c -= std::log(static_cast<double>(i));
      if (i <= non_tied - k) log_c -= std::log(static_cast<double>(i));
    }
    p += std::exp(log_c - non_tied * std::log(2.0));
  }
  return std::min(1.0, p);
}

}  // namespace kfmot::ablation
