#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "kfmot/ablation.hpp"
#include "kfmot/assoc.hpp"
#include "kfmot/data_io.hpp"
#include "kfmot/iff.hpp"
#include "kfmot/kfe.hpp"
#include "kfmot/metrics.hpp"
#include "kfmot/synth.hpp"

namespace fs = std::filesystem;
using namespace kfmot;

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

Sequence load_sequence(const std::string& dets_path, const std::string& feats_path) {
  Sequence seq = io::parse_detections(io::read_file(dets_path));
  if (!feats_path.empty()) io::attach_features(seq, io::read_file(feats_path));
  return seq;
}

iff::FusionMode fusion_mode_from(const std::string& s) {
  if (s == "average") return iff::FusionMode::kAverage;
  if (s == "gcn") return iff::FusionMode::kGcn;
  throw ValidationError("fusion mode must be 'average' or 'gcn', got '" + s + "'");
}

int env_threads(std::size_t cells) {
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("KFMOT_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1) threads = std::min<unsigned>(threads, static_cast<unsigned>(cap));
  }
  return static_cast<int>(std::min<std::size_t>(threads, std::max<std::size_t>(1, cells)));
}

// --- synth ---------------------------------------------------------------

struct SynthArgs {
  std::string kind = "occlusion";
  int objects = 5;
  int frames = 60;
  int feature_dim = 16;
  std::uint64_t seed = 7;
  double feature_noise = 0.0, box_noise = 0.0, miss_rate = 0.0;
  std::vector<std::string> gaps, pairs;
  std::string out_dir;
};

void run_synth(const SynthArgs& a) {
  synth::ScenarioConfig cfg;
  cfg.kind = synth::kind_from_string(a.kind);
  cfg.num_objects = a.objects;
  cfg.length = a.frames;
  cfg.feature_dim = a.feature_dim;
  cfg.seed = a.seed;
  cfg.feature_noise = a.feature_noise;
  cfg.box_noise = a.box_noise;
  cfg.miss_rate = a.miss_rate;
  for (const std::string& g : a.gaps) {
    const auto parts = split(g, ':');
    if (parts.size() != 3) throw ValidationError("gap must be 'object:start:length'");
    cfg.gaps.push_back({std::stoi(parts[0]), std::stoi(parts[1]), std::stoi(parts[2])});
  }
  for (const std::string& p : a.pairs) {
    const auto parts = split(p, ':');
    if (parts.size() != 2) throw ValidationError("lookalike pair must be 'a:b'");
    cfg.lookalike_pairs.emplace_back(std::stoi(parts[0]), std::stoi(parts[1]));
  }

  const synth::SynthOutput out = synth::generate(cfg);
  fs::create_directories(a.out_dir);
  io::write_file((fs::path(a.out_dir) / "det.txt").string(),
                 io::write_detections(out.detections));
  io::write_file((fs::path(a.out_dir) / "gt.txt").string(), io::write_ground_truth(out.gt));
  io::write_file((fs::path(a.out_dir) / "feat.txt").string(),
                 io::write_features(out.detections));
}

// --- segment ---------------------------------------------------------------

struct SegmentArgs {
  std::string dets, feats, out;
  kfe::QConfig qcfg{.min_len = 2, .max_len = 8};
};

void run_segment(const SegmentArgs& a) {
  a.qcfg.validate();
  const Sequence seq = load_sequence(a.dets, a.feats);
  const kfe::TrainResult result = kfe::train_kfe(seq, a.qcfg);
  io::write_file(a.out, kfe::write_strategy(result.best));
}

// --- fuse ------------------------------------------------------------------

struct FuseArgs {
  std::string dets, feats, out, weights;
  std::string mode = "average";
  double a = 0.4;
  int m = 4;
  std::uint64_t seed = 0;
};

void run_fuse(const FuseArgs& args) {
  Sequence seq = load_sequence(args.dets, args.feats);
  iff::FusionConfig cfg;
  cfg.mode = fusion_mode_from(args.mode);
  cfg.a = args.a;
  cfg.m = args.m;
  iff::GcnLayer layer;
  const iff::GcnLayer* layer_ptr = nullptr;
  if (cfg.mode == iff::FusionMode::kGcn) {
    layer = args.weights.empty() ? iff::GcnLayer::init(seq.feature_dim, args.seed)
                                 : iff::parse_gcn_weights(io::read_file(args.weights));
    layer_ptr = &layer;
  }
  iff::fuse_sequence(seq, cfg, layer_ptr);
  io::write_file(args.out, io::write_features(seq));
}

// --- track -----------------------------------------------------------------

struct TrackArgs {
  std::string dets, feats, strategy, scorer, gcn_weights, out;
  std::string fusion_mode;  // empty = no fusion inside track
  double a = 0.4;
  int m = 4;
  assoc::TrackConfig track;
};

void run_track(const TrackArgs& args) {
  const Sequence seq = load_sequence(args.dets, args.feats);
  const kfe::SegmentationStrategy strategy =
      kfe::parse_strategy(io::read_file(args.strategy));
  const assoc::EdgeScorer scorer = args.scorer.empty()
                                       ? assoc::EdgeScorer::defaults(args.track.levels)
                                       : assoc::parse_scorer(io::read_file(args.scorer));

  std::optional<iff::FusionConfig> fusion;
  iff::GcnLayer layer;
  const iff::GcnLayer* layer_ptr = nullptr;
  if (!args.fusion_mode.empty()) {
    iff::FusionConfig cfg;
    cfg.mode = fusion_mode_from(args.fusion_mode);
    cfg.a = args.a;
    cfg.m = args.m;
    fusion = cfg;
    if (cfg.mode == iff::FusionMode::kGcn) {
      layer = args.gcn_weights.empty()
                  ? iff::GcnLayer::init(seq.feature_dim, 0)
                  : iff::parse_gcn_weights(io::read_file(args.gcn_weights));
      layer_ptr = &layer;
    }
  }

  const TrackSet tracks =
      assoc::track_sequence(seq, strategy, fusion, layer_ptr, scorer, args.track);
  io::write_file(args.out, io::write_results(tracks));
}

// --- eval ------------------------------------------------------------------

struct EvalArgs {
  std::vector<std::string> results, gts, names;
  std::string out;
};

void run_eval(const EvalArgs& args) {
  if (args.results.size() != args.gts.size()) {
    throw ValidationError("--results and --gt need the same number of files");
  }
  std::vector<metrics::MetricReport> rows;
  for (std::size_t i = 0; i < args.results.size(); ++i) {
    const TrackSet preds = io::parse_results(io::read_file(args.results[i]));
    const TrackSet gt = io::parse_ground_truth(io::read_file(args.gts[i]));
    metrics::MetricReport r = metrics::evaluate(preds, gt);
    r.name = i < args.names.size() ? args.names[i]
                                   : fs::path(args.results[i]).stem().string();
    rows.push_back(std::move(r));
  }
  io::write_file(args.out, metrics::report_csv(rows, true));
}

// --- ablate ------------------------------------------------------------------

struct AblateArgs {
  std::string kind = "occlusion";
  int objects = 5;
  int frames = 60;
  int feature_dim = 16;
  double feature_noise = 0.05, box_noise = 1.0, miss_rate = 0.02;
  int seeds = 20;
  std::uint64_t base_seed = 1;
  std::string variants = "baseline,iff,kfe,both";
  std::string sweep_a;
  std::string out, detail_out, scorer;
  long long episodes = 3000;
  kfe::QConfig qcfg{.min_len = 2, .max_len = 6};
  std::string fusion_mode = "gcn";
  double a = 0.4;
  int m = 4;
  assoc::TrackConfig track;
  std::uint64_t gcn_seed = 99;
};

void run_ablate(const AblateArgs& args) {
  ablation::AblationConfig cfg;
  cfg.scenario.kind = synth::kind_from_string(args.kind);
  cfg.scenario.num_objects = args.objects;
  cfg.scenario.length = args.frames;
  cfg.scenario.feature_dim = args.feature_dim;
  cfg.scenario.feature_noise = args.feature_noise;
  cfg.scenario.box_noise = args.box_noise;
  cfg.scenario.miss_rate = args.miss_rate;
  cfg.variants = split(args.variants, ',');
  cfg.num_seeds = args.seeds;
  cfg.base_seed = args.base_seed;
  cfg.qcfg = args.qcfg;
  cfg.qcfg.episodes = args.episodes;
  cfg.fusion.mode = fusion_mode_from(args.fusion_mode);
  cfg.fusion.a = args.a;
  cfg.fusion.m = args.m;
  cfg.track = args.track;
  cfg.scorer = args.scorer.empty() ? assoc::EdgeScorer::defaults(args.track.levels)
                                   : assoc::parse_scorer(io::read_file(args.scorer));
  cfg.gcn_seed = args.gcn_seed;
  if (!args.sweep_a.empty()) {
    const auto parts = split(args.sweep_a, ':');
    if (parts.size() != 3) throw ValidationError("--sweep-a must be 'start:end:step'");
    cfg.sweep_a = ablation::SweepSpec{std::stod(parts[0]), std::stod(parts[1]),
                                      std::stod(parts[2])};
  }
  cfg.threads = env_threads(static_cast<std::size_t>(cfg.num_seeds) *
                            (cfg.sweep_a ? 11 : cfg.variants.size()));

  const auto cells = ablation::run_ablation(cfg);
  io::write_file(args.out, ablation::ablation_csv(cells));
  if (!args.detail_out.empty()) {
    io::write_file(args.detail_out, ablation::ablation_detail_csv(cells));
  }
}

// --- report ------------------------------------------------------------------

void run_report(const std::string& in, const std::string& out) {
  const std::string text = io::read_file(in);
  std::vector<std::vector<std::string>> rows;
  for (const std::string& line : split(text, '\n')) {
    if (line.empty()) continue;
    rows.push_back(split(line, ','));
  }
  if (rows.empty()) throw ValidationError("empty csv: " + in);
  std::vector<std::size_t> width;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c >= width.size()) width.push_back(0);
      width[c] = std::max(width[c], row[c].size());
    }
  }
  std::string table;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) table += "  ";
      table += row[c];
      table.append(width[c] - row[c].size(), ' ');
    }
    table += '\n';
  }
  if (out.empty()) {
    std::cout << table;
  } else {
    io::write_file(out, table);
  }
}

void add_track_flags(CLI::App* cmd, assoc::TrackConfig& track) {
  cmd->add_option("--levels", track.levels, "Hierarchy merge levels");
  cmd->add_option("--max-candidates", track.max_candidates, "Successor candidates per tracklet");
  cmd->add_option("--threshold", track.merge_threshold, "Merge score threshold");
  cmd->add_option("--base-iou", track.base_iou, "Frame-to-frame IoU acceptance");
  cmd->add_option("--base-window", track.base_window,
                  "Level-1 gap window (0 = max segment length)");
}

void add_q_flags(CLI::App* cmd, kfe::QConfig& q) {
  cmd->add_option("--min-len", q.min_len, "Shortest segment length u");
  cmd->add_option("--max-len", q.max_len, "Longest segment length n");
  cmd->add_option("--epsilon", q.epsilon, "Exploration rate");
  cmd->add_option("--learn-rate", q.learn_rate, "Q-table learning rate");
  cmd->add_option("--discount", q.discount, "Discount factor");
  cmd->add_option("--delta", q.delta, "Reward scale");
  cmd->add_option("--xi", q.xi, "Reward offset");
  cmd->add_option("--episode-cap", q.episode_cap, "Cap on the default episode formula");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kfmot - key-frame mining multi-object tracking toolkit"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic scenario");
  synth_cmd->set_config("--config");
  synth_cmd->add_option("--kind", synth_args.kind,
                        "occlusion | lookalike | crossing | random_walk");
  synth_cmd->add_option("--objects", synth_args.objects, "Number of objects");
  synth_cmd->add_option("--frames", synth_args.frames, "Sequence length");
  synth_cmd->add_option("--feature-dim", synth_args.feature_dim, "Feature dimension");
  synth_cmd->add_option("--seed", synth_args.seed, "Random seed");
  synth_cmd->add_option("--feature-noise", synth_args.feature_noise, "Feature jitter sigma");
  synth_cmd->add_option("--box-noise", synth_args.box_noise, "Box jitter sigma");
  synth_cmd->add_option("--miss-rate", synth_args.miss_rate, "Missed-detection rate");
  synth_cmd->add_option("--gap", synth_args.gaps, "Occlusion gap object:start:length");
  synth_cmd->add_option("--lookalike-pair", synth_args.pairs, "Lookalike pair a:b");
  synth_cmd->add_option("--out-dir", synth_args.out_dir, "Output directory")->required();
  synth_cmd->callback([&] { run_synth(synth_args); });

  SegmentArgs seg_args;
  auto* seg_cmd = app.add_subcommand("segment", "Train the key-frame segmentation agent");
  seg_cmd->set_config("--config");
  seg_cmd->add_option("--dets", seg_args.dets, "Detection file")
      ->required()
      ->check(CLI::ExistingFile);
  seg_cmd->add_option("--feats", seg_args.feats, "Feature file")
      ->required()
      ->check(CLI::ExistingFile);
  add_q_flags(seg_cmd, seg_args.qcfg);
  seg_cmd->add_option("--episodes", seg_args.qcfg.episodes,
                      "Training episodes (0 = paper formula)");
  seg_cmd->add_option("--seed", seg_args.qcfg.seed, "Random seed");
  seg_cmd->add_option("--out", seg_args.out, "Strategy output file")->required();
  seg_cmd->callback([&] { run_segment(seg_args); });

  FuseArgs fuse_args;
  auto* fuse_cmd = app.add_subcommand("fuse", "Intra-frame feature fusion");
  fuse_cmd->set_config("--config");
  fuse_cmd->add_option("--dets", fuse_args.dets, "Detection file")
      ->required()
      ->check(CLI::ExistingFile);
  fuse_cmd->add_option("--feats", fuse_args.feats, "Feature file")
      ->required()
      ->check(CLI::ExistingFile);
  fuse_cmd->add_option("--mode", fuse_args.mode, "average | gcn");
  fuse_cmd->add_option("--a", fuse_args.a, "Self-feature ratio a (b = 1 - a)");
  fuse_cmd->add_option("--m", fuse_args.m, "Neighbour count");
  fuse_cmd->add_option("--weights", fuse_args.weights, "GCN weights file")
      ->check(CLI::ExistingFile);
  fuse_cmd->add_option("--seed", fuse_args.seed, "GCN init seed when no weights given");
  fuse_cmd->add_option("--out", fuse_args.out, "Fused feature output file")->required();
  fuse_cmd->callback([&] { run_fuse(fuse_args); });

  TrackArgs track_args;
  auto* track_cmd = app.add_subcommand("track", "Hierarchical tracklet association");
  track_cmd->set_config("--config");
  track_cmd->add_option("--dets", track_args.dets, "Detection file")
      ->required()
      ->check(CLI::ExistingFile);
  track_cmd->add_option("--feats", track_args.feats, "Feature file")
      ->required()
      ->check(CLI::ExistingFile);
  track_cmd->add_option("--strategy", track_args.strategy, "Segmentation strategy file")
      ->required()
      ->check(CLI::ExistingFile);
  track_cmd->add_option("--scorer", track_args.scorer, "Edge scorer weights file")
      ->check(CLI::ExistingFile);
  track_cmd->add_option("--gcn-weights", track_args.gcn_weights, "GCN weights file")
      ->check(CLI::ExistingFile);
  track_cmd->add_option("--fusion-mode", track_args.fusion_mode,
                        "Apply fusion inside track: average | gcn");
  track_cmd->add_option("--a", track_args.a, "Fusion ratio");
  track_cmd->add_option("--m", track_args.m, "Fusion neighbour count");
  add_track_flags(track_cmd, track_args.track);
  track_cmd->add_option("--out", track_args.out, "Result file")->required();
  track_cmd->callback([&] { run_track(track_args); });

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "HOTA-protocol evaluation");
  eval_cmd->set_config("--config");
  eval_cmd->add_option("--results", eval_args.results, "Result file(s)")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--gt", eval_args.gts, "Ground-truth file(s)")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--names", eval_args.names, "Sequence names for the report");
  eval_cmd->add_option("--out", eval_args.out, "Report CSV")->required();
  eval_cmd->callback([&] { run_eval(eval_args); });

  AblateArgs ab_args;
  auto* ab_cmd = app.add_subcommand("ablate", "Variant ablation on synthetic suites");
  ab_cmd->set_config("--config");
  ab_cmd->add_option("--kind", ab_args.kind, "Scenario kind");
  ab_cmd->add_option("--objects", ab_args.objects, "Number of objects");
  ab_cmd->add_option("--frames", ab_args.frames, "Sequence length");
  ab_cmd->add_option("--feature-dim", ab_args.feature_dim, "Feature dimension");
  ab_cmd->add_option("--feature-noise", ab_args.feature_noise, "Feature jitter sigma");
  ab_cmd->add_option("--box-noise", ab_args.box_noise, "Box jitter sigma");
  ab_cmd->add_option("--miss-rate", ab_args.miss_rate, "Missed-detection rate");
  ab_cmd->add_option("--seeds", ab_args.seeds, "Seeds per variant");
  ab_cmd->add_option("--base-seed", ab_args.base_seed, "First seed");
  ab_cmd->add_option("--variants", ab_args.variants, "Comma list: baseline,iff,kfe,both");
  ab_cmd->add_option("--sweep-a", ab_args.sweep_a, "Fusion ratio sweep start:end:step");
  ab_cmd->add_option("--episodes", ab_args.episodes, "KFE episodes per cell");
  add_q_flags(ab_cmd, ab_args.qcfg);
  ab_cmd->add_option("--fusion-mode", ab_args.fusion_mode, "average | gcn");
  ab_cmd->add_option("--a", ab_args.a, "Fusion ratio");
  ab_cmd->add_option("--m", ab_args.m, "Fusion neighbour count");
  ab_cmd->add_option("--scorer", ab_args.scorer, "Edge scorer weights file")
      ->check(CLI::ExistingFile);
  ab_cmd->add_option("--gcn-seed", ab_args.gcn_seed, "GCN layer init seed");
  add_track_flags(ab_cmd, ab_args.track);
  ab_cmd->add_option("--out", ab_args.out, "Aggregated CSV")->required();
  ab_cmd->add_option("--detail-out", ab_args.detail_out, "Per-cell CSV");
  ab_cmd->callback([&] { run_ablate(ab_args); });

  std::string report_in, report_out;
  auto* report_cmd = app.add_subcommand("report", "Pretty-print a CSV report");
  report_cmd->add_option("--in", report_in, "Input CSV")->required()->check(CLI::ExistingFile);
  report_cmd->add_option("--out", report_out, "Output file (stdout when omitted)");
  report_cmd->callback([&] { run_report(report_in, report_out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    app.exit(e);
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const kfmot::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
