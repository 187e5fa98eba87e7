#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kfmot/types.hpp"

namespace kfmot::metrics {

/// Intersection over union of two boxes.
double iou(const Box& a, const Box& b);

/// Per-frame one-to-one matching maximizing total IoU over pairs with
/// IoU >= alpha.
struct FrameMatch {
  std::vector<std::pair<int, int>> matches;  // (pred index, gt index)
  std::vector<int> unmatched_preds;
  std::vector<int> unmatched_gts;
};
FrameMatch match_frame(const std::vector<Box>& preds, const std::vector<Box>& gts,
                       double alpha);

struct MotaResult {
  std::optional<double> mota;  // absent when ground truth is empty
  long long ids = 0;
  long long fp = 0;
  long long fn = 0;
  long long gt_total = 0;
};
/// CLEAR convention: carry over still-valid matches from the previous
/// frame, Hungarian on the rest; a switch is a matched gt whose pred id
/// differs from the pred it was last assigned to.
MotaResult compute_mota(const TrackSet& preds, const TrackSet& gts, double alpha_match = 0.5);

struct Idf1Result {
  std::optional<double> idf1;
  long long idtp = 0;
  long long idfp = 0;
  long long idfn = 0;
};
/// Trajectory-level global matching; IDF1 = 2 IDTP / (2 IDTP + IDFP + IDFN).
Idf1Result compute_idf1(const TrackSet& preds, const TrackSet& gts, double alpha_match = 0.5);

/// One localization threshold's worth of HOTA counts.
struct AlphaMetrics {
  double alpha = 0.0;
  double hota = 0.0;
  double deta = 0.0;
  double assa = 0.0;
  long long tp = 0;
  long long fp = 0;
  long long fn = 0;
  double ass_sum = 0.0;  // sum of A(c) over TPs, for cross-sequence pooling
};

struct MetricReport {
  std::string name;
  std::optional<double> hota, deta, assa, idf1, mota;
  long long ids = 0;
  long long fp = 0;
  long long fn = 0;
  long long gt_total = 0;
  long long idtp = 0, idfp = 0, idfn = 0;
  std::vector<AlphaMetrics> per_alpha;  // 19 thresholds 0.05..0.95
};

/// HOTA over the 19-threshold grid; fills hota/deta/assa and per_alpha.
MetricReport compute_hota(const TrackSet& preds, const TrackSet& gts);

/// Full report: HOTA family plus MOTA/IDS/FP/FN and IDF1.
MetricReport evaluate(const TrackSet& preds, const TrackSet& gts);

/// Pool reports into a COMBINED row (count-weighted, per protocol).
MetricReport combine(const std::vector<MetricReport>& reports);

std::string report_csv(const std::vector<MetricReport>& rows, bool combined_row = true);

}  // namespace kfmot::metrics
