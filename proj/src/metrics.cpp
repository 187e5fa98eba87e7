#include "kfmot/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "kfmot/data_io.hpp"
#include "kfmot/hungarian.hpp"

namespace kfmot::metrics {

namespace {

constexpr int kNumAlphas = 19;

double alpha_at(int i) { return 0.05 * (i + 1); }  // 0.05 .. 0.95

struct FrameEntry {
  int id;
  Box box;
};

// Frame-major view of a TrackSet over [1, max frame].
std::map<int, std::vector<FrameEntry>> by_frame(const TrackSet& ts) {
  std::map<int, std::vector<FrameEntry>> out;
  for (const auto& [id, entries] : ts.tracks) {
    for (const auto& [frame, box] : entries) out[frame].push_back({id, box});
  }
  return out;
}

std::set<int> all_frames(const std::map<int, std::vector<FrameEntry>>& a,
                         const std::map<int, std::vector<FrameEntry>>& b) {
  std::set<int> frames;
  for (const auto& [f, v] : a) frames.insert(f);
  for (const auto& [f, v] : b) frames.insert(f);
  return frames;
}

const std::vector<FrameEntry>& entries_at(const std::map<int, std::vector<FrameEntry>>& m,
                                          int frame) {
  static const std::vector<FrameEntry> empty;
  auto it = m.find(frame);
  return it == m.end() ? empty : it->second;
}

}  // namespace

double iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.right(), b.right()) - std::max(a.left, b.left));
  const double iy = std::max(0.0, std::min(a.bottom(), b.bottom()) - std::max(a.top, b.top));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni <= 0.0 ? 0.0 : inter / uni;
}

FrameMatch match_frame(const std::vector<Box>& preds, const std::vector<Box>& gts,
                       double alpha) {
  FrameMatch out;
  std::vector<std::vector<double>> sim(preds.size(), std::vector<double>(gts.size(), 0.0));
  for (std::size_t p = 0; p < preds.size(); ++p) {
    for (std::size_t g = 0; g < gts.size(); ++g) sim[p][g] = iou(preds[p], gts[g]);
  }
  out.matches = max_similarity_matching(sim, alpha);
  std::vector<char> pred_used(preds.size(), 0), gt_used(gts.size(), 0);
  for (const auto& [p, g] : out.matches) {
    pred_used[p] = 1;
    gt_used[g] = 1;
  }
  for (std::size_t p = 0; p < preds.size(); ++p) {
    if (!pred_used[p]) out.unmatched_preds.push_back(static_cast<int>(p));
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (!gt_used[g]) out.unmatched_gts.push_back(static_cast<int>(g));
  }
  return out;
}

MotaResult compute_mota(const TrackSet& preds, const TrackSet& gts, double alpha_match) {
  MotaResult res;
  res.gt_total = static_cast<long long>(gts.total_boxes());
  const auto pred_frames = by_frame(preds);
  const auto gt_frames = by_frame(gts);

  std::map<int, int> last_assigned;   // gt id -> most recent pred id ever
  std::map<int, int> prev_frame_map;  // gt id -> pred id in the previous frame

  for (int frame : all_frames(pred_frames, gt_frames)) {
    const auto& ps = entries_at(pred_frames, frame);
    const auto& gs = entries_at(gt_frames, frame);

    std::vector<char> p_used(ps.size(), 0), g_used(gs.size(), 0);
    std::map<int, int> frame_map;

    // Carry over matches from the previous frame while still above threshold.
    for (std::size_t g = 0; g < gs.size(); ++g) {
      auto it = prev_frame_map.find(gs[g].id);
      if (it == prev_frame_map.end()) continue;
      for (std::size_t p = 0; p < ps.size(); ++p) {
        if (p_used[p] || ps[p].id != it->second) continue;
        if (iou(ps[p].box, gs[g].box) >= alpha_match) {
          p_used[p] = 1;
          g_used[g] = 1;
          frame_map[gs[g].id] = ps[p].id;
        }
        break;
      }
    }

    // Hungarian on whatever is left.
    std::vector<int> p_rest, g_rest;
    for (std::size_t p = 0; p < ps.size(); ++p) {
      if (!p_used[p]) p_rest.push_back(static_cast<int>(p));
    }
    for (std::size_t g = 0; g < gs.size(); ++g) {
      if (!g_used[g]) g_rest.push_back(static_cast<int>(g));
    }
    if (!p_rest.empty() && !g_rest.empty()) {
      std::vector<std::vector<double>> sim(p_rest.size(),
                                           std::vector<double>(g_rest.size(), 0.0));
      for (std::size_t i = 0; i < p_rest.size(); ++i) {
        for (std::size_t j = 0; j < g_rest.size(); ++j) {
          sim[i][j] = iou(ps[p_rest[i]].box, gs[g_rest[j]].box);
        }
      }
      for (const auto& [i, j] : max_similarity_matching(sim, alpha_match)) {
        p_used[p_rest[i]] = 1;
        g_used[g_rest[j]] = 1;
        frame_map[gs[g_rest[j]].id] = ps[p_rest[i]].id;
      }
    }

    for (const auto& [gid, pid] : frame_map) {
      auto it = last_assigned.find(gid);
      if (it != last_assigned.end() && it->second != pid) ++res.ids;
      last_assigned[gid] = pid;
    }
    res.fp += static_cast<long long>(ps.size()) - static_cast<long long>(frame_map.size());
    res.fn += static_cast<long long>(gs.size()) - static_cast<long long>(frame_map.size());
    prev_frame_map = std::move(frame_map);
  }

  if (res.gt_total > 0) {
    res.mota = 1.0 - static_cast<double>(res.fn + res.fp + res.ids) /
                         static_cast<double>(res.gt_total);
  }
  return res;
}

Idf1Result compute_idf1(const TrackSet& preds, const TrackSet& gts, double alpha_match) {
  Idf1Result res;
  const long long gt_len = static_cast<long long>(gts.total_boxes());
  const long long pred_len = static_cast<long long>(preds.total_boxes());
  if (gt_len == 0) {
    res.idfp = pred_len;
    return res;
  }

  std::vector<int> gt_ids, pred_ids;
  for (const auto& [id, t] : gts.tracks) gt_ids.push_back(id);
  for (const auto& [id, t] : preds.tracks) pred_ids.push_back(id);

  // Pairwise per-frame hit counts between trajectories.
  std::vector<std::vector<double>> overlap(pred_ids.size(),
                                           std::vector<double>(gt_ids.size(), 0.0));
  for (std::size_t p = 0; p < pred_ids.size(); ++p) {
    const auto& pt = preds.tracks.at(pred_ids[p]);
    for (std::size_t g = 0; g < gt_ids.size(); ++g) {
      const auto& gt = gts.tracks.at(gt_ids[g]);
      std::size_t i = 0, j = 0;
      double hits = 0.0;
      while (i < pt.size() && j < gt.size()) {
        if (pt[i].first == gt[j].first) {
          if (iou(pt[i].second, gt[j].second) >= alpha_match) hits += 1.0;
          ++i;
          ++j;
        } else if (pt[i].first < gt[j].first) {
          ++i;
        } else {
          ++j;
        }
      }
      overlap[p][g] = hits;
    }
  }

  for (const auto& [p, g] : max_similarity_matching(overlap, 0.5)) {
    res.idtp += static_cast<long long>(overlap[p][g]);
  }
  res.idfn = gt_len - res.idtp;
  res.idfp = pred_len - res.idtp;
  res.idf1 = 2.0 * static_cast<double>(res.idtp) /
             static_cast<double>(2 * res.idtp + res.idfp + res.idfn);
  return res;
}

MetricReport compute_hota(const TrackSet& preds, const TrackSet& gts) {
  MetricReport report;
  report.gt_total = static_cast<long long>(gts.total_boxes());
  if (report.gt_total == 0) return report;

  const auto pred_frames = by_frame(preds);
  const auto gt_frames = by_frame(gts);
  const auto frames = all_frames(pred_frames, gt_frames);

  long long pred_count_total = 0;
  std::map<int, long long> pred_counts, gt_counts;  // per-id detection counts
  for (const auto& [id, t] : preds.tracks) {
    pred_counts[id] = static_cast<long long>(t.size());
    pred_count_total += static_cast<long long>(t.size());
  }
  for (const auto& [id, t] : gts.tracks) gt_counts[id] = static_cast<long long>(t.size());

  report.per_alpha.resize(kNumAlphas);
  for (int ai = 0; ai < kNumAlphas; ++ai) {
    const double alpha = alpha_at(ai);
    AlphaMetrics& am = report.per_alpha[ai];
    am.alpha = alpha;

    std::map<std::pair<int, int>, long long> tp_pairs;  // (pred id, gt id) -> count
    long long tp = 0;
    for (int frame : frames) {
      const auto& ps = entries_at(pred_frames, frame);
      const auto& gs = entries_at(gt_frames, frame);
      std::vector<Box> pb, gb;
      pb.reserve(ps.size());
      gb.reserve(gs.size());
      for (const auto& e : ps) pb.push_back(e.box);
      for (const auto& e : gs) gb.push_back(e.box);
      const FrameMatch fm = match_frame(pb, gb, alpha);
      for (const auto& [p, g] : fm.matches) {
        ++tp_pairs[{ps[p].id, gs[g].id}];
        ++tp;
      }
    }
    am.tp = tp;
    am.fp = pred_count_total - tp;
    am.fn = report.gt_total - tp;

    double ass_sum = 0.0;
    for (const auto& [pair, count] : tp_pairs) {
      const auto& [pid, gid] = pair;
      // A(c) = TPA / (TPA + FNA + FPA) with FNA/FPA counted over the whole
      // sequence: every detection of the gt (pred) id not in this pair.
      const double tpa = static_cast<double>(count);
      const double denom =
          static_cast<double>(gt_counts[gid] + pred_counts[pid]) - tpa;
      ass_sum += tpa * (tpa / denom);  // weighted by the TPs sharing the pair
    }
    am.ass_sum = ass_sum;
    am.deta = static_cast<double>(tp) / static_cast<double>(am.tp + am.fn + am.fp);
    am.assa = tp > 0 ? ass_sum / static_cast<double>(tp) : 0.0;
    am.hota = std::sqrt(am.deta * am.assa);
  }

  double h = 0.0, d = 0.0, a = 0.0;
  for (const auto& am : report.per_alpha) {
    h += am.hota;
    d += am.deta;
    a += am.assa;
  }
  report.hota = h / kNumAlphas;
  report.deta = d / kNumAlphas;
  report.assa = a / kNumAlphas;
  return report;
}

MetricReport evaluate(const TrackSet& preds, const TrackSet& gts) {
  MetricReport report = compute_hota(preds, gts);
  const MotaResult mota = compute_mota(preds, gts);
  report.mota = mota.mota;
  report.ids = mota.ids;
  report.fp = mota.fp;
  report.fn = mota.fn;
  report.gt_total = mota.gt_total;
  const Idf1Result idf1 = compute_idf1(preds, gts);
  report.idf1 = idf1.idf1;
  report.idtp = idf1.idtp;
  report.idfp = idf1.idfp;
  report.idfn = idf1.idfn;
  return report;
}

MetricReport combine(const std::vector<MetricReport>& reports) {
  MetricReport out;
  out.name = "COMBINED";
  out.per_alpha.resize(kNumAlphas);
  for (int ai = 0; ai < kNumAlphas; ++ai) out.per_alpha[ai].alpha = alpha_at(ai);

  bool any_gt = false;
  for (const MetricReport& r : reports) {
    out.ids += r.ids;
    out.fp += r.fp;
    out.fn += r.fn;
    out.gt_total += r.gt_total;
    out.idtp += r.idtp;
    out.idfp += r.idfp;
    out.idfn += r.idfn;
    if (r.per_alpha.empty()) continue;
    any_gt = true;
    for (int ai = 0; ai < kNumAlphas; ++ai) {
      out.per_alpha[ai].tp += r.per_alpha[ai].tp;
      out.per_alpha[ai].fp += r.per_alpha[ai].fp;
      out.per_alpha[ai].fn += r.per_alpha[ai].fn;
      out.per_alpha[ai].ass_sum += r.per_alpha[ai].ass_sum;
    }
  }
  if (!any_gt) {
    out.per_alpha.clear();
    return out;
  }

  double h = 0.0, d = 0.0, a = 0.0;
  for (auto& am : out.per_alpha) {
    const long long denom = am.tp + am.fn + am.fp;
    am.deta = denom > 0 ? static_cast<double>(am.tp) / static_cast<double>(denom) : 0.0;
    am.assa = am.tp > 0 ? am.ass_sum / static_cast<double>(am.tp) : 0.0;
    am.hota = std::sqrt(am.deta * am.assa);
    h += am.hota;
    d += am.deta;
    a += am.assa;
  }
  out.hota = h / kNumAlphas;
  out.deta = d / kNumAlphas;
  out.assa = a / kNumAlphas;
  if (out.gt_total > 0) {
    out.mota = 1.0 - static_cast<double>(out.fn + out.fp + out.ids) /
                         static_cast<double>(out.gt_total);
    out.idf1 = 2.0 * static_cast<double>(out.idtp) /
               static_cast<double>(2 * out.idtp + out.idfp + out.idfn);
  }
  return out;
}

namespace {

std::string opt_str(const std::optional<double>& v) {
  return v.has_value() ? io::format_double(*v) : std::string();
}

}  // namespace

std::string report_csv(const std::vector<MetricReport>& rows, bool combined_row) {
  std::string out = "sequence,hota,deta,assa,idf1,mota,ids,fp,fn\n";
  auto emit = [&out](const MetricReport& r) {
    out += r.name;
    out += ',';
    out += opt_str(r.hota);
    out += ',';
    out += opt_str(r.deta);
    out += ',';
    out += opt_str(r.assa);
    out += ',';
    out += opt_str(r.idf1);
    out += ',';
    out += opt_str(r.mota);
    out += ',';
    out += std::to_string(r.ids);
    out += ',';
    out += std::to_string(r.fp);
    out += ',';
    out += std::to_string(r.fn);
    out += '\n';
  };
  for (const MetricReport& r : rows) emit(r);
  if (combined_row) emit(combine(rows));
  return out;
}

}  // namespace kfmot::metrics
