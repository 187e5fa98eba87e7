#include "kfmot/data_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace kfmot::io {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

double parse_number(std::string_view s, int line_no) {
  double v = 0.0;
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last) {
    throw ParseError("line " + std::to_string(line_no) + ": bad number '" +
                     std::string(s) + "'");
  }
  return v;
}

int parse_int(std::string_view s, int line_no) {
  const double v = parse_number(s, line_no);
  const int i = static_cast<int>(std::llround(v));
  if (static_cast<double>(i) != v) {
    throw ParseError("line " + std::to_string(line_no) + ": expected integer, got '" +
                     std::string(s) + "'");
  }
  return i;
}

// Calls fn(line_no, trimmed_line) for each non-empty, non-comment line.
template <typename Fn>
void for_each_line(const std::string& text, Fn&& fn) {
  std::size_t pos = 0;
  int line_no = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    ++line_no;
    const std::string_view line = trim(std::string_view(text).substr(pos, nl - pos));
    if (!line.empty() && line.front() != '#') fn(line_no, line);
    pos = nl + 1;
    if (nl == text.size()) break;
  }
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

Sequence parse_detections(const std::string& text, int ln_override) {
  Sequence seq;
  for_each_line(text, [&](int line_no, std::string_view line) {
    const auto fields = split_fields(line);
    if (fields.size() < 7) {
      throw ParseError("line " + std::to_string(line_no) +
                       ": expected >= 7 comma-separated fields, got " +
                       std::to_string(fields.size()));
    }
    Detection d;
    d.frame = parse_int(fields[0], line_no);
    d.det_id = parse_int(fields[1], line_no);
    d.box.left = parse_number(fields[2], line_no);
    d.box.top = parse_number(fields[3], line_no);
    d.box.width = parse_number(fields[4], line_no);
    d.box.height = parse_number(fields[5], line_no);
    d.confidence = parse_number(fields[6], line_no);
    if (d.frame < 1) {
      throw ValidationError("line " + std::to_string(line_no) +
                            ": frame index must be >= 1");
    }
    if (d.box.width <= 0.0 || d.box.height <= 0.0) {
      throw ValidationError("line " + std::to_string(line_no) +
                            ": box width/height must be positive");
    }
    seq.frames[d.frame].push_back(d);
    seq.length = std::max(seq.length, d.frame);
  });
  if (ln_override > 0) {
    if (ln_override < seq.length) {
      throw ValidationError("length override " + std::to_string(ln_override) +
                            " is below max frame index " + std::to_string(seq.length));
    }
    seq.length = ln_override;
  }
  return seq;
}

std::map<std::pair<int, int>, std::vector<double>> parse_feature_file(
    const std::string& text, int* dim_out) {
  std::map<std::pair<int, int>, std::vector<double>> out;
  int dim = -1;
  for_each_line(text, [&](int line_no, std::string_view line) {
    if (dim < 0) {
      if (!line.starts_with("D=")) {
        throw ParseError("line " + std::to_string(line_no) +
                         ": feature file must start with a 'D=<int>' header");
      }
      dim = parse_int(line.substr(2), line_no);
      if (dim <= 0) {
        throw ValidationError("feature dimension must be positive");
      }
      return;
    }
    const auto fields = split_fields(line);
    if (static_cast<int>(fields.size()) != dim + 2) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(dim + 2) + " fields (frame, ordinal, " +
                       std::to_string(dim) + " values), got " +
                       std::to_string(fields.size()));
    }
    const int frame = parse_int(fields[0], line_no);
    const int ordinal = parse_int(fields[1], line_no);
    std::vector<double> vec(dim);
    for (int k = 0; k < dim; ++k) vec[k] = parse_number(fields[2 + k], line_no);
    const auto [it, inserted] = out.emplace(std::make_pair(frame, ordinal), std::move(vec));
    if (!inserted) {
      throw ValidationError("line " + std::to_string(line_no) +
                            ": duplicate feature row for frame " + std::to_string(frame) +
                            " ordinal " + std::to_string(ordinal));
    }
  });
  if (dim < 0) throw ParseError("feature file is empty (missing 'D=' header)");
  if (dim_out) *dim_out = dim;
  return out;
}

void attach_features(Sequence& seq, const std::string& feature_text) {
  int dim = 0;
  auto feats = parse_feature_file(feature_text, &dim);
  for (auto& [frame, dets] : seq.frames) {
    for (int ord = 0; ord < static_cast<int>(dets.size()); ++ord) {
      auto it = feats.find({frame, ord});
      if (it == feats.end()) {
        throw ValidationError("missing feature for frame " + std::to_string(frame) +
                              " ordinal " + std::to_string(ord));
      }
      dets[ord].feature = std::move(it->second);
      feats.erase(it);
    }
  }
  if (!feats.empty()) {
    const auto& key = feats.begin()->first;
    throw ValidationError("feature row for frame " + std::to_string(key.first) +
                          " ordinal " + std::to_string(key.second) +
                          " has no matching detection");
  }
  seq.feature_dim = dim;
}

FrameFeature frame_feature(const Sequence& seq, int t) {
  if (t < 1 || t > seq.length) {
    throw std::out_of_range("frame index " + std::to_string(t) +
                            " outside [1, " + std::to_string(seq.length) + "]");
  }
  FrameFeature out;
  out.frame = t;
  out.vec.assign(seq.feature_dim, 0.0);
  const auto* dets = seq.detections_at(t);
  if (!dets || dets->empty()) return out;
  for (const auto& d : *dets) {
    if (static_cast<int>(d.feature.size()) != seq.feature_dim) {
      throw DimensionError("detection feature length " + std::to_string(d.feature.size()) +
                           " != sequence dimension " + std::to_string(seq.feature_dim));
    }
    for (int k = 0; k < seq.feature_dim; ++k) out.vec[k] += d.feature[k];
  }
  double norm_sq = 0.0;
  for (double& x : out.vec) {
    x /= static_cast<double>(dets->size());
    norm_sq += x * x;
  }
  if (norm_sq > 0.0) {
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (double& x : out.vec) x *= inv;
  }
  return out;
}

std::string write_results(const TrackSet& tracks) {
  // (frame, id) ordered rows.
  std::map<std::pair<int, int>, const Box*> rows;
  for (const auto& [id, entries] : tracks.tracks) {
    for (const auto& [frame, box] : entries) rows[{frame, id}] = &box;
  }
  std::string out;
  for (const auto& [key, box] : rows) {
    out += std::to_string(key.first);
    out += ',';
    out += std::to_string(key.second);
    out += ',';
    out += format_double(box->left);
    out += ',';
    out += format_double(box->top);
    out += ',';
    out += format_double(box->width);
    out += ',';
    out += format_double(box->height);
    out += ",1,-1,-1,-1\n";
  }
  return out;
}

namespace {

TrackSet parse_track_lines(const std::string& text, bool gt_filter) {
  struct Row {
    int frame;
    int id;
    Box box;
  };
  std::vector<Row> rows;
  for_each_line(text, [&](int line_no, std::string_view line) {
    const auto fields = split_fields(line);
    if (fields.size() < 7) {
      throw ParseError("line " + std::to_string(line_no) +
                       ": expected >= 7 comma-separated fields, got " +
                       std::to_string(fields.size()));
    }
    if (gt_filter) {
      if (fields.size() < 8) {
        throw ParseError("line " + std::to_string(line_no) +
                         ": ground-truth rows need flag and class fields");
      }
      const int flag = parse_int(fields[6], line_no);
      const int cls = parse_int(fields[7], line_no);
      if (flag != 1 || cls != 1) return;
    }
    Row r;
    r.frame = parse_int(fields[0], line_no);
    r.id = parse_int(fields[1], line_no);
    r.box.left = parse_number(fields[2], line_no);
    r.box.top = parse_number(fields[3], line_no);
    r.box.width = parse_number(fields[4], line_no);
    r.box.height = parse_number(fields[5], line_no);
    if (r.frame < 1) {
      throw ValidationError("line " + std::to_string(line_no) +
                            ": frame index must be >= 1");
    }
    if (r.box.width <= 0.0 || r.box.height <= 0.0) {
      throw ValidationError("line " + std::to_string(line_no) +
                            ": box width/height must be positive");
    }
    rows.push_back(r);
  });
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return a.frame != b.frame ? a.frame < b.frame : a.id < b.id;
  });
  TrackSet out;
  for (const auto& r : rows) {
    auto& track = out.tracks[r.id];
    if (!track.empty() && track.back().first == r.frame) {
      throw ValidationError("track " + std::to_string(r.id) +
                            " appears twice in frame " + std::to_string(r.frame));
    }
    track.emplace_back(r.frame, r.box);
  }
  return out;
}

}  // namespace

TrackSet parse_results(const std::string& text) { return parse_track_lines(text, false); }

TrackSet parse_ground_truth(const std::string& text) { return parse_track_lines(text, true); }

std::string write_detections(const Sequence& seq) {
  std::string out;
  for (const auto& [frame, dets] : seq.frames) {
    for (const auto& d : dets) {
      out += std::to_string(frame);
      out += ",-1,";
      out += format_double(d.box.left);
      out += ',';
      out += format_double(d.box.top);
      out += ',';
      out += format_double(d.box.width);
      out += ',';
      out += format_double(d.box.height);
      out += ',';
      out += format_double(d.confidence);
      out += '\n';
    }
  }
  return out;
}

std::string write_ground_truth(const TrackSet& gt) {
  std::map<std::pair<int, int>, const Box*> rows;
  for (const auto& [id, entries] : gt.tracks) {
    for (const auto& [frame, box] : entries) rows[{frame, id}] = &box;
  }
  std::string out;
  for (const auto& [key, box] : rows) {
    out += std::to_string(key.first);
    out += ',';
    out += std::to_string(key.second);
    out += ',';
    out += format_double(box->left);
    out += ',';
    out += format_double(box->top);
    out += ',';
    out += format_double(box->width);
    out += ',';
    out += format_double(box->height);
    out += ",1,1,1\n";
  }
  return out;
}

std::string write_features(const Sequence& seq) {
  std::string out = "D=" + std::to_string(seq.feature_dim) + "\n";
  for (const auto& [frame, dets] : seq.frames) {
    for (int ord = 0; ord < static_cast<int>(dets.size()); ++ord) {
      out += std::to_string(frame);
      out += ',';
      out += std::to_string(ord);
      for (double v : dets[ord].feature) {
        out += ',';
        out += format_double(v);
      }
      out += '\n';
    }
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write file: " + path);
  out << content;
}

}  // namespace kfmot::io
