#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace kfmot {

/// Input could not be parsed (malformed line, bad number, bad header).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Well-formed input that violates a documented invariant.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Vector/matrix shape mismatch.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Axis-aligned box, MOT convention: top-left corner plus size, in pixels.
struct Box {
  double left = 0.0;
  double top = 0.0;
  double width = 0.0;
  double height = 0.0;

  double right() const { return left + width; }
  double bottom() const { return top + height; }
  double center_x() const { return left + 0.5 * width; }
  double center_y() const { return top + 0.5 * height; }
  double area() const { return width * height; }

  bool operator==(const Box&) const = default;
};

/// One detected object in one frame.
struct Detection {
  int frame = 0;    // 1-based
  int det_id = -1;  // -1 when unassigned; synthetic data may carry identity
  Box box;
  double confidence = 1.0;
  std::vector<double> feature;
};

/// A full sequence of detections, grouped per frame.
struct Sequence {
  std::string name;
  int length = 0;       // LN, total frame count
  int feature_dim = 0;  // D, 0 until features are attached
  std::map<int, std::vector<Detection>> frames;

  const std::vector<Detection>* detections_at(int frame) const {
    auto it = frames.find(frame);
    return it == frames.end() ? nullptr : &it->second;
  }

  std::size_t total_detections() const {
    std::size_t n = 0;
    for (const auto& [f, dets] : frames) n += dets.size();
    return n;
  }
};

/// Trajectories: track id -> ordered (frame, box) list, frames strictly increasing.
struct TrackSet {
  std::map<int, std::vector<std::pair<int, Box>>> tracks;

  std::size_t total_boxes() const {
    std::size_t n = 0;
    for (const auto& [id, t] : tracks) n += t.size();
    return n;
  }
};

/// Pooled appearance feature of one frame.
struct FrameFeature {
  int frame = 0;
  std::vector<double> vec;
};

}  // namespace kfmot
