#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "kfmot/types.hpp"

namespace kfmot::io {

/// Shortest round-trip decimal form of v ("1", "0.5", "10.25", ...).
/// Every writer below uses this, so write/parse cycles are exact.
std::string format_double(double v);

/// Parse MOT detection lines `frame,id,left,top,width,height,conf[,x,y,z]`.
/// LN is the max frame index seen unless ln_override > 0.
Sequence parse_detections(const std::string& text, int ln_override = 0);

/// Parse a feature file (header `D=<int>`, rows `frame,ordinal,v0..v{D-1}`)
/// into (frame, ordinal) -> vector. dim_out receives D.
std::map<std::pair<int, int>, std::vector<double>> parse_feature_file(
    const std::string& text, int* dim_out = nullptr);

/// Attach parsed features to a sequence by within-frame ordinal.
/// Every detection must end up with a D-vector.
void attach_features(Sequence& seq, const std::string& feature_text);

/// L2-normalized mean of the detection features in frame t; the zero vector
/// for an empty frame.
FrameFeature frame_feature(const Sequence& seq, int t);

/// MOT result lines `frame,id,left,top,width,height,conf,-1,-1,-1`,
/// sorted by frame then id.
std::string write_results(const TrackSet& tracks);

/// Parse result lines back into a TrackSet.
TrackSet parse_results(const std::string& text);

/// Parse ground-truth lines `frame,id,l,t,w,h,flag,class,visibility`;
/// keeps only flag=1, class=1 rows (MOT pedestrian convention).
TrackSet parse_ground_truth(const std::string& text);

std::string write_detections(const Sequence& seq);
std::string write_ground_truth(const TrackSet& gt);
std::string write_features(const Sequence& seq);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace kfmot::io
