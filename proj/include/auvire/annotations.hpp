#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "auvire/tensor.hpp"

namespace auvire {

struct Interval {
  double start = 0.0;
  double end = 0.0;
  double length() const { return end - start; }
};

// Segment-level ground truth for one video.
struct SegmentAnnotation {
  std::string id;
  std::vector<Interval> segments;  // fake spans, seconds, non-overlapping
  double duration = 0.0;
  double fps = 0.0;
};

// Frame-level targets. offsets[tau] holds distances in seconds from the
// frame centre to the covering fake segment's start and end.
struct FrameAnnotation {
  std::vector<std::uint8_t> fake;
  std::vector<std::array<double, 2>> offsets;
  std::vector<std::uint8_t> valid;
  double duration = 0.0;
  double fps = 0.0;

  int frames() const { return static_cast<int>(fake.size()); }
};

// Rasterize segments onto frame centres (tau + 0.5) / fps; a frame is fake
// when its centre lies in [start, end) of some segment.
inline FrameAnnotation build_frame_targets(const std::vector<Interval>& segments, int t, double fps) {
  if (t <= 0) throw contract_error("build_frame_targets: t must be positive");
  if (!(fps > 0)) throw contract_error("build_frame_targets: fps must be positive");
  for (const Interval& s : segments)
    if (!(s.end > s.start)) throw contract_error("build_frame_targets: empty segment");
  std::vector<Interval> sorted = segments;
  std::sort(sorted.begin(), sorted.end(),
            [](const Interval& a, const Interval& b) { return a.start < b.start; });
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i].start < sorted[i - 1].end)
      throw contract_error("build_frame_targets: overlapping segments");
  FrameAnnotation a;
  a.fake.assign(static_cast<std::size_t>(t), 0);
  a.offsets.assign(static_cast<std::size_t>(t), {0.0, 0.0});
  a.valid.assign(static_cast<std::size_t>(t), 1);
  a.fps = fps;
  a.duration = static_cast<double>(t) / fps;
  for (int tau = 0; tau < t; ++tau) {
    const double centre = (tau + 0.5) / fps;
    for (const Interval& s : segments) {
      if (centre >= s.start && centre < s.end) {
        a.fake[static_cast<std::size_t>(tau)] = 1;
        a.offsets[static_cast<std::size_t>(tau)] = {centre - s.start, s.end - centre};
        break;
      }
    }
  }
  return a;
}

// Extend with invalid frames up to t frames; duration is unchanged.
inline FrameAnnotation pad_annotation(FrameAnnotation a, int t) {
  if (t < a.frames()) throw contract_error("pad_annotation: target shorter than annotation");
  a.fake.resize(static_cast<std::size_t>(t), 0);
  a.offsets.resize(static_cast<std::size_t>(t), {0.0, 0.0});
  a.valid.resize(static_cast<std::size_t>(t), 0);
  return a;
}

// 1 when any valid frame is fake.
inline int video_target(const FrameAnnotation& a) {
  for (std::size_t i = 0; i < a.fake.size(); ++i)
    if (a.valid[i] && a.fake[i]) return 1;
  return 0;
}

}  // namespace auvire
