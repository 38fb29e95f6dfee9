#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "auvire/annotations.hpp"
#include "auvire/network.hpp"

namespace auvire {

struct SegmentPrediction {
  double start = 0.0;
  double end = 0.0;
  double score = 0.0;
};

// Value-level copy of the prediction pyramid.
struct PyramidLevel {
  std::vector<double> logits;
  std::vector<std::array<double, 2>> offsets;  // seconds left/right of the anchor
  int stride = 1;
  int valid = 0;
};

struct PyramidOutput {
  std::vector<PyramidLevel> levels;
  int valid_len = 0;
  double fps = 0.0;

  double duration() const { return valid_len / fps; }
};

template <typename T>
PyramidOutput extract_pyramid(const Graph<T>& g, const ForwardResult<T>& fwd) {
  PyramidOutput out;
  out.valid_len = fwd.valid_len;
  out.fps = fwd.fps;
  for (const LevelNodes<T>& lvl : fwd.levels) {
    PyramidLevel pl;
    pl.stride = lvl.stride;
    pl.valid = lvl.valid;
    const Tensor<T>& c = g.value(lvl.cls);
    const Tensor<T>& r = g.value(lvl.reg);
    pl.logits.resize(static_cast<std::size_t>(lvl.valid));
    pl.offsets.resize(static_cast<std::size_t>(lvl.valid));
    for (int i = 0; i < lvl.valid; ++i) {
      pl.logits[static_cast<std::size_t>(i)] = static_cast<double>(c.at(i, 0));
      pl.offsets[static_cast<std::size_t>(i)] = {static_cast<double>(r.at(i, 0)),
                                                 static_cast<double>(r.at(i, 1))};
    }
    out.levels.push_back(std::move(pl));
  }
  return out;
}

inline double stable_sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

struct DecodeConfig {
  int pre_nms_top_n = 200;
  double min_score = 1e-4;
};

// Anchor decoding: position i of a level sits at (i + 0.5) * stride / fps;
// offsets grow the interval left and right. Intervals are clamped to the
// valid duration, empty ones and low scores dropped, survivors kept in
// score order (ties by enumeration order), truncated to pre_nms_top_n.
inline std::vector<SegmentPrediction> decode_segments(const PyramidOutput& pyr,
                                                      const DecodeConfig& cfg = {}) {
  if (cfg.pre_nms_top_n < 1) throw contract_error("decode: pre_nms_top_n must be >= 1");
  const double dur = pyr.duration();
  std::vector<SegmentPrediction> out;
  for (const PyramidLevel& lvl : pyr.levels) {
    for (int i = 0; i < lvl.valid; ++i) {
      const double anchor = (i + 0.5) * lvl.stride / pyr.fps;
      double s = anchor - lvl.offsets[static_cast<std::size_t>(i)][0];
      double e = anchor + lvl.offsets[static_cast<std::size_t>(i)][1];
      s = std::min(std::max(s, 0.0), dur);
      e = std::min(std::max(e, 0.0), dur);
      if (e <= s) continue;
      const double score = stable_sigmoid(lvl.logits[static_cast<std::size_t>(i)]);
      if (score < cfg.min_score) continue;
      out.push_back({s, e, score});
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const SegmentPrediction& a, const SegmentPrediction& b) { return a.score > b.score; });
  if (static_cast<int>(out.size()) > cfg.pre_nms_top_n) out.resize(static_cast<std::size_t>(cfg.pre_nms_top_n));
  return out;
}

inline double iou_1d(const Interval& a, const Interval& b) {
  if (a.end < a.start || b.end < b.start) throw contract_error("iou_1d: end before start");
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = (a.end - a.start) + (b.end - b.start) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// Gaussian score decay: every unselected candidate is damped by
// exp(-iou^2 / sigma) against the latest selection and pruned below min_score.
inline std::vector<SegmentPrediction> soft_nms(std::vector<SegmentPrediction> cands,
                                               double sigma = 0.5, double min_score = 1e-4) {
  if (!(sigma > 0)) throw contract_error("soft_nms: sigma must be positive");
  std::vector<SegmentPrediction> kept;
  kept.reserve(cands.size());
  while (!cands.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < cands.size(); ++i)
      if (cands[i].score > cands[best].score) best = i;
    SegmentPrediction sel = cands[best];
    cands.erase(cands.begin() + static_cast<std::ptrdiff_t>(best));
    kept.push_back(sel);
    std::vector<SegmentPrediction> next;
    next.reserve(cands.size());
    for (const SegmentPrediction& c : cands) {
      const double iou = iou_1d({sel.start, sel.end}, {c.start, c.end});
      SegmentPrediction d = c;
      d.score = c.score * std::exp(-(iou * iou) / sigma);
      if (d.score >= min_score) next.push_back(d);
    }
    cands = std::move(next);
  }
  return kept;
}

// Highest surviving segment score; 0 with no segments.
inline double video_score(const std::vector<SegmentPrediction>& segs) {
  double m = 0.0;
  for (const SegmentPrediction& s : segs) m = std::max(m, s.score);
  return m;
}

}  // namespace auvire
