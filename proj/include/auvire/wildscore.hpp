#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "auvire/postprocess.hpp"
#include "auvire/tensor.hpp"

namespace auvire {

struct ValidityConfig {
  double talk_threshold = 2.0;
  double min_segment_s = 2.0;
  double chunk_s = 20.0;

  void validate() const {
    if (!(talk_threshold >= 0)) throw config_error("validity: talk_threshold must be >= 0");
    if (!(min_segment_s > 0)) throw config_error("validity: min_segment_s must be positive");
    if (!(chunk_s > min_segment_s)) throw config_error("validity: chunk_s must exceed min_segment_s");
  }
};

// A frame is "talking" when its visual features moved at least threshold
// (L2) since the previous frame. Frame 0 copies frame 1's verdict; clips
// shorter than 2 frames are all zeros.
template <typename T>
std::vector<std::uint8_t> talking_mask(const Tensor<T>& x_v, double threshold = 2.0) {
  if (x_v.rank() != 2) throw contract_error("talking_mask: features must be rank 2");
  const int t = x_v.shape[0], d = x_v.shape[1];
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(t), 0);
  if (t < 2) return mask;
  for (int tau = 1; tau < t; ++tau) {
    double ss = 0.0;
    for (int j = 0; j < d; ++j) {
      const double diff = static_cast<double>(x_v.at(tau, j)) - static_cast<double>(x_v.at(tau - 1, j));
      ss += diff * diff;
    }
    mask[static_cast<std::size_t>(tau)] = std::sqrt(ss) >= threshold ? 1 : 0;
  }
  mask[0] = mask[1];
  return mask;
}

struct ValidSegments {
  std::vector<Interval> spans;  // disjoint, ascending

  double measure() const {
    double m = 0.0;
    for (const Interval& s : spans) m += s.length();
    return m;
  }
};

// Intersect presence and talking masks, turn frame runs into second spans
// (frame tau covers [tau/fps, (tau+1)/fps)), and drop spans shorter than
// min_segment_s.
inline ValidSegments valid_segments(const std::vector<std::uint8_t>& presence,
                                    const std::vector<std::uint8_t>& talking, double fps,
                                    double min_segment_s = 2.0) {
  if (presence.size() != talking.size()) throw contract_error("valid_segments: mask size mismatch");
  if (!(fps > 0)) throw contract_error("valid_segments: fps must be positive");
  ValidSegments out;
  const std::size_t t = presence.size();
  std::size_t tau = 0;
  while (tau < t) {
    if (!(presence[tau] && talking[tau])) {
      ++tau;
      continue;
    }
    std::size_t end = tau;
    while (end + 1 < t && presence[end + 1] && talking[end + 1]) ++end;
    Interval span{static_cast<double>(tau) / fps, static_cast<double>(end + 1) / fps};
    if (span.length() >= min_segment_s) out.spans.push_back(span);
    tau = end + 1;
  }
  return out;
}

// Split every valid span into consecutive scoring windows of chunk_s
// seconds. A trailing remainder shorter than min_segment_s merges into its
// predecessor within the same span, or is dropped when it stands alone.
inline std::vector<Interval> chunk_plan(const ValidSegments& valid, double chunk_s,
                                        double min_segment_s) {
  if (!(chunk_s > 0)) throw contract_error("chunk_plan: chunk_s must be positive");
  std::vector<Interval> out;
  for (const Interval& span : valid.spans) {
    const double len = span.length();
    if (!(len > 0)) continue;
    int n_full = static_cast<int>(std::floor(len / chunk_s));
    if (len - n_full * chunk_s <= 1e-12 && n_full > 0) n_full = static_cast<int>(std::round(len / chunk_s));
    const std::size_t first = out.size();
    for (int i = 0; i < n_full; ++i)
      out.push_back({span.start + i * chunk_s, span.start + (i + 1) * chunk_s});
    const double tail_start = span.start + n_full * chunk_s;
    const double tail = span.end - tail_start;
    if (tail > 1e-12) {
      if (tail >= min_segment_s)
        out.push_back({tail_start, span.end});
      else if (out.size() > first)
        out.back().end = span.end;
      // else: a lone sub-minimum tail is dropped
    } else if (out.size() > first) {
      out.back().end = span.end;
    }
  }
  return out;
}

namespace detail {

// Union of intervals clipped against a span set, by length.
inline double union_measure_within(std::vector<Interval> xs, const std::vector<Interval>& spans) {
  std::sort(xs.begin(), xs.end(), [](const Interval& a, const Interval& b) { return a.start < b.start; });
  std::vector<Interval> merged;
  for (const Interval& x : xs) {
    if (!(x.end > x.start)) continue;
    if (!merged.empty() && x.start <= merged.back().end)
      merged.back().end = std::max(merged.back().end, x.end);
    else
      merged.push_back(x);
  }
  double total = 0.0;
  for (const Interval& m : merged)
    for (const Interval& s : spans)
      total += std::max(0.0, std::min(m.end, s.end) - std::max(m.start, s.start));
  return total;
}

}  // namespace detail

// Fraction of the valid time covered by predictions scoring above theta.
inline std::optional<double> manipulation_ratio(const std::vector<SegmentPrediction>& preds,
                                                double theta, const ValidSegments& valid) {
  const double mu = valid.measure();
  if (!(mu > 0)) return std::nullopt;
  std::vector<Interval> active;
  for (const SegmentPrediction& p : preds)
    if (p.score > theta) active.push_back({p.start, p.end});
  return detail::union_measure_within(std::move(active), valid.spans) / mu;
}

// Score-weighted coverage: between consecutive prediction endpoints, the
// active segments' mean score is integrated over the sub-segment length.
inline double weighted_coverage(const std::vector<SegmentPrediction>& preds) {
  std::vector<double> pts;
  for (const SegmentPrediction& p : preds) {
    if (p.end < p.start) throw contract_error("weighted_coverage: end before start");
    pts.push_back(p.start);
    pts.push_back(p.end);
  }
  if (pts.empty()) return 0.0;
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double lo = pts[i], hi = pts[i + 1];
    double score_sum = 0.0;
    int active = 0;
    for (const SegmentPrediction& p : preds) {
      if (p.start <= lo && lo < p.end) {
        score_sum += p.score;
        ++active;
      }
    }
    if (active > 0) total += (score_sum / active) * (hi - lo);
  }
  return total;
}

}  // namespace auvire
