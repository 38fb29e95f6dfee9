#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "auvire/annotations.hpp"
#include "auvire/network.hpp"
#include "auvire/rng.hpp"
#include "auvire/tensor.hpp"

namespace auvire {

enum class FakeModality { audio, visual, either };

inline const char* fake_modality_name(FakeModality m) {
  switch (m) {
    case FakeModality::audio: return "audio";
    case FakeModality::visual: return "visual";
    default: return "either";
  }
}
inline FakeModality fake_modality_from_name(const std::string& s) {
  if (s == "audio") return FakeModality::audio;
  if (s == "visual") return FakeModality::visual;
  if (s == "either") return FakeModality::either;
  throw config_error("unknown modality: " + s);
}

struct SyntheticConfig {
  int n_samples = 100;
  int t = 128;
  int d = 16;
  int latent_dim = 4;
  double fps = 25.0;
  double noise_sigma = 0.05;
  std::vector<double> n_fake_probs = {0.3, 0.35, 0.35};  // P(segment count = index)
  double fake_min_s = 0.8;
  double fake_max_s = 2.4;
  FakeModality modality = FakeModality::either;
  std::uint64_t seed = 0;

  double duration() const { return t / fps; }

  void validate() const {
    if (n_samples < 1) throw config_error("synthetic: n_samples must be >= 1");
    if (t < 1 || d < 1) throw config_error("synthetic: t and d must be positive");
    if (latent_dim < 1 || latent_dim > d) throw config_error("synthetic: need 1 <= latent_dim <= d");
    if (!(fps > 0)) throw config_error("synthetic: fps must be positive");
    if (!(noise_sigma >= 0)) throw config_error("synthetic: noise_sigma must be >= 0");
    if (n_fake_probs.empty()) throw config_error("synthetic: n_fake_probs must not be empty");
    double sum = 0;
    for (double p : n_fake_probs) {
      if (!(p >= 0)) throw config_error("synthetic: negative probability");
      sum += p;
    }
    if (std::fabs(sum - 1.0) > 1e-9) throw config_error("synthetic: n_fake_probs must sum to 1");
    if (!(fake_min_s > 0) || !(fake_max_s >= fake_min_s))
      throw config_error("synthetic: need 0 < fake_min_s <= fake_max_s");
    if (fake_max_s > duration()) throw config_error("synthetic: fake_max_s exceeds clip duration");
  }
};

struct SyntheticSample {
  FeaturePair<float> features;
  SegmentAnnotation annotation;
};

inline std::string sample_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%06d", index);
  return buf;
}

// Correlated-latent generator: both modalities are linear images of one
// smooth latent trajectory plus noise; fake segments swap in an independent
// trajectory for one modality, destroying the cross-modal link there.
class SyntheticGenerator {
 public:
  explicit SyntheticGenerator(SyntheticConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng wr(mix_seed(cfg_.seed, 0x6d617073ull));
    w_v_ = draw_map(wr);
    w_a_ = draw_map(wr);
  }

  const SyntheticConfig& config() const { return cfg_; }
  const Tensor<double>& visual_map() const { return w_v_; }
  const Tensor<double>& audio_map() const { return w_a_; }

  SyntheticSample generate(int index) const {
    Rng rng(mix_seed(mix_seed(cfg_.seed, 0x73616d70ull), static_cast<std::uint64_t>(index)));
    const int t = cfg_.t, d = cfg_.d;
    const double dur = cfg_.duration();

    Tensor<double> z = latent_walk(rng);
    Tensor<double> xv = project(z, w_v_, rng);
    Tensor<double> xa = project(z, w_a_, rng);

    const int n_segments = draw_count(rng);
    std::vector<Interval> segments;
    for (int si = 0; si < n_segments; ++si) {
      bool placed = false;
      for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
        const double len = rng.uniform(cfg_.fake_min_s, cfg_.fake_max_s);
        const double start = rng.uniform(0.0, dur - len);
        const Interval cand{start, start + len};
        bool ok = true;
        for (const Interval& s : segments)
          if (cand.start < s.end + 1.0 / cfg_.fps && cand.end > s.start - 1.0 / cfg_.fps) ok = false;
        if (ok) {
          segments.push_back(cand);
          placed = true;
        }
      }
      if (!placed)
        throw std::runtime_error("synthetic: segment placement failed after 100 attempts (sample " +
                                 sample_id(index) + ")");
    }
    std::sort(segments.begin(), segments.end(),
              [](const Interval& a, const Interval& b) { return a.start < b.start; });

    for (const Interval& seg : segments) {
      const bool on_audio = cfg_.modality == FakeModality::audio ||
                            (cfg_.modality == FakeModality::either && rng.uniform() < 0.5);
      Tensor<double>& x = on_audio ? xa : xv;
      const Tensor<double>& w = on_audio ? w_a_ : w_v_;
      Tensor<double> zf = latent_walk(rng);
      Tensor<double> xf = project(zf, w, rng);
      int f0 = -1, f1 = -1;
      for (int tau = 0; tau < t; ++tau) {
        const double centre = (tau + 0.5) / cfg_.fps;
        if (centre >= seg.start && centre < seg.end) {
          if (f0 < 0) f0 = tau;
          f1 = tau;
        }
      }
      if (f0 < 0) continue;
      // 3-frame linear cross-fade on both edges of the segment
      auto ramp = [](int idx) { return idx >= 3 ? 1.0 : (idx + 1) * 0.25; };
      for (int tau = f0; tau <= f1; ++tau) {
        const double alpha = std::min(ramp(tau - f0), ramp(f1 - tau));
        for (int j = 0; j < d; ++j)
          x.at(tau, j) = (1.0 - alpha) * x.at(tau, j) + alpha * xf.at(tau, j);
      }
    }

    SyntheticSample out;
    out.features.visual = xv.cast<float>();
    out.features.audio = xa.cast<float>();
    out.features.valid_len = t;
    out.features.fps = cfg_.fps;
    out.annotation.id = sample_id(index);
    out.annotation.segments = std::move(segments);
    out.annotation.duration = dur;
    out.annotation.fps = cfg_.fps;
    return out;
  }

 private:
  SyntheticConfig cfg_;
  Tensor<double> w_v_, w_a_;

  Tensor<double> draw_map(Rng& rng) const {
    Tensor<double> w({cfg_.latent_dim, cfg_.d});
    const double s = 1.0 / std::sqrt(static_cast<double>(cfg_.latent_dim));
    for (auto& v : w.data) v = s * rng.normal();
    return w;
  }

  // Gaussian random walk smoothed with a centred 5-frame moving average.
  Tensor<double> latent_walk(Rng& rng) const {
    const int t = cfg_.t, L = cfg_.latent_dim;
    Tensor<double> raw({t, L});
    for (int j = 0; j < L; ++j) raw.at(0, j) = rng.normal();
    for (int tau = 1; tau < t; ++tau)
      for (int j = 0; j < L; ++j) raw.at(tau, j) = raw.at(tau - 1, j) + 0.3 * rng.normal();
    Tensor<double> z({t, L});
    for (int tau = 0; tau < t; ++tau) {
      const int lo = std::max(0, tau - 2), hi = std::min(t - 1, tau + 2);
      for (int j = 0; j < L; ++j) {
        double acc = 0;
        for (int m = lo; m <= hi; ++m) acc += raw.at(m, j);
        z.at(tau, j) = acc / (hi - lo + 1);
      }
    }
    return z;
  }

  Tensor<double> project(const Tensor<double>& z, const Tensor<double>& w, Rng& rng) const {
    const int t = cfg_.t, d = cfg_.d, L = cfg_.latent_dim;
    Tensor<double> x({t, d});
    for (int tau = 0; tau < t; ++tau)
      for (int j = 0; j < d; ++j) {
        double acc = 0;
        for (int l = 0; l < L; ++l) acc += z.at(tau, l) * w.at(l, j);
        x.at(tau, j) = acc;
      }
    if (cfg_.noise_sigma > 0)
      for (auto& v : x.data) v += cfg_.noise_sigma * rng.normal();
    return x;
  }

  int draw_count(Rng& rng) const {
    const double u = rng.uniform();
    double acc = 0;
    for (std::size_t i = 0; i < cfg_.n_fake_probs.size(); ++i) {
      acc += cfg_.n_fake_probs[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(cfg_.n_fake_probs.size() - 1);
  }
};

// Zero-pad features and targets to target_t frames; valid_len and the
// annotation's validity mask mark the original frames.
template <typename T>
void pad_to_length(FeaturePair<T>& f, FrameAnnotation& a, int target_t = 512) {
  const int t = f.frames();
  if (t > target_t) throw contract_error("pad_to_length: sequence longer than target");
  if (t == target_t) return;
  Tensor<T> nv({target_t, f.visual.shape[1]});
  Tensor<T> na({target_t, f.audio.shape[1]});
  std::copy(f.visual.data.begin(), f.visual.data.end(), nv.data.begin());
  std::copy(f.audio.data.begin(), f.audio.data.end(), na.data.begin());
  f.visual = std::move(nv);
  f.audio = std::move(na);
  a = pad_annotation(std::move(a), target_t);
}

}  // namespace auvire
