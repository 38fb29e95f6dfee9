#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "auvire/datagen.hpp"
#include "support/oracles.hpp"

using namespace auvire;

namespace {

SyntheticConfig small_config() {
  SyntheticConfig c;
  c.n_samples = 10;
  c.t = 128;
  c.d = 12;
  c.latent_dim = 3;
  c.fps = 25.0;
  c.noise_sigma = 0.05;
  c.seed = 7;
  return c;
}

Tensor<double> rows_to_double(const Tensor<float>& x, int lo, int hi) {
  Tensor<double> out({hi - lo, x.shape[1]});
  for (int i = lo; i < hi; ++i)
    for (int j = 0; j < x.shape[1]; ++j) out.at(i - lo, j) = static_cast<double>(x.at(i, j));
  return out;
}

}  // namespace

TEST_CASE("generation is bitwise deterministic per seed and index") {
  SyntheticGenerator g1(small_config()), g2(small_config());
  for (int idx : {0, 3, 9}) {
    auto a = g1.generate(idx);
    auto b = g2.generate(idx);
    CHECK(a.features.visual.data == b.features.visual.data);
    CHECK(a.features.audio.data == b.features.audio.data);
    REQUIRE(a.annotation.segments.size() == b.annotation.segments.size());
    for (std::size_t i = 0; i < a.annotation.segments.size(); ++i) {
      CHECK(a.annotation.segments[i].start == b.annotation.segments[i].start);
      CHECK(a.annotation.segments[i].end == b.annotation.segments[i].end);
    }
  }

  auto cfg2 = small_config();
  cfg2.seed = 8;
  SyntheticGenerator g3(cfg2);
  bool identical = g1.generate(0).features.visual.data == g3.generate(0).features.visual.data;
  CHECK_FALSE(identical);

  // samples are independent of generation order
  SyntheticGenerator g4(small_config());
  auto later = g4.generate(5);
  auto again = SyntheticGenerator(small_config()).generate(5);
  CHECK(later.features.audio.data == again.features.audio.data);
}

TEST_CASE("sample ids are zero-padded and stable") {
  CHECK(sample_id(0) == "sample_000000");
  CHECK(sample_id(42) == "sample_000042");
  CHECK(sample_id(123456) == "sample_123456");
}

TEST_CASE("a two to four second segment at 25 fps rasterizes to exactly 50 fake frames") {
  auto ann = build_frame_targets({{2.0, 4.0}}, 128, 25.0);
  int n_fake = 0;
  for (auto f : ann.fake) n_fake += f;
  CHECK(n_fake == 50);
  // first covered centre is 2.02 (frame 50), last is 3.98 (frame 99)
  CHECK(ann.fake[49] == 0);
  CHECK(ann.fake[50] == 1);
  CHECK(ann.fake[99] == 1);
  CHECK(ann.fake[100] == 0);
}

TEST_CASE("noise-free features have rank bounded by the latent dimension") {
  auto cfg = small_config();
  cfg.noise_sigma = 0.0;
  cfg.n_fake_probs = {1.0};  // no fake segments
  SyntheticGenerator gen(cfg);
  auto s = gen.generate(2);
  auto xv = rows_to_double(s.features.visual, 0, cfg.t);
  auto sv = testsupport::singular_values_reference(xv);
  REQUIRE(static_cast<int>(sv.size()) == cfg.d);
  for (int j = 0; j < cfg.latent_dim; ++j) CHECK(sv[static_cast<std::size_t>(j)] > 1e-6);
  for (int j = cfg.latent_dim; j < cfg.d; ++j)
    CHECK(sv[static_cast<std::size_t>(j)] < 1e-6 * sv[0]);

  // with noise the spectrum has full support
  SyntheticGenerator noisy(small_config());
  auto s2 = noisy.generate(2);
  auto sv2 = testsupport::singular_values_reference(rows_to_double(s2.features.visual, 0, cfg.t));
  CHECK(sv2[static_cast<std::size_t>(cfg.d - 1)] > 1e-6);
}

TEST_CASE("cross-modal linear prediction breaks down inside fake segments") {
  auto cfg = small_config();
  cfg.n_fake_probs = {0.0, 1.0};  // exactly one fake segment
  cfg.fake_min_s = 1.6;
  cfg.fake_max_s = 2.4;
  SyntheticGenerator gen(cfg);

  double real_err_acc = 0.0, fake_err_acc = 0.0;
  int used = 0;
  for (int idx = 0; idx < 8; ++idx) {
    auto s = gen.generate(idx);
    REQUIRE(s.annotation.segments.size() == 1);
    const Interval seg = s.annotation.segments[0];
    const int f0 = static_cast<int>(std::ceil(seg.start * cfg.fps - 0.5));
    const int f1 = static_cast<int>(std::floor(seg.end * cfg.fps - 0.5));
    // interior frames, clear of the 3-frame cross-fade ramps
    const int lo = f0 + 4, hi = f1 - 3;
    if (hi - lo < 8) continue;

    // fit audio -> visual on real frames before the segment
    const int fit_end = std::max(0, f0 - 2);
    if (fit_end < 24) continue;
    auto xa_fit = rows_to_double(s.features.audio, 0, fit_end);
    auto xv_fit = rows_to_double(s.features.visual, 0, fit_end);
    const double real_err = testsupport::linear_fit_mae(xa_fit, xv_fit);

    auto xa_seg = rows_to_double(s.features.audio, lo, hi);
    auto xv_seg = rows_to_double(s.features.visual, lo, hi);
    const double fake_err = testsupport::linear_fit_mae(xa_seg, xv_seg);

    real_err_acc += real_err;
    fake_err_acc += fake_err;
    ++used;
  }
  REQUIRE(used >= 3);
  CHECK(fake_err_acc > 3.0 * real_err_acc);
}

TEST_CASE("fake segments stay inside the clip and respect length bounds") {
  auto cfg = small_config();
  cfg.n_fake_probs = {0.0, 0.0, 1.0};  // two segments each
  SyntheticGenerator gen(cfg);
  for (int idx = 0; idx < 20; ++idx) {
    auto s = gen.generate(idx);
    REQUIRE(s.annotation.segments.size() == 2);
    double prev_end = -1.0;
    for (const auto& seg : s.annotation.segments) {
      CHECK(seg.start >= 0.0);
      CHECK(seg.end <= cfg.duration() + 1e-12);
      CHECK(seg.length() >= cfg.fake_min_s - 1e-12);
      CHECK(seg.length() <= cfg.fake_max_s + 1e-12);
      CHECK(seg.start > prev_end);  // sorted, separated
      prev_end = seg.end;
    }
  }
}

TEST_CASE("impossible segment placement raises after bounded attempts") {
  auto cfg = small_config();
  cfg.t = 64;  // 2.56 s clip
  cfg.n_fake_probs = {0.0, 0.0, 1.0};
  cfg.fake_min_s = 1.2;
  cfg.fake_max_s = 2.4;  // two such segments plus spacing cannot fit
  SyntheticGenerator gen(cfg);
  bool threw = false;
  for (int idx = 0; idx < 4 && !threw; ++idx) {
    try {
      gen.generate(idx);
    } catch (const std::runtime_error& e) {
      threw = true;
      CHECK(std::string(e.what()).find("placement failed") != std::string::npos);
    }
  }
  CHECK(threw);
}

TEST_CASE("frame targets recover the annotated runs") {
  auto cfg = small_config();
  SyntheticGenerator gen(cfg);
  for (int idx = 0; idx < 12; ++idx) {
    auto s = gen.generate(idx);
    auto ann = build_frame_targets(s.annotation.segments, cfg.t, cfg.fps);
    // each annotated segment produces one run of fake frames of matching span
    std::vector<Interval> runs;
    int tau = 0;
    while (tau < cfg.t) {
      if (!ann.fake[static_cast<std::size_t>(tau)]) {
        ++tau;
        continue;
      }
      int end = tau;
      while (end + 1 < cfg.t && ann.fake[static_cast<std::size_t>(end + 1)]) ++end;
      runs.push_back({(tau + 0.5) / cfg.fps, (end + 0.5) / cfg.fps});
      tau = end + 1;
    }
    REQUIRE(runs.size() == s.annotation.segments.size());
    for (std::size_t i = 0; i < runs.size(); ++i) {
      // run endpoints are frame centres inside the segment
      CHECK(runs[i].start >= s.annotation.segments[i].start);
      CHECK(runs[i].end < s.annotation.segments[i].end);
      // and adjacent centres outside miss it
      CHECK(runs[i].start - 1.0 / cfg.fps < s.annotation.segments[i].start);
      CHECK(runs[i].end + 1.0 / cfg.fps >= s.annotation.segments[i].end);
    }
  }
}

TEST_CASE("padding extends features with zeros and marks the tail invalid") {
  auto cfg = small_config();
  cfg.t = 100;
  SyntheticGenerator gen(cfg);
  auto s = gen.generate(1);
  FeaturePair<float> f = s.features;
  auto ann = build_frame_targets(s.annotation.segments, cfg.t, cfg.fps);
  pad_to_length(f, ann, 128);
  CHECK(f.visual.shape == std::vector<int>{128, cfg.d});
  CHECK(f.audio.shape == std::vector<int>{128, cfg.d});
  CHECK(f.valid_len == 100);
  CHECK(ann.frames() == 128);
  for (int tau = 100; tau < 128; ++tau) {
    CHECK(ann.valid[static_cast<std::size_t>(tau)] == 0);
    for (int j = 0; j < cfg.d; ++j) {
      CHECK(f.visual.at(tau, j) == 0.0f);
      CHECK(f.audio.at(tau, j) == 0.0f);
    }
  }
  for (int j = 0; j < cfg.d; ++j)
    CHECK(f.visual.at(50, j) == s.features.visual.at(50, j));

  FeaturePair<float> f2 = s.features;
  auto ann2 = build_frame_targets(s.annotation.segments, cfg.t, cfg.fps);
  CHECK_THROWS_AS(pad_to_length(f2, ann2, 50), contract_error);
}

TEST_CASE("synthetic config validation") {
  auto bad_probs = small_config();
  bad_probs.n_fake_probs = {0.4, 0.4};
  CHECK_THROWS_AS(bad_probs.validate(), config_error);

  auto neg_prob = small_config();
  neg_prob.n_fake_probs = {1.5, -0.5};
  CHECK_THROWS_AS(neg_prob.validate(), config_error);

  auto big_latent = small_config();
  big_latent.latent_dim = big_latent.d + 1;
  CHECK_THROWS_AS(big_latent.validate(), config_error);

  auto long_fake = small_config();
  long_fake.fake_max_s = long_fake.duration() + 1.0;
  CHECK_THROWS_AS(long_fake.validate(), config_error);

  auto inverted = small_config();
  inverted.fake_min_s = 2.0;
  inverted.fake_max_s = 1.0;
  CHECK_THROWS_AS(inverted.validate(), config_error);

  CHECK_NOTHROW(small_config().validate());
}
