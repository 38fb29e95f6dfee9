#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "auvire/datagen.hpp"
#include "auvire/evaluation.hpp"
#include "auvire/serialize.hpp"
#include "auvire/trainer.hpp"
#include "auvire/wildscore.hpp"

namespace auvire {

struct SplitRatios {
  double train = 0.7;
  double val = 0.15;
  double test = 0.15;

  void validate() const {
    if (!(train >= 0) || !(val >= 0) || !(test >= 0))
      throw config_error("split_ratios: ratios must be non-negative");
    if (std::fabs(train + val + test - 1.0) > 1e-9)
      throw config_error("split_ratios: ratios must sum to 1");
  }
};

struct EvalSettings {
  DecodeConfig decode;
  double nms_sigma = 0.5;
  double nms_min_score = 1e-4;
  double theta = 0.01;

  void validate() const {
    if (decode.pre_nms_top_n < 1) throw config_error("eval: pre_nms_top_n must be >= 1");
    if (!(decode.min_score >= 0)) throw config_error("eval: min_score must be >= 0");
    if (!(nms_sigma > 0)) throw config_error("eval: nms_sigma must be positive");
    if (!(nms_min_score >= 0)) throw config_error("eval: nms_min_score must be >= 0");
    if (!(theta >= 0)) throw config_error("eval: theta must be >= 0");
  }

  EvalConfig to_eval_config() const {
    EvalConfig e;
    e.decode = decode;
    e.nms_sigma = nms_sigma;
    e.nms_min_score = nms_min_score;
    return e;
  }
};

struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  TrainConfig train;
  SyntheticConfig synthetic;
  ValidityConfig validity;
  EvalSettings eval;
  SplitRatios split_ratios;

  void validate() const {
    model.validate();
    train.validate();
    synthetic.validate();
    validity.validate();
    eval.validate();
    split_ratios.validate();
  }
};

// ---- config file parsing -----------------------------------------------------

inline TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  reject_unknown_keys(j,
                      {"max_epochs", "lr", "batch_size", "plateau_factor", "plateau_patience",
                       "early_stop_patience", "improvement_threshold", "seed", "criterion_keys"},
                      "train config");
  try {
    if (j.contains("max_epochs")) c.max_epochs = j.at("max_epochs").get<int>();
    if (j.contains("lr")) c.lr = j.at("lr").get<double>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
    if (j.contains("plateau_factor")) c.plateau_factor = j.at("plateau_factor").get<double>();
    if (j.contains("plateau_patience")) c.plateau_patience = j.at("plateau_patience").get<int>();
    if (j.contains("early_stop_patience")) c.early_stop_patience = j.at("early_stop_patience").get<int>();
    if (j.contains("improvement_threshold"))
      c.improvement_threshold = j.at("improvement_threshold").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("criterion_keys")) {
      c.criterion_keys.clear();
      for (const auto& k : j.at("criterion_keys")) c.criterion_keys.push_back(k.get<std::string>());
    }
  } catch (const json::exception& e) {
    throw config_error(std::string("train config: ") + e.what());
  }
  return c;
}

inline ordered_json train_config_to_json(const TrainConfig& c) {
  ordered_json j;
  j["max_epochs"] = c.max_epochs;
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["plateau_factor"] = c.plateau_factor;
  j["plateau_patience"] = c.plateau_patience;
  j["early_stop_patience"] = c.early_stop_patience;
  j["improvement_threshold"] = c.improvement_threshold;
  j["seed"] = c.seed;
  j["criterion_keys"] = c.criterion_keys;
  return j;
}

inline SyntheticConfig synthetic_config_from_json(const json& j, SyntheticConfig c) {
  reject_unknown_keys(j,
                      {"n_samples", "t", "d", "latent_dim", "fps", "noise_sigma", "n_fake_probs",
                       "fake_min_s", "fake_max_s", "modality", "seed"},
                      "synthetic config");
  try {
    if (j.contains("n_samples")) c.n_samples = j.at("n_samples").get<int>();
    if (j.contains("t")) c.t = j.at("t").get<int>();
    if (j.contains("d")) c.d = j.at("d").get<int>();
    if (j.contains("latent_dim")) c.latent_dim = j.at("latent_dim").get<int>();
    if (j.contains("fps")) c.fps = j.at("fps").get<double>();
    if (j.contains("noise_sigma")) c.noise_sigma = j.at("noise_sigma").get<double>();
    if (j.contains("n_fake_probs")) {
      c.n_fake_probs.clear();
      for (const auto& p : j.at("n_fake_probs")) c.n_fake_probs.push_back(p.get<double>());
    }
    if (j.contains("fake_min_s")) c.fake_min_s = j.at("fake_min_s").get<double>();
    if (j.contains("fake_max_s")) c.fake_max_s = j.at("fake_max_s").get<double>();
    if (j.contains("modality")) c.modality = fake_modality_from_name(j.at("modality").get<std::string>());
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw config_error(std::string("synthetic config: ") + e.what());
  }
  return c;
}

inline ordered_json synthetic_config_to_json(const SyntheticConfig& c) {
  ordered_json j;
  j["n_samples"] = c.n_samples;
  j["t"] = c.t;
  j["d"] = c.d;
  j["latent_dim"] = c.latent_dim;
  j["fps"] = c.fps;
  j["noise_sigma"] = c.noise_sigma;
  j["n_fake_probs"] = c.n_fake_probs;
  j["fake_min_s"] = c.fake_min_s;
  j["fake_max_s"] = c.fake_max_s;
  j["modality"] = fake_modality_name(c.modality);
  j["seed"] = c.seed;
  return j;
}

inline ValidityConfig validity_config_from_json(const json& j, ValidityConfig c) {
  reject_unknown_keys(j, {"talk_threshold", "min_segment_s", "chunk_s"}, "validity config");
  try {
    if (j.contains("talk_threshold")) c.talk_threshold = j.at("talk_threshold").get<double>();
    if (j.contains("min_segment_s")) c.min_segment_s = j.at("min_segment_s").get<double>();
    if (j.contains("chunk_s")) c.chunk_s = j.at("chunk_s").get<double>();
  } catch (const json::exception& e) {
    throw config_error(std::string("validity config: ") + e.what());
  }
  return c;
}

inline ordered_json validity_config_to_json(const ValidityConfig& c) {
  ordered_json j;
  j["talk_threshold"] = c.talk_threshold;
  j["min_segment_s"] = c.min_segment_s;
  j["chunk_s"] = c.chunk_s;
  return j;
}

inline EvalSettings eval_settings_from_json(const json& j, EvalSettings c) {
  reject_unknown_keys(j, {"pre_nms_top_n", "min_score", "nms_sigma", "nms_min_score", "theta"},
                      "eval config");
  try {
    if (j.contains("pre_nms_top_n")) c.decode.pre_nms_top_n = j.at("pre_nms_top_n").get<int>();
    if (j.contains("min_score")) c.decode.min_score = j.at("min_score").get<double>();
    if (j.contains("nms_sigma")) c.nms_sigma = j.at("nms_sigma").get<double>();
    if (j.contains("nms_min_score")) c.nms_min_score = j.at("nms_min_score").get<double>();
    if (j.contains("theta")) c.theta = j.at("theta").get<double>();
  } catch (const json::exception& e) {
    throw config_error(std::string("eval config: ") + e.what());
  }
  return c;
}

inline ordered_json eval_settings_to_json(const EvalSettings& c) {
  ordered_json j;
  j["pre_nms_top_n"] = c.decode.pre_nms_top_n;
  j["min_score"] = c.decode.min_score;
  j["nms_sigma"] = c.nms_sigma;
  j["nms_min_score"] = c.nms_min_score;
  j["theta"] = c.theta;
  return j;
}

inline RunConfig run_config_from_json(const json& j) {
  reject_unknown_keys(
      j, {"seed", "model", "train", "synthetic", "validity", "eval", "split_ratios"}, "config");
  RunConfig c;
  try {
    if (j.contains("seed")) {
      c.seed = j.at("seed").get<std::uint64_t>();
      c.train.seed = c.seed;
      c.synthetic.seed = c.seed;
    }
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"), c.train);
    if (j.contains("synthetic")) c.synthetic = synthetic_config_from_json(j.at("synthetic"), c.synthetic);
    if (j.contains("validity")) c.validity = validity_config_from_json(j.at("validity"), c.validity);
    if (j.contains("eval")) c.eval = eval_settings_from_json(j.at("eval"), c.eval);
    if (j.contains("split_ratios")) {
      const json& s = j.at("split_ratios");
      reject_unknown_keys(s, {"train", "val", "test"}, "split_ratios");
      if (s.contains("train")) c.split_ratios.train = s.at("train").get<double>();
      if (s.contains("val")) c.split_ratios.val = s.at("val").get<double>();
      if (s.contains("test")) c.split_ratios.test = s.at("test").get<double>();
    }
  } catch (const json::exception& e) {
    throw config_error(std::string("config: ") + e.what());
  }
  return c;
}

inline ordered_json run_config_to_json(const RunConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["model"] = model_config_to_json(c.model);
  j["train"] = train_config_to_json(c.train);
  j["synthetic"] = synthetic_config_to_json(c.synthetic);
  j["validity"] = validity_config_to_json(c.validity);
  j["eval"] = eval_settings_to_json(c.eval);
  ordered_json s;
  s["train"] = c.split_ratios.train;
  s["val"] = c.split_ratios.val;
  s["test"] = c.split_ratios.test;
  j["split_ratios"] = std::move(s);
  return j;
}

inline RunConfig load_run_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  if (!std::filesystem::exists(path)) throw config_error("config file not found: " + path);
  json j;
  try {
    j = json::parse(read_file_bytes(path));
  } catch (const json::exception& e) {
    throw config_error(path + ": " + e.what());
  }
  return run_config_from_json(j);
}

inline void emit_resolved_config(const RunConfig& cfg, const std::string& out_dir) {
  write_file_bytes(out_dir + "/resolved_config.json", run_config_to_json(cfg).dump(2) + "\n");
}

// ---- dataset generation ------------------------------------------------------

inline std::vector<ManifestEntry> cmd_generate(const RunConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  const int n = cfg.synthetic.n_samples;

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  fs::create_directories(out_dir + "/features");
  fs::create_directories(out_dir + "/annotations");
  emit_resolved_config(cfg, out_dir);

  // Split membership by seeded shuffle; manifest rows stay in index order.
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng split_rng(mix_seed(cfg.synthetic.seed, 0x73706c6974ull));
  split_rng.shuffle(order.begin(), order.end());
  const int n_train = static_cast<int>(std::llround(n * cfg.split_ratios.train));
  const int n_val = static_cast<int>(std::llround(n * cfg.split_ratios.val));
  if (n_train + n_val > n) throw config_error("split_ratios: rounded split exceeds sample count");
  std::vector<std::string> split(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) {
    const char* s = r < n_train ? "train" : (r < n_train + n_val ? "val" : "test");
    split[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = s;
  }

  SyntheticGenerator gen(cfg.synthetic);
  std::vector<ManifestEntry> manifest;
  std::vector<ValidityRecord> validity;
  for (int i = 0; i < n; ++i) {
    SyntheticSample s = gen.generate(i);
    const std::string fp = "features/" + s.annotation.id + ".avrf";
    const std::string ap = "annotations/" + s.annotation.id + ".json";
    write_features(out_dir + "/" + fp, FeatureRecord{s.annotation.id, s.features});
    write_annotation(out_dir + "/" + ap, s.annotation);
    manifest.push_back({fp, ap, split[static_cast<std::size_t>(i)]});
    ValidityRecord v;
    v.id = s.annotation.id;
    v.fps = s.annotation.fps;
    v.frames = cfg.synthetic.t;
    v.runs = {{1, cfg.synthetic.t}};
    validity.push_back(std::move(v));
  }
  write_manifest(out_dir + "/manifest.tsv", manifest);
  write_validity(out_dir + "/validity.jsonl", validity);
  return manifest;
}

// ---- sample loading ----------------------------------------------------------

struct DatasetSplits {
  std::vector<TrainSample> train, val, test;
};

inline TrainSample load_sample(const std::string& feature_path, const std::string& annotation_path,
                               int expect_d) {
  FeatureRecord rec = read_features(feature_path);
  if (rec.features.visual.shape[1] != expect_d)
    throw config_error(feature_path + ": feature dim " + std::to_string(rec.features.visual.shape[1]) +
                       " does not match model dim " + std::to_string(expect_d));
  SegmentAnnotation ann = read_annotation(annotation_path);
  return make_train_sample(std::move(rec.features), std::move(ann));
}

inline DatasetSplits load_dataset(const std::string& manifest_path, int expect_d) {
  if (!std::filesystem::exists(manifest_path))
    throw config_error("manifest not found: " + manifest_path);
  const std::string dir = std::filesystem::path(manifest_path).parent_path().string();
  const auto resolve = [&](const std::string& p) {
    return std::filesystem::path(p).is_absolute() ? p : dir + "/" + p;
  };
  DatasetSplits out;
  for (const ManifestEntry& e : read_manifest(manifest_path)) {
    TrainSample s = load_sample(resolve(e.feature_path), resolve(e.annotation_path), expect_d);
    if (e.split == "train")
      out.train.push_back(std::move(s));
    else if (e.split == "val")
      out.val.push_back(std::move(s));
    else
      out.test.push_back(std::move(s));
  }
  return out;
}

// ---- training ----------------------------------------------------------------

inline void write_metric_report(const std::string& path,
                                const std::vector<std::pair<std::string, double>>& report) {
  ordered_json j;
  for (const auto& [k, v] : report) {
    if (std::isnan(v))
      j[k] = nullptr;
    else
      j[k] = v;
  }
  write_file_bytes(path, j.dump(2) + "\n");
}

inline void write_predictions(const std::string& path, const std::vector<EvalRecord>& records) {
  std::string out;
  for (const EvalRecord& r : records) {
    ordered_json j;
    j["id"] = r.id;
    j["video_score"] = r.video_score;
    j["video_label"] = r.video_label;
    json gt = json::array();
    for (const Interval& s : r.ground_truth) gt.push_back({s.start, s.end});
    j["ground_truth"] = std::move(gt);
    json segs = json::array();
    for (const SegmentPrediction& p : r.predictions) segs.push_back({p.start, p.end, p.score});
    j["segments"] = std::move(segs);
    out += j.dump() + "\n";
  }
  write_file_bytes(path, out);
}

inline std::vector<EvalRecord> read_predictions(const std::string& path) {
  const std::string data = read_file_bytes(path);
  std::vector<EvalRecord> out;
  std::size_t pos = 0, line_no = 0;
  while (pos < data.size()) {
    std::size_t eol = data.find('\n', pos);
    if (eol == std::string::npos) eol = data.size();
    const std::string line = data.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      EvalRecord r;
      r.id = j.at("id").get<std::string>();
      r.video_score = j.at("video_score").get<double>();
      r.video_label = j.at("video_label").get<int>();
      for (const auto& s : j.at("ground_truth"))
        r.ground_truth.push_back({s.at(0).get<double>(), s.at(1).get<double>()});
      for (const auto& s : j.at("segments"))
        r.predictions.push_back({s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>()});
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw format_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

struct TrainOutcome {
  TrainResult result;
  std::vector<std::pair<std::string, double>> test_report;
};

inline TrainOutcome cmd_train(const RunConfig& cfg, const std::string& manifest_path,
                              const std::string& out_dir) {
  cfg.validate();
  DatasetSplits data = load_dataset(manifest_path, cfg.model.d);
  std::filesystem::create_directories(out_dir);
  emit_resolved_config(cfg, out_dir);

  Trainer<float> trainer(cfg.model, cfg.train, out_dir);
  TrainOutcome out;
  out.result = trainer.run(data.train, data.val);

  Model<float> best = load_checkpoint<float>(trainer.best_path());
  const EvalConfig ecfg = cfg.eval.to_eval_config();
  const std::vector<EvalRecord> records = collect_eval_records(best, data.test, ecfg);
  out.test_report = metric_report(records, ecfg);
  write_metric_report(out_dir + "/test_metrics.json", out.test_report);
  write_predictions(out_dir + "/predictions.jsonl", records);
  return out;
}

// ---- wild scoring ------------------------------------------------------------

struct ScoreSettings {
  ValidityConfig validity;
  DecodeConfig decode;
  double nms_sigma = 0.5;
  double nms_min_score = 1e-4;
  double theta = 0.01;
  bool chunked = true;
};

struct VideoScoreResult {
  std::string id;
  std::vector<SegmentPrediction> predictions;
  ValidSegments beta;
  std::optional<double> psi_m;
  double psi_s = 0.0;
  double video = 0.0;
};

template <typename T>
Tensor<T> slice_feature_rows(const Tensor<float>& x, int begin, int end) {
  const int d = x.shape[1];
  Tensor<T> out({end - begin, d});
  for (int i = begin; i < end; ++i)
    for (int j = 0; j < d; ++j)
      out.data[static_cast<std::size_t>(i - begin) * d + j] =
          static_cast<T>(x.data[static_cast<std::size_t>(i) * d + j]);
  return out;
}

// Chunked wild-video scoring: plan windows over the valid spans, run the
// model per window, shift each window's detections to absolute time, then
// merge across windows with one more SoftNMS pass (skipped for one window,
// so short videos behave exactly as if never chunked).
template <typename T>
VideoScoreResult score_video(const Model<T>& model, const FeatureRecord& rec,
                             const std::vector<std::uint8_t>* presence, const ScoreSettings& s) {
  const int t = rec.features.visual.shape[0];
  const double fps = rec.features.fps;
  if (rec.features.visual.shape[1] != model.config().d)
    throw config_error(rec.id + ": feature dim " + std::to_string(rec.features.visual.shape[1]) +
                       " does not match model dim " + std::to_string(model.config().d));

  std::vector<std::uint8_t> present;
  if (presence != nullptr) {
    if (static_cast<int>(presence->size()) != t)
      throw config_error(rec.id + ": presence mask covers " + std::to_string(presence->size()) +
                         " frames, features have " + std::to_string(t));
    present = *presence;
  } else {
    present.assign(static_cast<std::size_t>(t), 1);
  }
  const std::vector<std::uint8_t> talking = talking_mask(rec.features.visual, s.validity.talk_threshold);

  VideoScoreResult out;
  out.id = rec.id;
  out.beta = valid_segments(present, talking, fps, s.validity.min_segment_s);

  std::vector<Interval> windows;
  if (s.chunked) {
    windows = chunk_plan(out.beta, s.validity.chunk_s, s.validity.min_segment_s);
  } else {
    windows = {{0.0, t / fps}};
  }

  std::vector<SegmentPrediction> merged;
  int n_windows = 0;
  for (const Interval& w : windows) {
    int fb = static_cast<int>(std::llround(w.start * fps));
    int fe = static_cast<int>(std::llround(w.end * fps));
    fb = std::max(0, fb);
    fe = std::min(t, fe);
    if (fe <= fb) continue;
    ++n_windows;

    FeaturePair<T> feats;
    feats.visual = slice_feature_rows<T>(rec.features.visual, fb, fe);
    feats.audio = slice_feature_rows<T>(rec.features.audio, fb, fe);
    feats.valid_len = fe - fb;
    feats.fps = fps;

    Graph<T> g;
    auto fwd = model.forward(g, feats);
    PyramidOutput pyr = extract_pyramid(g, fwd);
    auto segs = soft_nms(decode_segments(pyr, s.decode), s.nms_sigma, s.nms_min_score);
    const double offset = fb / fps;
    for (auto& p : segs) {
      p.start += offset;
      p.end += offset;
      merged.push_back(p);
    }
  }
  if (n_windows > 1) merged = soft_nms(std::move(merged), s.nms_sigma, s.nms_min_score);

  out.predictions = std::move(merged);
  out.psi_m = manipulation_ratio(out.predictions, s.theta, out.beta);
  out.psi_s = weighted_coverage(out.predictions);
  out.video = video_score(out.predictions);
  return out;
}

enum class ScoreMode { psi_m, psi_s, video };

inline ScoreMode score_mode_from_name(const std::string& s) {
  if (s == "psi_m") return ScoreMode::psi_m;
  if (s == "psi_s") return ScoreMode::psi_s;
  if (s == "video") return ScoreMode::video;
  throw config_error("unknown mode: " + s + " (expected psi_m, psi_s or video)");
}

inline std::vector<VideoScoreResult> cmd_score(const std::string& checkpoint_path,
                                               const std::string& features_path,
                                               const std::string& validity_path, ScoreMode mode,
                                               const ScoreSettings& settings,
                                               const std::string& out_path) {
  settings.validity.validate();
  Model<float> model = load_checkpoint<float>(checkpoint_path);

  namespace fs = std::filesystem;
  std::vector<std::string> files;
  if (fs::is_directory(features_path)) {
    for (const auto& e : fs::directory_iterator(features_path))
      if (e.is_regular_file() && e.path().extension() == ".avrf") files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw config_error(features_path + ": no .avrf feature files");
  } else if (fs::exists(features_path)) {
    files.push_back(features_path);
  } else {
    throw config_error("features not found: " + features_path);
  }

  std::map<std::string, ValidityRecord> validity;
  if (!validity_path.empty()) validity = read_validity(validity_path);

  std::vector<VideoScoreResult> results;
  std::string lines;
  for (const std::string& f : files) {
    FeatureRecord rec = read_features(f);
    std::vector<std::uint8_t> presence;
    const std::vector<std::uint8_t>* pp = nullptr;
    if (!validity_path.empty()) {
      auto it = validity.find(rec.id);
      if (it == validity.end())
        throw config_error(validity_path + ": no validity record for video " + rec.id);
      presence = it->second.presence();
      pp = &presence;
    }
    VideoScoreResult r = score_video(model, rec, pp, settings);
    ordered_json j;
    j["id"] = r.id;
    switch (mode) {
      case ScoreMode::psi_m:
        if (r.psi_m)
          j["score"] = *r.psi_m;
        else
          j["score"] = nullptr;
        break;
      case ScoreMode::psi_s:
        j["score"] = r.psi_s;
        break;
      case ScoreMode::video:
        j["score"] = r.video;
        break;
    }
    j["n_segments"] = r.predictions.size();
    lines += j.dump() + "\n";
    results.push_back(std::move(r));
  }
  if (!out_path.empty()) write_file_bytes(out_path, lines);
  return results;
}

// ---- theta calibration ---------------------------------------------------------

struct CalibrationInput {
  std::string id;
  std::vector<SegmentPrediction> predictions;
  ValidSegments beta;
  int label = 0;
};

struct CalibrationRow {
  double theta = 0.0;
  double auc = 0.0;
  double ap = 0.0;
};

inline std::vector<CalibrationRow> calibrate_theta(const std::vector<CalibrationInput>& inputs,
                                                   const std::vector<double>& grid) {
  if (grid.empty()) throw config_error("theta calibration: empty theta grid");
  std::size_t n_pos = 0, n_neg = 0;
  for (const auto& in : inputs) (in.label ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0)
    throw config_error("theta calibration requires both real and fake videos");

  std::vector<CalibrationRow> rows;
  for (double theta : grid) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& in : inputs) {
      auto psi = manipulation_ratio(in.predictions, theta, in.beta);
      if (!psi)
        throw std::runtime_error("theta calibration: video " + in.id + " has no valid time");
      scores.push_back(*psi);
      labels.push_back(in.label);
    }
    CalibrationRow row;
    row.theta = theta;
    row.auc = *roc_auc(scores, labels);
    row.ap = *binary_ap(scores, labels);
    rows.push_back(row);
  }
  return rows;
}

inline double best_theta_by_auc(const std::vector<CalibrationRow>& rows) {
  if (rows.empty()) throw contract_error("best_theta_by_auc: no rows");
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].auc > rows[best].auc) best = i;
  return rows[best].theta;
}

struct CalibrationOutcome {
  std::vector<CalibrationRow> rows;
  double best_theta = 0.0;
};

inline CalibrationOutcome cmd_calibrate_theta(const std::string& checkpoint_path,
                                              const std::string& manifest_path,
                                              const std::string& validity_path,
                                              const std::string& split,
                                              const std::vector<double>& grid,
                                              const ScoreSettings& settings,
                                              const std::string& out_path) {
  Model<float> model = load_checkpoint<float>(checkpoint_path);
  if (!std::filesystem::exists(manifest_path))
    throw config_error("manifest not found: " + manifest_path);
  const std::string dir = std::filesystem::path(manifest_path).parent_path().string();
  const auto resolve = [&](const std::string& p) {
    return std::filesystem::path(p).is_absolute() ? p : dir + "/" + p;
  };
  std::map<std::string, ValidityRecord> validity;
  if (!validity_path.empty()) validity = read_validity(validity_path);

  std::vector<CalibrationInput> inputs;
  for (const ManifestEntry& e : read_manifest(manifest_path)) {
    if (e.split != split) continue;
    FeatureRecord rec = read_features(resolve(e.feature_path));
    SegmentAnnotation ann = read_annotation(resolve(e.annotation_path));
    std::vector<std::uint8_t> presence;
    const std::vector<std::uint8_t>* pp = nullptr;
    if (!validity_path.empty()) {
      auto it = validity.find(rec.id);
      if (it == validity.end())
        throw config_error(validity_path + ": no validity record for video " + rec.id);
      presence = it->second.presence();
      pp = &presence;
    }
    VideoScoreResult r = score_video(model, rec, pp, settings);
    CalibrationInput in;
    in.id = r.id;
    in.predictions = std::move(r.predictions);
    in.beta = std::move(r.beta);
    in.label = ann.segments.empty() ? 0 : 1;
    inputs.push_back(std::move(in));
  }
  if (inputs.empty()) throw config_error("theta calibration: no videos in split " + split);

  CalibrationOutcome out;
  out.rows = calibrate_theta(inputs, grid);
  out.best_theta = best_theta_by_auc(out.rows);

  if (!out_path.empty()) {
    ordered_json j;
    j["best_theta"] = out.best_theta;
    ordered_json rows = ordered_json::array();
    for (const auto& r : out.rows) {
      ordered_json row;
      row["theta"] = r.theta;
      row["auc"] = r.auc;
      row["ap"] = r.ap;
      rows.push_back(std::move(row));
    }
    j["rows"] = std::move(rows);
    write_file_bytes(out_path, j.dump(2) + "\n");
  }
  return out;
}

// ---- architecture sweep --------------------------------------------------------

inline SweepResult cmd_sweep(const RunConfig& cfg, const std::string& manifest_path,
                             const std::string& out_dir, const SweepGrid& grid = SweepGrid{}) {
  cfg.validate();
  DatasetSplits data = load_dataset(manifest_path, cfg.model.d);
  std::filesystem::create_directories(out_dir);
  emit_resolved_config(cfg, out_dir);
  return grid_sweep(cfg.model, cfg.train, data.train, data.val, out_dir, grid);
}

}  // namespace auvire
