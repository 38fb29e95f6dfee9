#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "auvire/annotations.hpp"
#include "auvire/network.hpp"
#include "auvire/tensor.hpp"

namespace auvire {

static_assert(std::endian::native == std::endian::little, "file formats are little-endian");

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// ---- raw file helpers ------------------------------------------------------

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error(path + ": cannot open");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

inline void write_file_bytes(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw format_error(path + ": cannot open for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw format_error(path + ": write failed");
}

class BinReader {
 public:
  BinReader(std::string path, std::string data) : path_(std::move(path)), data_(std::move(data)) {}

  std::uint32_t u32() { return scalar<std::uint32_t>(); }
  std::uint64_t u64() { return scalar<std::uint64_t>(); }
  float f32() { return scalar<float>(); }
  double f64() { return scalar<double>(); }
  std::uint8_t u8() { return scalar<std::uint8_t>(); }

  std::string bytes(std::size_t n) {
    need(n);
    std::string out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  void f32_into(float* dst, std::size_t n) {
    need(n * 4);
    std::memcpy(dst, data_.data() + pos_, n * 4);
    pos_ += n * 4;
  }

  bool at_end() const { return pos_ == data_.size(); }
  std::size_t offset() const { return pos_; }

  void expect_end() const {
    if (!at_end())
      throw format_error(path_ + ": " + std::to_string(data_.size() - pos_) +
                         " unexpected trailing bytes at offset " + std::to_string(pos_));
  }

 private:
  std::string path_;
  std::string data_;
  std::size_t pos_ = 0;

  void need(std::size_t n) {
    if (pos_ + n > data_.size())
      throw format_error(path_ + ": truncated: expected " + std::to_string(pos_ + n - data_.size()) +
                         " more bytes at offset " + std::to_string(data_.size()));
  }

  template <typename V>
  V scalar() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, data_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
};

class BinWriter {
 public:
  void u32(std::uint32_t v) { scalar(v); }
  void u64(std::uint64_t v) { scalar(v); }
  void f32(float v) { scalar(v); }
  void f64(double v) { scalar(v); }
  void u8(std::uint8_t v) { scalar(v); }
  void bytes(const std::string& s) { buf_.append(s); }
  void f32_from(const float* src, std::size_t n) {
    buf_.append(reinterpret_cast<const char*>(src), n * 4);
  }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;

  template <typename V>
  void scalar(V v) {
    char tmp[sizeof(V)];
    std::memcpy(tmp, &v, sizeof(V));
    buf_.append(tmp, sizeof(V));
  }
};

// ---- feature files ---------------------------------------------------------

struct FeatureRecord {
  std::string id;
  FeaturePair<float> features;
};

inline void write_features(const std::string& path, const FeatureRecord& rec) {
  const auto& f = rec.features;
  if (f.visual.rank() != 2 || !same_shape(f.visual, f.audio))
    throw contract_error("write_features: malformed feature pair");
  BinWriter w;
  w.bytes("AVRF");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(f.visual.shape[0]));
  w.u32(static_cast<std::uint32_t>(f.visual.shape[1]));
  w.f32(static_cast<float>(f.fps));
  w.f32_from(f.visual.data.data(), f.visual.data.size());
  w.f32_from(f.audio.data.data(), f.audio.data.size());
  write_file_bytes(path, w.str());
}

inline FeatureRecord read_features(const std::string& path) {
  BinReader r(path, read_file_bytes(path));
  if (r.bytes(4) != "AVRF") throw format_error(path + ": bad magic, expected AVRF");
  const std::uint32_t version = r.u32();
  if (version != 1) throw format_error(path + ": unsupported version " + std::to_string(version));
  const std::uint32_t t = r.u32();
  const std::uint32_t d = r.u32();
  if (t == 0 || d == 0 || t > (1u << 24) || d > (1u << 20))
    throw format_error(path + ": implausible dimensions " + std::to_string(t) + "x" + std::to_string(d));
  const float fps = r.f32();
  if (!(fps > 0)) throw format_error(path + ": non-positive fps");
  FeatureRecord rec;
  rec.id = std::filesystem::path(path).stem().string();
  rec.features.visual = Tensor<float>({static_cast<int>(t), static_cast<int>(d)});
  rec.features.audio = Tensor<float>({static_cast<int>(t), static_cast<int>(d)});
  r.f32_into(rec.features.visual.data.data(), rec.features.visual.data.size());
  r.f32_into(rec.features.audio.data.data(), rec.features.audio.data.size());
  r.expect_end();
  rec.features.valid_len = static_cast<int>(t);
  rec.features.fps = static_cast<double>(fps);
  return rec;
}

// ---- annotation files ------------------------------------------------------

inline void write_annotation(const std::string& path, const SegmentAnnotation& a) {
  ordered_json j;
  j["id"] = a.id;
  j["duration"] = a.duration;
  j["fps"] = a.fps;
  json segs = json::array();
  for (const Interval& s : a.segments) segs.push_back({s.start, s.end});
  j["segments"] = std::move(segs);
  write_file_bytes(path, j.dump(2) + "\n");
}

inline SegmentAnnotation read_annotation(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file_bytes(path));
  } catch (const json::exception& e) {
    throw format_error(path + ": " + e.what());
  }
  SegmentAnnotation a;
  try {
    a.id = j.at("id").get<std::string>();
    a.duration = j.at("duration").get<double>();
    a.fps = j.at("fps").get<double>();
    for (const auto& s : j.at("segments")) a.segments.push_back({s.at(0).get<double>(), s.at(1).get<double>()});
  } catch (const json::exception& e) {
    throw format_error(path + ": " + e.what());
  }
  return a;
}

// ---- dataset manifest ------------------------------------------------------

struct ManifestEntry {
  std::string feature_path;
  std::string annotation_path;
  std::string split;  // train | val | test
};

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::string out;
  for (const auto& e : entries)
    out += e.feature_path + "\t" + e.annotation_path + "\t" + e.split + "\n";
  write_file_bytes(path, out);
}

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  const std::string data = read_file_bytes(path);
  std::vector<ManifestEntry> out;
  std::size_t line_no = 0, pos = 0;
  while (pos < data.size()) {
    std::size_t eol = data.find('\n', pos);
    if (eol == std::string::npos) eol = data.size();
    const std::string line = data.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (line.empty()) continue;
    const std::size_t t1 = line.find('\t');
    const std::size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos)
      throw format_error(path + ":" + std::to_string(line_no) + ": expected three tab-separated fields");
    ManifestEntry e{line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), line.substr(t2 + 1)};
    if (e.split != "train" && e.split != "val" && e.split != "test")
      throw format_error(path + ":" + std::to_string(line_no) + ": unknown split " + e.split);
    out.push_back(std::move(e));
  }
  return out;
}

// ---- per-video validity ----------------------------------------------------

struct ValidityRecord {
  std::string id;
  double fps = 0.0;
  int frames = 0;
  std::vector<std::pair<int, int>> runs;  // (value, count), counts sum to frames

  std::vector<std::uint8_t> presence() const {
    std::vector<std::uint8_t> out;
    out.reserve(static_cast<std::size_t>(frames));
    for (const auto& [v, c] : runs)
      out.insert(out.end(), static_cast<std::size_t>(c), static_cast<std::uint8_t>(v));
    return out;
  }
};

inline void write_validity(const std::string& path, const std::vector<ValidityRecord>& recs) {
  std::string out;
  for (const auto& r : recs) {
    ordered_json j;
    j["id"] = r.id;
    j["fps"] = r.fps;
    j["frames"] = r.frames;
    json runs = json::array();
    for (const auto& [v, c] : r.runs) runs.push_back({v, c});
    j["presence_runs"] = std::move(runs);
    out += j.dump() + "\n";
  }
  write_file_bytes(path, out);
}

inline std::map<std::string, ValidityRecord> read_validity(const std::string& path) {
  const std::string data = read_file_bytes(path);
  std::map<std::string, ValidityRecord> out;
  std::size_t pos = 0, line_no = 0;
  while (pos < data.size()) {
    std::size_t eol = data.find('\n', pos);
    if (eol == std::string::npos) eol = data.size();
    const std::string line = data.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (line.empty()) continue;
    ValidityRecord r;
    try {
      json j = json::parse(line);
      r.id = j.at("id").get<std::string>();
      r.fps = j.at("fps").get<double>();
      r.frames = j.at("frames").get<int>();
      for (const auto& run : j.at("presence_runs")) {
        const int v = run.at(0).get<int>();
        const int c = run.at(1).get<int>();
        if ((v != 0 && v != 1) || c < 0) throw format_error(path + ": bad presence run");
        r.runs.emplace_back(v, c);
      }
    } catch (const json::exception& e) {
      throw format_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    int total = 0;
    for (const auto& [v, c] : r.runs) total += c;
    if (total != r.frames)
      throw format_error(path + ":" + std::to_string(line_no) + ": presence runs cover " +
                         std::to_string(total) + " of " + std::to_string(r.frames) + " frames");
    out[r.id] = std::move(r);
  }
  return out;
}

// ---- model config JSON -----------------------------------------------------

inline void reject_unknown_keys(const json& j, const std::vector<std::string>& allowed,
                                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const auto& k : allowed) ok = ok || (it.key() == k);
    if (!ok) throw config_error(where + ": unknown key \"" + it.key() + "\"");
  }
}

inline ordered_json model_config_to_json(const ModelConfig& c) {
  ordered_json j;
  j["d"] = c.d;
  j["d_a"] = c.d_a;
  j["k"] = c.k;
  j["q"] = c.q;
  j["l_pre_r"] = c.l_pre_r;
  j["l_down_r"] = c.l_down_r;
  j["l_up_r"] = c.l_up_r;
  j["l_post_r"] = c.l_post_r;
  j["l_retain_e"] = c.l_retain_e;
  j["l_down_e"] = c.l_down_e;
  json pairs = json::array();
  for (Pair p : c.pair_set) pairs.push_back(pair_name(p));
  j["pair_set"] = std::move(pairs);
  j["discrepancy"] = c.discrepancy == DiscrepancyOp::difference ? "difference" : "product";
  ordered_json lt;
  lt["focal"] = c.loss_terms.focal;
  lt["diou"] = c.loss_terms.diou;
  lt["smooth_l1"] = c.loss_terms.smooth_l1;
  lt["det_bce"] = c.loss_terms.det_bce;
  lt["rec_mae"] = c.loss_terms.rec_mae;
  j["loss_terms"] = std::move(lt);
  return j;
}

inline ModelConfig model_config_from_json(const json& j) {
  reject_unknown_keys(j,
                      {"d", "d_a", "k", "q", "l_pre_r", "l_down_r", "l_up_r", "l_post_r", "l_retain_e",
                       "l_down_e", "pair_set", "discrepancy", "loss_terms"},
                      "model config");
  ModelConfig c;
  try {
    if (j.contains("d")) c.d = j.at("d").get<int>();
    if (j.contains("d_a")) c.d_a = j.at("d_a").get<int>();
    if (j.contains("k")) c.k = j.at("k").get<int>();
    if (j.contains("q")) c.q = j.at("q").get<int>();
    if (j.contains("l_pre_r")) c.l_pre_r = j.at("l_pre_r").get<int>();
    if (j.contains("l_down_r")) c.l_down_r = j.at("l_down_r").get<int>();
    if (j.contains("l_up_r")) c.l_up_r = j.at("l_up_r").get<int>();
    if (j.contains("l_post_r")) c.l_post_r = j.at("l_post_r").get<int>();
    if (j.contains("l_retain_e")) c.l_retain_e = j.at("l_retain_e").get<int>();
    if (j.contains("l_down_e")) c.l_down_e = j.at("l_down_e").get<int>();
    if (j.contains("pair_set")) {
      c.pair_set.clear();
      for (const auto& p : j.at("pair_set")) c.pair_set.push_back(pair_from_name(p.get<std::string>()));
    }
    if (j.contains("discrepancy")) {
      const std::string s = j.at("discrepancy").get<std::string>();
      if (s == "difference")
        c.discrepancy = DiscrepancyOp::difference;
      else if (s == "product")
        c.discrepancy = DiscrepancyOp::product;
      else
        throw config_error("model config: unknown discrepancy \"" + s + "\"");
    }
    if (j.contains("loss_terms")) {
      const json& lt = j.at("loss_terms");
      reject_unknown_keys(lt, {"focal", "diou", "smooth_l1", "det_bce", "rec_mae"}, "loss_terms");
      if (lt.contains("focal")) c.loss_terms.focal = lt.at("focal").get<bool>();
      if (lt.contains("diou")) c.loss_terms.diou = lt.at("diou").get<bool>();
      if (lt.contains("smooth_l1")) c.loss_terms.smooth_l1 = lt.at("smooth_l1").get<bool>();
      if (lt.contains("det_bce")) c.loss_terms.det_bce = lt.at("det_bce").get<bool>();
      if (lt.contains("rec_mae")) c.loss_terms.rec_mae = lt.at("rec_mae").get<bool>();
    }
  } catch (const json::exception& e) {
    throw config_error(std::string("model config: ") + e.what());
  }
  return c;
}

// ---- checkpoints -----------------------------------------------------------

template <typename T>
void save_checkpoint(const std::string& path, const Model<T>& model) {
  BinWriter w;
  w.bytes("AVRM");
  w.u32(1);
  const std::string cfg = model_config_to_json(model.config()).dump();
  w.u32(static_cast<std::uint32_t>(cfg.size()));
  w.bytes(cfg);
  const auto& params = model.params();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.u32(static_cast<std::uint32_t>(p.rank()));
    for (int s : p.shape) w.u32(static_cast<std::uint32_t>(s));
    if constexpr (std::is_same_v<T, float>) {
      w.f32_from(p.data.data(), p.data.size());
    } else {
      for (const T& v : p.data) w.f32(static_cast<float>(v));
    }
  }
  write_file_bytes(path, w.str());
}

template <typename T>
Model<T> load_checkpoint(const std::string& path) {
  BinReader r(path, read_file_bytes(path));
  if (r.bytes(4) != "AVRM") throw format_error(path + ": bad magic, expected AVRM");
  const std::uint32_t version = r.u32();
  if (version != 1) throw format_error(path + ": unsupported version " + std::to_string(version));
  const std::uint32_t cfg_len = r.u32();
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(json::parse(r.bytes(cfg_len)));
  } catch (const json::exception& e) {
    throw format_error(path + ": embedded config: " + e.what());
  }
  Model<T> model(cfg);
  auto& params = model.params();
  const std::uint32_t n = r.u32();
  if (n != params.size())
    throw format_error(path + ": parameter count " + std::to_string(n) + " does not match config (" +
                       std::to_string(params.size()) + ")");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::uint32_t rank = r.u32();
    std::vector<int> shape;
    for (std::uint32_t s = 0; s < rank; ++s) shape.push_back(static_cast<int>(r.u32()));
    if (shape != params[i].shape)
      throw format_error(path + ": parameter " + model.param_names()[i] + " has shape " +
                         shape_str(shape) + ", expected " + shape_str(params[i].shape));
    if constexpr (std::is_same_v<T, float>) {
      r.f32_into(params[i].data.data(), params[i].data.size());
    } else {
      for (auto& v : params[i].data) v = static_cast<T>(r.f32());
    }
  }
  r.expect_end();
  return model;
}

// ---- optimizer state sidecar ------------------------------------------------

struct TrainStateRecord {
  std::uint32_t next_epoch = 0;
  std::uint64_t adam_step = 0;
  double lr = 0.0;
  bool has_best = false;
  double best_criterion = 0.0;
  std::uint32_t epochs_since_best = 0;
  std::uint32_t plateau_counter = 0;
  std::vector<Tensor<float>> m, v;
};

inline void save_train_state(const std::string& path, const TrainStateRecord& s) {
  BinWriter w;
  w.bytes("AVTS");
  w.u32(1);
  w.u32(s.next_epoch);
  w.u64(s.adam_step);
  w.f64(s.lr);
  w.u8(s.has_best ? 1 : 0);
  w.f64(s.best_criterion);
  w.u32(s.epochs_since_best);
  w.u32(s.plateau_counter);
  w.u32(static_cast<std::uint32_t>(s.m.size()));
  for (std::size_t i = 0; i < s.m.size(); ++i) {
    w.u32(static_cast<std::uint32_t>(s.m[i].numel()));
    w.f32_from(s.m[i].data.data(), s.m[i].data.size());
    w.f32_from(s.v[i].data.data(), s.v[i].data.size());
  }
  write_file_bytes(path, w.str());
}

// Moments are loaded flat; the caller reshapes against its parameters.
inline TrainStateRecord load_train_state(const std::string& path) {
  BinReader r(path, read_file_bytes(path));
  if (r.bytes(4) != "AVTS") throw format_error(path + ": bad magic, expected AVTS");
  const std::uint32_t version = r.u32();
  if (version != 1) throw format_error(path + ": unsupported version " + std::to_string(version));
  TrainStateRecord s;
  s.next_epoch = r.u32();
  s.adam_step = r.u64();
  s.lr = r.f64();
  s.has_best = r.u8() != 0;
  s.best_criterion = r.f64();
  s.epochs_since_best = r.u32();
  s.plateau_counter = r.u32();
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t numel = r.u32();
    Tensor<float> m({static_cast<int>(numel)});
    Tensor<float> v({static_cast<int>(numel)});
    r.f32_into(m.data.data(), numel);
    r.f32_into(v.data.data(), numel);
    s.m.push_back(std::move(m));
    s.v.push_back(std::move(v));
  }
  r.expect_end();
  return s;
}

}  // namespace auvire
