#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "auvire/annotations.hpp"
#include "auvire/evaluation.hpp"
#include "auvire/network.hpp"
#include "auvire/objectives.hpp"
#include "auvire/postprocess.hpp"
#include "auvire/rng.hpp"
#include "auvire/serialize.hpp"

namespace auvire {

struct TrainConfig {
  int max_epochs = 100;
  double lr = 1e-3;
  int batch_size = 64;
  double plateau_factor = 0.5;
  int plateau_patience = 5;
  int early_stop_patience = 10;
  double improvement_threshold = 1e-4;
  std::uint64_t seed = 0;
  std::vector<std::string> criterion_keys = {"ap@0.5", "ap@0.75", "ap@0.95", "ar@100",
                                             "ar@50",  "ar@20",   "ar@10"};

  void validate() const {
    if (max_epochs < 1) throw config_error("train config: max_epochs must be at least 1");
    if (!(lr > 0)) throw config_error("train config: lr must be positive");
    if (batch_size < 1) throw config_error("train config: batch_size must be at least 1");
    if (!(plateau_factor > 0) || plateau_factor > 1)
      throw config_error("train config: plateau_factor must be in (0, 1]");
    if (plateau_patience < 1) throw config_error("train config: plateau_patience must be at least 1");
    if (early_stop_patience < plateau_patience)
      throw config_error("train config: early_stop_patience must be at least plateau_patience");
    if (improvement_threshold < 0)
      throw config_error("train config: improvement_threshold must be non-negative");
    if (criterion_keys.empty()) throw config_error("train config: criterion_keys must be non-empty");
  }
};

// Bias-corrected Adam over external parameter storage. Updates run in
// declaration order, element by element, so results do not depend on
// thread count or accumulation order elsewhere.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>>* params, const std::vector<std::string>* names, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8)
      : params_(params), names_(names), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& p : *params_) {
      m_.push_back(Tensor<T>::zeros(p.shape));
      v_.push_back(Tensor<T>::zeros(p.shape));
    }
  }

  void step(const std::vector<Tensor<T>>& grads, double lr) {
    if (grads.size() != params_->size()) throw contract_error("adam: gradient count mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_->size(); ++i) {
      Tensor<T>& p = (*params_)[i];
      if (!grads[i].data.empty() && grads[i].data.size() != p.data.size())
        throw contract_error("adam: gradient shape mismatch for " + (*names_)[i]);
      for (std::size_t j = 0; j < p.data.size(); ++j) {
        const double g = grads[i].data.empty() ? 0.0 : static_cast<double>(grads[i].data[j]);
        if (!std::isfinite(g))
          throw std::runtime_error("training aborted: non-finite gradient in parameter " +
                                   (*names_)[i]);
        double m = static_cast<double>(m_[i].data[j]);
        double v = static_cast<double>(v_[i].data[j]);
        m = b1_ * m + (1.0 - b1_) * g;
        v = b2_ * v + (1.0 - b2_) * g * g;
        m_[i].data[j] = static_cast<T>(m);
        v_[i].data[j] = static_cast<T>(v);
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        p.data[j] = static_cast<T>(static_cast<double>(p.data[j]) - lr * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  std::uint64_t step_count() const { return t_; }
  void set_step_count(std::uint64_t t) { t_ = t; }
  std::vector<Tensor<T>>& moments_m() { return m_; }
  std::vector<Tensor<T>>& moments_v() { return v_; }

 private:
  std::vector<Tensor<T>>* params_;
  const std::vector<std::string>* names_;
  std::vector<Tensor<T>> m_, v_;
  std::uint64_t t_ = 0;
  double b1_, b2_, eps_;
};

struct TrainSample {
  FeaturePair<float> features;
  FrameAnnotation targets;
  SegmentAnnotation annotation;
};

inline TrainSample make_train_sample(FeaturePair<float> f, SegmentAnnotation a) {
  TrainSample s;
  s.targets = build_frame_targets(a.segments, f.frames(), f.fps);
  s.features = std::move(f);
  s.annotation = std::move(a);
  return s;
}

// Forward, decode and soft-NMS one sample set into evaluation records.
template <typename T>
std::vector<EvalRecord> collect_eval_records(const Model<T>& model,
                                             const std::vector<TrainSample>& samples,
                                             const EvalConfig& ecfg) {
  std::vector<EvalRecord> out;
  out.reserve(samples.size());
  for (const TrainSample& s : samples) {
    Graph<T> g;
    FeaturePair<T> feats;
    if constexpr (std::is_same_v<T, float>) {
      feats = s.features;
    } else {
      feats.visual = s.features.visual.template cast<T>();
      feats.audio = s.features.audio.template cast<T>();
      feats.valid_len = s.features.valid_len;
      feats.fps = s.features.fps;
    }
    auto fwd = model.forward(g, feats);
    PyramidOutput pyr = extract_pyramid(g, fwd);
    auto segs = soft_nms(decode_segments(pyr, ecfg.decode), ecfg.nms_sigma, ecfg.nms_min_score);
    EvalRecord rec;
    rec.id = s.annotation.id;
    rec.predictions = std::move(segs);
    rec.ground_truth = s.annotation.segments;
    rec.video_score = video_score(rec.predictions);
    rec.video_label = s.annotation.segments.empty() ? 0 : 1;
    out.push_back(std::move(rec));
  }
  return out;
}

inline double criterion_from_report(const std::vector<std::pair<std::string, double>>& report,
                                    const std::vector<std::string>& keys) {
  double sum = 0.0;
  for (const std::string& k : keys) {
    bool found = false;
    for (const auto& [name, value] : report) {
      if (name != k) continue;
      found = true;
      if (std::isnan(value))
        throw std::runtime_error("validation criterion metric " + k +
                                 " is undefined on this split");
      sum += value;
    }
    if (!found) throw config_error("criterion metric " + k + " is not in the report");
  }
  return sum;
}

struct EpochRow {
  int epoch = 0;
  double loss = 0.0, loc = 0.0, rec = 0.0, det = 0.0;
  bool has_rec = false, has_det = false;
  double criterion = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  double best_criterion = 0.0;
  int epochs_completed = 0;
  bool early_stopped = false;
};

// Full-batch-free training loop: each batch accumulates per-sample gradients
// in sample-index order, means them, and takes one Adam step. Checkpoints,
// optimizer state and history land in out_dir; rerunning resumes from the
// last finished epoch and continues bit-for-bit as if never interrupted.
template <typename T = float>
class Trainer {
 public:
  Trainer(ModelConfig mcfg, TrainConfig tcfg, std::string out_dir)
      : model_(std::move(mcfg)), tcfg_(std::move(tcfg)), out_dir_(std::move(out_dir)) {
    tcfg_.validate();
  }

  std::string best_path() const { return out_dir_ + "/model_best.bin"; }
  std::string last_path() const { return out_dir_ + "/model_last.bin"; }
  std::string state_path() const { return out_dir_ + "/train_state.bin"; }
  std::string history_path() const { return out_dir_ + "/history.jsonl"; }

  Model<T>& model() { return model_; }

  TrainResult run(const std::vector<TrainSample>& train, const std::vector<TrainSample>& val) {
    if (train.empty()) throw config_error("training split is empty");
    if (val.empty()) throw config_error("validation split is empty");
    std::filesystem::create_directories(out_dir_);

    Adam<T> adam(&model_.params(), &model_.param_names());
    double lr = tcfg_.lr;
    bool has_best = false;
    double best = 0.0;
    std::uint32_t since_best = 0, plateau = 0;
    int start_epoch = 0;
    std::vector<std::string> history;

    if (std::filesystem::exists(state_path())) {
      const std::string want = model_config_to_json(model_.config()).dump();
      model_ = load_checkpoint<T>(last_path());
      if (model_config_to_json(model_.config()).dump() != want)
        throw config_error(last_path() + ": checkpoint config differs from the requested model");
      adam = Adam<T>(&model_.params(), &model_.param_names());
      TrainStateRecord st = load_train_state(state_path());
      if (st.m.size() != model_.params().size())
        throw format_error(state_path() + ": moment count does not match model");
      for (std::size_t i = 0; i < st.m.size(); ++i) {
        auto& m = adam.moments_m()[i];
        auto& v = adam.moments_v()[i];
        if (st.m[i].numel() != m.numel())
          throw format_error(state_path() + ": moment size mismatch for " +
                             model_.param_names()[i]);
        for (std::size_t j = 0; j < m.data.size(); ++j) {
          m.data[j] = static_cast<T>(st.m[i].data[j]);
          v.data[j] = static_cast<T>(st.v[i].data[j]);
        }
      }
      adam.set_step_count(st.adam_step);
      lr = st.lr;
      has_best = st.has_best;
      best = st.best_criterion;
      since_best = st.epochs_since_best;
      plateau = st.plateau_counter;
      start_epoch = static_cast<int>(st.next_epoch);
      if (std::filesystem::exists(history_path())) history = read_lines(history_path());
    } else {
      model_.init(tcfg_.seed);
    }

    TrainResult result;
    result.best_criterion = best;
    result.epochs_completed = start_epoch;

    const int n = static_cast<int>(train.size());
    for (int epoch = start_epoch; epoch < tcfg_.max_epochs; ++epoch) {
      std::vector<int> order(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
      Rng shuffle_rng(mix_seed(mix_seed(tcfg_.seed, 0x65706f6368ull), static_cast<std::uint64_t>(epoch)));
      shuffle_rng.shuffle(order.begin(), order.end());

      double sum_loss = 0.0, sum_loc = 0.0, sum_rec = 0.0, sum_det = 0.0;
      bool has_rec = false, has_det = false;
      std::vector<Tensor<T>> acc;
      for (const auto& p : model_.params()) acc.push_back(Tensor<T>::zeros(p.shape));

      int batch_index = 0;
      for (int begin = 0; begin < n; begin += tcfg_.batch_size, ++batch_index) {
        const int end = std::min(n, begin + tcfg_.batch_size);
        const int bn = end - begin;
        for (auto& a : acc)
          for (auto& x : a.data) x = T(0);
        for (int bi = begin; bi < end; ++bi) {
          const TrainSample& s = train[static_cast<std::size_t>(order[static_cast<std::size_t>(bi)])];
          Graph<T> g;
          FeaturePair<T> feats = cast_features(s.features);
          auto fwd = model_.forward(g, feats);
          auto nodes = build_losses(g, fwd, s.targets, model_.config());
          LossReport rep = report_losses(g, nodes);
          if (!std::isfinite(rep.total))
            throw std::runtime_error("training aborted: non-finite loss at epoch " +
                                     std::to_string(epoch) + ", batch " + std::to_string(batch_index) +
                                     ", sample " + s.annotation.id);
          sum_loss += rep.total;
          sum_loc += rep.loc;
          if (rep.has_rec) {
            has_rec = true;
            sum_rec += rep.rec;
          }
          if (rep.has_det) {
            has_det = true;
            sum_det += rep.det;
          }
          g.backward(nodes.total);
          for (std::size_t pi = 0; pi < acc.size(); ++pi) {
            const auto node = fwd.param_nodes[pi];
            if (node < 0) continue;
            const Tensor<T>& gr = g.gradient(node);
            if (gr.data.empty()) continue;
            for (std::size_t j = 0; j < gr.data.size(); ++j) acc[pi].data[j] += gr.data[j];
          }
        }
        const T inv = T(1) / static_cast<T>(bn);
        for (auto& a : acc)
          for (auto& x : a.data) x *= inv;
        adam.step(acc, lr);
      }

      const std::vector<EvalRecord> records = collect_eval_records(model_, val, ecfg_);
      const auto report = metric_report(records, ecfg_);
      const double crit = criterion_from_report(report, tcfg_.criterion_keys);

      EpochRow row;
      row.epoch = epoch;
      row.loss = sum_loss / n;
      row.loc = sum_loc / n;
      row.rec = sum_rec / n;
      row.det = sum_det / n;
      row.has_rec = has_rec;
      row.has_det = has_det;
      row.criterion = crit;
      row.lr = lr;
      history.push_back(format_row(row));
      if (history.size() > 100) history.erase(history.begin(), history.end() - 100);

      const bool improved = !has_best || crit > best + tcfg_.improvement_threshold;
      if (improved) {
        has_best = true;
        best = crit;
        since_best = 0;
        plateau = 0;
        save_checkpoint(best_path(), model_);
      } else {
        ++since_best;
        ++plateau;
        if (plateau >= static_cast<std::uint32_t>(tcfg_.plateau_patience)) {
          lr *= tcfg_.plateau_factor;
          plateau = 0;
        }
      }

      save_checkpoint(last_path(), model_);
      TrainStateRecord st;
      st.next_epoch = static_cast<std::uint32_t>(epoch + 1);
      st.adam_step = adam.step_count();
      st.lr = lr;
      st.has_best = has_best;
      st.best_criterion = best;
      st.epochs_since_best = since_best;
      st.plateau_counter = plateau;
      for (std::size_t i = 0; i < adam.moments_m().size(); ++i) {
        st.m.push_back(flatten_f32(adam.moments_m()[i]));
        st.v.push_back(flatten_f32(adam.moments_v()[i]));
      }
      save_train_state(state_path(), st);
      write_lines(history_path(), history);

      result.best_criterion = best;
      result.epochs_completed = epoch + 1;
      if (since_best >= static_cast<std::uint32_t>(tcfg_.early_stop_patience)) {
        result.early_stopped = true;
        break;
      }
    }
    return result;
  }

  const EvalConfig& eval_config() const { return ecfg_; }

 private:
  Model<T> model_;
  TrainConfig tcfg_;
  std::string out_dir_;
  EvalConfig ecfg_;

  static FeaturePair<T> cast_features(const FeaturePair<float>& f) {
    if constexpr (std::is_same_v<T, float>) {
      return f;
    } else {
      FeaturePair<T> out;
      out.visual = f.visual.template cast<T>();
      out.audio = f.audio.template cast<T>();
      out.valid_len = f.valid_len;
      out.fps = f.fps;
      return out;
    }
  }

  static Tensor<float> flatten_f32(const Tensor<T>& t) {
    Tensor<float> out({static_cast<int>(t.numel())});
    for (std::size_t j = 0; j < t.data.size(); ++j) out.data[j] = static_cast<float>(t.data[j]);
    return out;
  }

  static std::string format_row(const EpochRow& r) {
    ordered_json j;
    j["epoch"] = r.epoch;
    j["loss"] = r.loss;
    j["loc"] = r.loc;
    if (r.has_rec) j["rec"] = r.rec;
    if (r.has_det) j["det"] = r.det;
    j["criterion"] = r.criterion;
    j["lr"] = r.lr;
    return j.dump();
  }

  static std::vector<std::string> read_lines(const std::string& path) {
    const std::string data = read_file_bytes(path);
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos < data.size()) {
      std::size_t eol = data.find('\n', pos);
      if (eol == std::string::npos) eol = data.size();
      if (eol > pos) out.push_back(data.substr(pos, eol - pos));
      pos = eol + 1;
    }
    return out;
  }

  static void write_lines(const std::string& path, const std::vector<std::string>& lines) {
    std::string out;
    for (const auto& l : lines) out += l + "\n";
    write_file_bytes(path, out);
  }
};

// ---- architecture sweep ------------------------------------------------------

struct SweepGrid {
  std::vector<int> d_a = {32, 64, 128, 256};
  std::vector<int> recon_depth = {1, 2, 3};    // l_down_r = l_up_r
  std::vector<int> encoder_depth = {1, 2, 3};  // l_retain_e = l_down_e
};

struct SweepCell {
  std::string name;
  ModelConfig config;
  std::map<std::string, double> metrics;
  double criterion = 0.0;
  double avg_rank = 0.0;
  std::string error;
};

struct SweepResult {
  std::vector<SweepCell> cells;
  std::string best;
};

// Fractional ranks per metric, higher value = better (rank 1). Ties share
// the average of the positions they straddle.
inline std::vector<double> fractional_ranks_desc(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[idx[j + 1]] == values[idx[i]]) ++j;
    const double r = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline SweepResult grid_sweep(const ModelConfig& base, const TrainConfig& tcfg,
                              const std::vector<TrainSample>& train,
                              const std::vector<TrainSample>& val, const std::string& sweep_dir,
                              const SweepGrid& grid = SweepGrid{}) {
  std::filesystem::create_directories(sweep_dir);
  SweepResult out;

  for (int da : grid.d_a) {
    for (int r : grid.recon_depth) {
      for (int e : grid.encoder_depth) {
        SweepCell cell;
        cell.name = "da" + std::to_string(da) + "_r" + std::to_string(r) + "_e" + std::to_string(e);
        cell.config = base;
        cell.config.d_a = da;
        cell.config.l_down_r = r;
        cell.config.l_up_r = r;
        cell.config.l_retain_e = e;
        cell.config.l_down_e = e;

        const std::string result_path = sweep_dir + "/cell_" + cell.name + ".json";
        bool loaded = false;
        if (std::filesystem::exists(result_path)) {
          try {
            json j = json::parse(read_file_bytes(result_path));
            if (j.contains("error")) {
              cell.error = j.at("error").get<std::string>();
            } else {
              for (const auto& k : tcfg.criterion_keys) cell.metrics[k] = j.at("metrics").at(k).get<double>();
              cell.criterion = j.at("criterion").get<double>();
            }
            loaded = true;
          } catch (const json::exception&) {
            loaded = false;  // rewrite a corrupt result
          }
        }

        if (!loaded) {
          try {
            cell.config.validate();
            Trainer<float> trainer(cell.config, tcfg, sweep_dir + "/" + cell.name);
            trainer.run(train, val);
            Model<float> best = load_checkpoint<float>(trainer.best_path());
            const auto records = collect_eval_records(best, val, trainer.eval_config());
            const auto report = metric_report(records, trainer.eval_config());
            for (const auto& k : tcfg.criterion_keys)
              for (const auto& [name, value] : report)
                if (name == k) cell.metrics[k] = value;
            cell.criterion = criterion_from_report(report, tcfg.criterion_keys);
          } catch (const std::exception& ex) {
            cell.error = ex.what();
          }
          ordered_json j;
          j["cell"] = cell.name;
          j["config"] = model_config_to_json(cell.config);
          if (cell.error.empty()) {
            ordered_json m;
            for (const auto& k : tcfg.criterion_keys) m[k] = cell.metrics.at(k);
            j["metrics"] = std::move(m);
            j["criterion"] = cell.criterion;
          } else {
            j["error"] = cell.error;
          }
          write_file_bytes(result_path, j.dump(2) + "\n");
        }

        out.cells.push_back(std::move(cell));
      }
    }
  }

  // Rank healthy cells per criterion metric, then average.
  std::vector<std::size_t> ok;
  for (std::size_t i = 0; i < out.cells.size(); ++i)
    if (out.cells[i].error.empty()) ok.push_back(i);
  if (!ok.empty()) {
    std::vector<double> rank_sum(ok.size(), 0.0);
    for (const auto& key : tcfg.criterion_keys) {
      std::vector<double> vals;
      for (std::size_t i : ok) vals.push_back(out.cells[i].metrics.at(key));
      const auto ranks = fractional_ranks_desc(vals);
      for (std::size_t i = 0; i < ok.size(); ++i) rank_sum[i] += ranks[i];
    }
    double best_rank = 0.0;
    std::size_t best_idx = 0;
    for (std::size_t i = 0; i < ok.size(); ++i) {
      const double avg = rank_sum[i] / static_cast<double>(tcfg.criterion_keys.size());
      out.cells[ok[i]].avg_rank = avg;
      if (i == 0 || avg < best_rank) {
        best_rank = avg;
        best_idx = ok[i];
      }
    }
    out.best = out.cells[best_idx].name;
  }

  ordered_json summary;
  summary["best"] = out.best;
  ordered_json rows = ordered_json::array();
  std::vector<std::size_t> order(out.cells.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const bool ea = out.cells[a].error.empty(), eb = out.cells[b].error.empty();
    if (ea != eb) return ea;
    if (!ea) return false;
    return out.cells[a].avg_rank < out.cells[b].avg_rank;
  });
  for (std::size_t i : order) {
    const SweepCell& c = out.cells[i];
    ordered_json row;
    row["cell"] = c.name;
    if (c.error.empty()) {
      row["avg_rank"] = c.avg_rank;
      row["criterion"] = c.criterion;
      for (const auto& k : tcfg.criterion_keys) row[k] = c.metrics.at(k);
    } else {
      row["error"] = c.error;
    }
    rows.push_back(std::move(row));
  }
  summary["cells"] = std::move(rows);
  write_file_bytes(sweep_dir + "/summary.json", summary.dump(2) + "\n");
  return out;
}

}  // namespace auvire
