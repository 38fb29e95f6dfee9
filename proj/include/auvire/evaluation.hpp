#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "auvire/annotations.hpp"
#include "auvire/postprocess.hpp"

namespace auvire {

struct EvalRecord {
  std::string id;
  std::vector<SegmentPrediction> predictions;
  std::vector<Interval> ground_truth;
  double video_score = 0.0;
  int video_label = 0;
};

struct EvalConfig {
  std::vector<double> ap_ious = {0.5, 0.75, 0.9, 0.95};
  std::vector<int> ar_ks = {100, 50, 30, 20, 10, 5};
  std::vector<double> ar_ious = [] {
    std::vector<double> v;
    for (int i = 0; i <= 9; ++i) v.push_back(0.5 + 0.05 * i);
    return v;
  }();
  DecodeConfig decode;
  double nms_sigma = 0.5;
  double nms_min_score = 1e-4;
};

namespace detail {

struct PooledPrediction {
  std::size_t record;
  SegmentPrediction pred;
};

// Greedy matching: predictions visited in score order; each takes the
// still-unmatched ground truth of its own video with the highest IoU at or
// above the threshold (ties to the earliest segment).
inline int greedy_match_count(const std::vector<PooledPrediction>& order,
                              const std::vector<EvalRecord>& records, double thr,
                              std::vector<char>* hits = nullptr) {
  std::vector<std::vector<char>> used(records.size());
  for (std::size_t r = 0; r < records.size(); ++r)
    used[r].assign(records[r].ground_truth.size(), 0);
  int matched = 0;
  if (hits) hits->assign(order.size(), 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& pp = order[i];
    const auto& gts = records[pp.record].ground_truth;
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
      if (used[pp.record][gi]) continue;
      const double iou = iou_1d({pp.pred.start, pp.pred.end}, gts[gi]);
      if (iou >= thr && iou > best_iou) {
        best_iou = iou;
        best = static_cast<int>(gi);
      }
    }
    if (best >= 0) {
      used[pp.record][static_cast<std::size_t>(best)] = 1;
      ++matched;
      if (hits) (*hits)[i] = 1;
    }
  }
  return matched;
}

inline std::size_t total_ground_truth(const std::vector<EvalRecord>& records) {
  std::size_t n = 0;
  for (const auto& r : records) n += r.ground_truth.size();
  return n;
}

}  // namespace detail

// All-point average precision over the pooled prediction list at one IoU
// threshold. Ties in score keep input order (record order, then the
// record's own prediction order).
inline std::optional<double> ap_at_iou(const std::vector<EvalRecord>& records, double thr) {
  const std::size_t n_gt = detail::total_ground_truth(records);
  if (n_gt == 0) return std::nullopt;
  std::vector<detail::PooledPrediction> pool;
  for (std::size_t r = 0; r < records.size(); ++r)
    for (const auto& p : records[r].predictions) pool.push_back({r, p});
  std::stable_sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) {
    return a.pred.score > b.pred.score;
  });
  std::vector<char> hits;
  detail::greedy_match_count(pool, records, thr, &hits);
  double ap = 0.0;
  int tp = 0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (!hits[i]) continue;
    ++tp;
    ap += static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  return ap / static_cast<double>(n_gt);
}

// Average recall at a per-video prediction budget, averaged over IoU
// thresholds; recall pools matches and ground truth across videos.
inline std::optional<double> ar_at_k(const std::vector<EvalRecord>& records, int k,
                                     const std::vector<double>& thresholds) {
  if (k < 1) throw contract_error("ar_at_k: k must be >= 1");
  if (thresholds.empty()) throw contract_error("ar_at_k: no thresholds");
  const std::size_t n_gt = detail::total_ground_truth(records);
  if (n_gt == 0) return std::nullopt;
  std::vector<detail::PooledPrediction> pool;
  for (std::size_t r = 0; r < records.size(); ++r) {
    auto preds = records[r].predictions;
    std::stable_sort(preds.begin(), preds.end(),
                     [](const SegmentPrediction& a, const SegmentPrediction& b) { return a.score > b.score; });
    if (static_cast<int>(preds.size()) > k) preds.resize(static_cast<std::size_t>(k));
    for (const auto& p : preds) pool.push_back({r, p});
  }
  std::stable_sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) {
    return a.pred.score > b.pred.score;
  });
  double acc = 0.0;
  for (double thr : thresholds)
    acc += static_cast<double>(detail::greedy_match_count(pool, records, thr)) / static_cast<double>(n_gt);
  return acc / static_cast<double>(thresholds.size());
}

// Rank statistic with midranks for ties; needs both classes present.
inline std::optional<double> roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw contract_error("roc_auc: size mismatch");
  std::size_t n_pos = 0, n_neg = 0;
  for (int l : labels) (l ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  std::vector<std::size_t> idx(scores.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j + 1);
    for (std::size_t m = i; m <= j; ++m)
      if (labels[idx[m]]) rank_sum_pos += midrank;
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

// All-point average precision of a binary classifier; ties keep input order.
inline std::optional<double> binary_ap(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw contract_error("binary_ap: size mismatch");
  std::size_t n_pos = 0;
  for (int l : labels) n_pos += static_cast<std::size_t>(l != 0);
  if (n_pos == 0) return std::nullopt;
  std::vector<std::size_t> idx(scores.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0;
  int tp = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (!labels[idx[i]]) continue;
    ++tp;
    ap += static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  return ap / static_cast<double>(n_pos);
}

// Named metric table; metrics whose preconditions fail are NaN.
inline std::vector<std::pair<std::string, double>> metric_report(const std::vector<EvalRecord>& records,
                                                                 const EvalConfig& cfg = {}) {
  auto val = [](std::optional<double> v) { return v ? *v : std::nan(""); };
  std::vector<std::pair<std::string, double>> out;
  auto fmt = [](double x) {
    std::string s = std::to_string(x);
    while (!s.empty() && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
  };
  for (double thr : cfg.ap_ious) out.emplace_back("ap@" + fmt(thr), val(ap_at_iou(records, thr)));
  for (int k : cfg.ar_ks) out.emplace_back("ar@" + std::to_string(k), val(ar_at_k(records, k, cfg.ar_ious)));
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& r : records) {
    scores.push_back(r.video_score);
    labels.push_back(r.video_label);
  }
  out.emplace_back("auc", val(roc_auc(scores, labels)));
  out.emplace_back("ap_binary", val(binary_ap(scores, labels)));
  return out;
}

}  // namespace auvire
