#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "auvire/annotations.hpp"
#include "auvire/graph.hpp"
#include "auvire/network.hpp"

namespace auvire {

// Probability clamp keeping log() finite.
inline constexpr double kProbEps = 1e-12;
inline constexpr double kFocalAlpha = 0.25;
inline constexpr double kFocalGamma = 2.0;
// Floor for interval denominators; positive positions sit far above it.
inline constexpr double kLenEps = 1e-12;

template <typename T>
struct LossNodes {
  using NodeId = typename Graph<T>::NodeId;
  NodeId total = -1;
  NodeId loc = -1;
  NodeId rec = -1;  // -1 when the term is disabled
  NodeId det = -1;
};

struct LossReport {
  double total = 0.0;
  double loc = 0.0;
  double rec = 0.0;
  double det = 0.0;
  bool has_rec = false;
  bool has_det = false;
  std::map<std::string, double> terms;
};

namespace detail {

// Elementwise focal term on raw logits against {0,1} targets:
// -alpha_t * (1 - p_t)^gamma * log(p_t), p clamped to [kProbEps, 1-kProbEps].
template <typename T>
typename Graph<T>::NodeId focal_elementwise(Graph<T>& g, typename Graph<T>::NodeId logits,
                                            const Tensor<T>& targets, T alpha, T gamma) {
  const Tensor<T>& lv = g.value(logits);
  if (!(lv.shape == targets.shape)) throw contract_error("focal: target shape mismatch");
  Tensor<T> alpha_t = targets;
  Tensor<T> ones = Tensor<T>::full(targets.shape, T(1));
  for (auto& v : alpha_t.data) v = v > T(0.5) ? alpha : T(1) - alpha;
  auto y = g.constant(targets);
  auto one = g.constant(std::move(ones));
  auto p = g.clamp(g.sigmoid(logits), static_cast<T>(kProbEps), T(1) - static_cast<T>(kProbEps));
  // p_t = y*p + (1-y)*(1-p)
  auto pt = g.add(g.multiply(y, p), g.multiply(g.subtract(one, y), g.subtract(one, p)));
  auto mod = g.pow(g.subtract(one, pt), gamma);
  auto ce = g.scale(g.log(pt), T(-1));
  return g.multiply(g.constant(std::move(alpha_t)), g.multiply(mod, ce));
}

// Elementwise 1D distance-IoU loss between predicted and target intervals,
// all tensors (n,1): 1 - iou + (centre gap)^2 / (enclosing length)^2.
template <typename T>
typename Graph<T>::NodeId diou_elementwise(Graph<T>& g, typename Graph<T>::NodeId s_pred,
                                           typename Graph<T>::NodeId e_pred,
                                           typename Graph<T>::NodeId s_gt,
                                           typename Graph<T>::NodeId e_gt) {
  const std::vector<int> shp = g.value(s_pred).shape;
  auto eps = g.constant(Tensor<T>::full(shp, static_cast<T>(kLenEps)));
  auto inter = g.relu(g.subtract(g.minimum(e_pred, e_gt), g.maximum(s_pred, s_gt)));
  auto uni = g.subtract(g.add(g.subtract(e_pred, s_pred), g.subtract(e_gt, s_gt)), inter);
  auto iou = g.divide(inter, g.maximum(uni, eps));
  auto c = g.maximum(g.subtract(g.maximum(e_pred, e_gt), g.minimum(s_pred, s_gt)), eps);
  auto gap = g.subtract(g.scale(g.add(s_pred, e_pred), T(0.5)), g.scale(g.add(s_gt, e_gt), T(0.5)));
  auto penalty = g.divide(g.multiply(gap, gap), g.multiply(c, c));
  return g.add(g.subtract(g.constant(Tensor<T>::full(shp, T(1))), iou), penalty);
}

// Elementwise smooth L1 on interval endpoints, averaged over the two coords.
template <typename T>
typename Graph<T>::NodeId smooth_l1_elementwise(Graph<T>& g, typename Graph<T>::NodeId s_pred,
                                                typename Graph<T>::NodeId e_pred,
                                                typename Graph<T>::NodeId s_gt,
                                                typename Graph<T>::NodeId e_gt, T beta) {
  auto hs = g.huber(g.subtract(s_pred, s_gt), beta);
  auto he = g.huber(g.subtract(e_pred, e_gt), beta);
  return g.scale(g.add(hs, he), T(0.5));
}

}  // namespace detail

// Localization loss over all pyramid levels. Each level contributes
// (sum of focal over its valid positions + sum of regression over its
// positives) / max(1, its positives); levels are averaged.
template <typename T>
typename Graph<T>::NodeId build_loc_loss(Graph<T>& g, const ForwardResult<T>& fwd,
                                         const FrameAnnotation& ann, const ModelConfig& cfg) {
  using NodeId = typename Graph<T>::NodeId;
  if (ann.frames() < fwd.valid_len) throw contract_error("loc loss: annotation shorter than valid length");
  std::vector<NodeId> level_terms;
  for (const LevelNodes<T>& lvl : fwd.levels) {
    const int n = lvl.valid;
    Tensor<T> tp({n, 1});
    Tensor<T> s_gt({n, 1}), e_gt({n, 1});
    Tensor<T> anchors({n, 1});
    int n_pos = 0;
    for (int i = 0; i < n; ++i) {
      const int frame = i * lvl.stride;
      const double anchor = (i + 0.5) * lvl.stride / fwd.fps;
      anchors.at(i, 0) = static_cast<T>(anchor);
      if (ann.fake[static_cast<std::size_t>(frame)]) {
        ++n_pos;
        tp.at(i, 0) = T(1);
        const double centre = (frame + 0.5) / fwd.fps;
        s_gt.at(i, 0) = static_cast<T>(centre - ann.offsets[static_cast<std::size_t>(frame)][0]);
        e_gt.at(i, 0) = static_cast<T>(centre + ann.offsets[static_cast<std::size_t>(frame)][1]);
      }
    }
    NodeId logits = g.slice_rows(lvl.cls, 0, n);
    NodeId focal = detail::focal_elementwise(g, logits, tp, static_cast<T>(kFocalAlpha),
                                             static_cast<T>(kFocalGamma));
    NodeId reg_all = g.slice_rows(lvl.reg, 0, n);
    NodeId left = g.slice_channels(reg_all, 0, 1);
    NodeId right = g.slice_channels(reg_all, 1, 2);
    NodeId anc = g.constant(anchors);
    NodeId s_pred = g.subtract(anc, left);
    NodeId e_pred = g.add(anc, right);
    NodeId reg = cfg.loss_terms.diou
                     ? detail::diou_elementwise(g, s_pred, e_pred, g.constant(s_gt), g.constant(e_gt))
                     : detail::smooth_l1_elementwise(g, s_pred, e_pred, g.constant(s_gt),
                                                     g.constant(e_gt), T(1));
    NodeId masked_reg = g.multiply(reg, g.constant(tp));
    NodeId level_sum = g.add(g.sum(focal), g.sum(masked_reg));
    level_terms.push_back(g.scale(level_sum, T(1) / static_cast<T>(std::max(1, n_pos))));
  }
  NodeId acc = level_terms[0];
  for (std::size_t i = 1; i < level_terms.size(); ++i) acc = g.add(acc, level_terms[i]);
  return g.scale(acc, T(1) / static_cast<T>(level_terms.size()));
}

// Reconstruction loss, gated to exactly zero unless every valid frame is real:
// sum over pairs of mean absolute reconstruction error per valid cell.
template <typename T>
typename Graph<T>::NodeId build_rec_loss(Graph<T>& g, const ForwardResult<T>& fwd,
                                         const FrameAnnotation& ann, const ModelConfig& cfg) {
  using NodeId = typename Graph<T>::NodeId;
  for (int tau = 0; tau < fwd.valid_len; ++tau)
    if (ann.fake[static_cast<std::size_t>(tau)]) return g.constant(Tensor<T>::scalar(T(0)));
  NodeId acc = -1;
  for (std::size_t pi = 0; pi < fwd.recon.size(); ++pi) {
    NodeId err = g.sum(g.abs(g.subtract(fwd.recon[pi], fwd.recon_target[pi])));
    acc = (pi == 0) ? err : g.add(acc, err);
  }
  return g.scale(acc, T(1) / static_cast<T>(static_cast<double>(fwd.valid_len) * cfg.d));
}

// Video-level logit: max classification logit across valid positions of all levels.
template <typename T>
typename Graph<T>::NodeId build_video_logit(Graph<T>& g, const ForwardResult<T>& fwd) {
  using NodeId = typename Graph<T>::NodeId;
  NodeId acc = -1;
  for (const LevelNodes<T>& lvl : fwd.levels) {
    NodeId m = g.reduce_max(g.slice_rows(lvl.cls, 0, lvl.valid));
    acc = (acc < 0) ? m : g.maximum(acc, m);
  }
  return acc;
}

// Binary cross-entropy of the video logit against the video-level target.
template <typename T>
typename Graph<T>::NodeId build_det_loss(Graph<T>& g, const ForwardResult<T>& fwd,
                                         const FrameAnnotation& ann) {
  using NodeId = typename Graph<T>::NodeId;
  NodeId z = build_video_logit(g, fwd);
  const int y = video_target(ann);
  // -log(sigmoid(z)) for y=1, -log(sigmoid(-z)) for y=0
  NodeId zz = y == 1 ? z : g.scale(z, T(-1));
  NodeId p = g.clamp(g.sigmoid(zz), static_cast<T>(kProbEps), T(1) - static_cast<T>(kProbEps));
  return g.scale(g.log(p), T(-1));
}

// Total = unweighted mean of the active top-level terms.
template <typename T>
LossNodes<T> build_losses(Graph<T>& g, const ForwardResult<T>& fwd, const FrameAnnotation& ann,
                          const ModelConfig& cfg) {
  using NodeId = typename Graph<T>::NodeId;
  LossNodes<T> out;
  out.loc = build_loc_loss(g, fwd, ann, cfg);
  std::vector<NodeId> active = {out.loc};
  if (cfg.loss_terms.rec_mae) {
    out.rec = build_rec_loss(g, fwd, ann, cfg);
    active.push_back(out.rec);
  }
  if (cfg.loss_terms.det_bce) {
    out.det = build_det_loss(g, fwd, ann);
    active.push_back(out.det);
  }
  NodeId acc = active[0];
  for (std::size_t i = 1; i < active.size(); ++i) acc = g.add(acc, active[i]);
  out.total = g.scale(acc, T(1) / static_cast<T>(active.size()));
  return out;
}

template <typename T>
LossReport report_losses(Graph<T>& g, const LossNodes<T>& nodes) {
  LossReport r;
  r.total = static_cast<double>(g.value(nodes.total).data[0]);
  r.loc = static_cast<double>(g.value(nodes.loc).data[0]);
  r.terms["total"] = r.total;
  r.terms["loc"] = r.loc;
  if (nodes.rec >= 0) {
    r.has_rec = true;
    r.rec = static_cast<double>(g.value(nodes.rec).data[0]);
    r.terms["rec"] = r.rec;
  }
  if (nodes.det >= 0) {
    r.has_det = true;
    r.det = static_cast<double>(g.value(nodes.det).data[0]);
    r.terms["det"] = r.det;
  }
  return r;
}

// Scalar conveniences sharing the graph math.

inline double focal_loss(double logit, int target, double alpha = kFocalAlpha,
                         double gamma = kFocalGamma) {
  Graph<double> g;
  Tensor<double> t({1, 1}, {static_cast<double>(target)});
  auto x = g.input(Tensor<double>({1, 1}, {logit}));
  return g.value(detail::focal_elementwise(g, x, t, alpha, gamma)).data[0];
}

inline double diou_loss(Interval pred, Interval gt) {
  Graph<double> g;
  auto mk = [&](double v) { return g.input(Tensor<double>({1, 1}, {v})); };
  return g.value(detail::diou_elementwise(g, mk(pred.start), mk(pred.end), mk(gt.start), mk(gt.end)))
      .data[0];
}

inline double smooth_l1_loss(Interval pred, Interval gt, double beta = 1.0) {
  Graph<double> g;
  auto mk = [&](double v) { return g.input(Tensor<double>({1, 1}, {v})); };
  return g
      .value(detail::smooth_l1_elementwise(g, mk(pred.start), mk(pred.end), mk(gt.start), mk(gt.end), beta))
      .data[0];
}

}  // namespace auvire
