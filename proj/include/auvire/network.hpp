#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "auvire/graph.hpp"
#include "auvire/rng.hpp"
#include "auvire/tensor.hpp"

namespace auvire {

enum class Modality { audio, visual };

// Reconstruction pair (source, target): the source modality is mapped through
// a resampling net and compared against the target's features.
enum class Pair { av, va, aa, vv };

inline Modality pair_source(Pair p) {
  return (p == Pair::av || p == Pair::aa) ? Modality::audio : Modality::visual;
}
inline Modality pair_target(Pair p) {
  return (p == Pair::av || p == Pair::vv) ? Modality::visual : Modality::audio;
}
inline const char* pair_name(Pair p) {
  switch (p) {
    case Pair::av: return "av";
    case Pair::va: return "va";
    case Pair::aa: return "aa";
    default: return "vv";
  }
}
inline Pair pair_from_name(const std::string& s) {
  if (s == "av") return Pair::av;
  if (s == "va") return Pair::va;
  if (s == "aa") return Pair::aa;
  if (s == "vv") return Pair::vv;
  throw config_error("unknown pair name: " + s);
}

// Canonical concatenation order for discrepancy channels.
inline const std::vector<Pair>& canonical_pair_order() {
  static const std::vector<Pair> order = {Pair::av, Pair::va, Pair::aa, Pair::vv};
  return order;
}

enum class DiscrepancyOp { difference, product };

struct LossTerms {
  bool focal = true;
  bool diou = true;
  bool smooth_l1 = false;
  bool det_bce = false;
  bool rec_mae = true;
};

struct ModelConfig {
  int d = 16;    // feature channels per modality
  int d_a = 32;  // working width of all hidden layers
  int k = 9;     // resampling/encoder kernel width
  int q = 0;     // pyramid width; 0 mirrors d_a
  int l_pre_r = 1;
  int l_down_r = 2;
  int l_up_r = 2;
  int l_post_r = 2;
  int l_retain_e = 1;
  int l_down_e = 2;
  std::vector<Pair> pair_set = {Pair::av, Pair::vv, Pair::aa};
  DiscrepancyOp discrepancy = DiscrepancyOp::difference;
  LossTerms loss_terms;

  int fpn_width() const { return q > 0 ? q : d_a; }
  int levels() const { return l_down_e + 1; }

  void validate() const {
    if (d <= 0 || d_a <= 0) throw config_error("model: d and d_a must be positive");
    if (q < 0) throw config_error("model: q must be >= 0");
    if (k <= 0 || k % 2 == 0) throw config_error("model: k must be positive and odd");
    if (l_pre_r < 1 || l_down_r < 1 || l_up_r < 1 || l_post_r < 1 || l_retain_e < 1 || l_down_e < 1)
      throw config_error("model: all layer counts must be >= 1");
    if (l_down_r != l_up_r)
      throw config_error("model: l_down_r and l_up_r must match so reconstruction returns to input length");
    if (pair_set.empty()) throw config_error("model: pair_set must not be empty");
    for (std::size_t i = 0; i < pair_set.size(); ++i)
      for (std::size_t j = i + 1; j < pair_set.size(); ++j)
        if (pair_set[i] == pair_set[j]) throw config_error("model: duplicate pair in pair_set");
    if (!loss_terms.focal) throw config_error("model: focal term cannot be disabled");
    if (loss_terms.diou == loss_terms.smooth_l1)
      throw config_error("model: exactly one of diou/smooth_l1 must be active");
  }
};

template <typename T>
struct FeaturePair {
  Tensor<T> visual;  // (t, d)
  Tensor<T> audio;   // (t, d)
  int valid_len = 0;
  double fps = 25.0;

  int frames() const { return visual.shape.empty() ? 0 : visual.shape[0]; }
};

template <typename T>
struct LevelNodes {
  using NodeId = typename Graph<T>::NodeId;
  NodeId cls = -1;  // (t_l, 1) raw logits
  NodeId reg = -1;  // (t_l, 2) non-negative offsets in seconds
  int stride = 1;
  int rows = 0;
  int valid = 0;
};

template <typename T>
struct ForwardResult {
  using NodeId = typename Graph<T>::NodeId;
  NodeId x_v = -1;
  NodeId x_a = -1;
  std::vector<NodeId> recon;         // per pair_set entry, (t, d)
  std::vector<NodeId> recon_target;  // matching target feature node
  NodeId discrepancy = -1;
  std::vector<LevelNodes<T>> levels;
  // Graph node per model parameter, aligned with Model::params().
  std::vector<NodeId> param_nodes;
  int valid_len = 0;
  double fps = 0.0;
};

template <typename T>
class Model {
 public:
  using NodeId = typename Graph<T>::NodeId;

  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build();
  }

  const ModelConfig& config() const { return cfg_; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.numel();
    return n;
  }

  std::vector<Tensor<T>>& params() { return params_; }
  const std::vector<Tensor<T>>& params() const { return params_; }
  const std::vector<std::string>& param_names() const { return names_; }

  // He-normal weights in declaration order; biases zero except the
  // classification output, which starts at a low-positive-rate prior.
  void init(std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x6d6f64656cull));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor<T>& p = params_[i];
      const std::string& name = names_[i];
      const bool is_weight = name.size() > 2 && name.compare(name.size() - 2, 2, ".w") == 0;
      if (is_weight && p.rank() == 3) {
        const double fan_in = static_cast<double>(p.shape[1]) * p.shape[2];
        const double std = std::sqrt(2.0 / fan_in);
        for (auto& v : p.data) v = static_cast<T>(std * rng.normal());
      } else if (name.size() > 5 && name.compare(name.size() - 5, 5, ".gain") == 0) {
        for (auto& v : p.data) v = T(1);
      } else if (name == "head.cls.out.b") {
        for (auto& v : p.data) v = static_cast<T>(-std::log(99.0));
      } else {
        for (auto& v : p.data) v = T(0);
      }
    }
  }

  ForwardResult<T> forward(Graph<T>& g, const FeaturePair<T>& x) const {
    if (x.visual.rank() != 2 || x.audio.rank() != 2)
      throw contract_error("forward: features must be rank 2");
    if (!same_shape(x.visual, x.audio))
      throw contract_error("forward: visual/audio shape mismatch " + shape_str(x.visual.shape) +
                           " vs " + shape_str(x.audio.shape));
    if (x.visual.shape[1] != cfg_.d)
      throw contract_error("forward: feature width " + std::to_string(x.visual.shape[1]) +
                           " does not match configured d=" + std::to_string(cfg_.d));
    const int t = x.visual.shape[0];
    if (x.valid_len < 1 || x.valid_len > t) throw contract_error("forward: bad valid_len");
    if (!(x.fps > 0)) throw contract_error("forward: fps must be positive");

    std::vector<NodeId> pnodes(params_.size(), -1);
    ForwardResult<T> out;
    out.valid_len = x.valid_len;
    out.fps = x.fps;
    const int v = x.valid_len;

    out.x_v = g.mask_rows(g.input(x.visual), v);
    out.x_a = g.mask_rows(g.input(x.audio), v);

    // Reconstruction nets, one per pair.
    std::vector<NodeId> recon_by_pair(recon_.size(), -1);
    for (std::size_t pi = 0; pi < recon_.size(); ++pi) {
      const ReconNet& net = recon_[pi];
      NodeId h = (pair_source(net.pair) == Modality::audio) ? out.x_a : out.x_v;
      int scale = 1;
      for (const Stage& s : net.pre) h = apply_stage(g, pnodes, h, s, valid_at(v, scale));
      for (const Stage& s : net.down) {
        scale *= 2;
        h = apply_stage(g, pnodes, h, s, valid_at(v, scale));
      }
      for (const Stage& s : net.up) {
        scale /= 2;
        h = apply_stage(g, pnodes, h, s, valid_at(v, scale));
      }
      if (g.value(h).shape[0] != t) h = g.slice_rows(h, 0, t);
      for (const Stage& s : net.post) h = apply_stage(g, pnodes, h, s, valid_at(v, 1));
      recon_by_pair[pi] = h;
      out.recon.push_back(h);
      out.recon_target.push_back(pair_target(net.pair) == Modality::audio ? out.x_a : out.x_v);
    }

    // Discrepancies in canonical order.
    std::vector<NodeId> parts;
    for (Pair p : canonical_pair_order()) {
      int idx = -1;
      for (std::size_t pi = 0; pi < recon_.size(); ++pi)
        if (recon_[pi].pair == p) idx = static_cast<int>(pi);
      if (idx < 0) continue;
      NodeId target = out.recon_target[static_cast<std::size_t>(idx)];
      NodeId dsc = cfg_.discrepancy == DiscrepancyOp::difference
                       ? g.subtract(recon_by_pair[static_cast<std::size_t>(idx)], target)
                       : g.multiply(recon_by_pair[static_cast<std::size_t>(idx)], target);
      parts.push_back(dsc);
    }
    NodeId h = parts.size() == 1 ? parts[0] : g.concat_channels(parts);
    h = g.mask_rows(h, v);
    out.discrepancy = h;

    // Encoder taps: the retained scale plus each downsampled scale.
    std::vector<NodeId> taps;
    std::vector<int> tap_scale;
    int scale = 1;
    for (const Stage& s : enc_retain_) h = apply_stage(g, pnodes, h, s, valid_at(v, scale));
    taps.push_back(h);
    tap_scale.push_back(scale);
    for (const Stage& s : enc_down_) {
      scale *= 2;
      h = apply_stage(g, pnodes, h, s, valid_at(v, scale));
      taps.push_back(h);
      tap_scale.push_back(scale);
    }

    // Pyramid: lateral projections, top-down nearest-neighbour fusion,
    // smoothing on every fused level. No norm or activation here.
    const int L = static_cast<int>(taps.size());
    std::vector<NodeId> pyr(static_cast<std::size_t>(L), -1);
    for (int lvl = L - 1; lvl >= 0; --lvl) {
      NodeId lat = g.conv1d(taps[static_cast<std::size_t>(lvl)], pnode(g, pnodes, lateral_[static_cast<std::size_t>(lvl)].w),
                            pnode(g, pnodes, lateral_[static_cast<std::size_t>(lvl)].b), 1);
      lat = g.mask_rows(lat, valid_at(v, tap_scale[static_cast<std::size_t>(lvl)]));
      if (lvl == L - 1) {
        pyr[static_cast<std::size_t>(lvl)] = lat;
      } else {
        const int rows = g.value(lat).shape[0];
        NodeId up = g.upsample2x(pyr[static_cast<std::size_t>(lvl + 1)], rows);
        NodeId fused = g.add(lat, up);
        fused = g.mask_rows(fused, valid_at(v, tap_scale[static_cast<std::size_t>(lvl)]));
        NodeId sm = g.conv1d(fused, pnode(g, pnodes, smooth_[static_cast<std::size_t>(lvl)].w),
                             pnode(g, pnodes, smooth_[static_cast<std::size_t>(lvl)].b), 1);
        pyr[static_cast<std::size_t>(lvl)] = g.mask_rows(sm, valid_at(v, tap_scale[static_cast<std::size_t>(lvl)]));
      }
    }

    // Shared prediction towers.
    for (int lvl = 0; lvl < L; ++lvl) {
      const int sc = tap_scale[static_cast<std::size_t>(lvl)];
      const int valid = valid_at(v, sc);
      NodeId f = pyr[static_cast<std::size_t>(lvl)];
      NodeId c = f;
      for (const Stage& s : head_cls_tower_) c = apply_stage(g, pnodes, c, s, valid);
      c = g.conv1d(c, pnode(g, pnodes, head_cls_out_.w), pnode(g, pnodes, head_cls_out_.b), 1);
      c = g.mask_rows(c, valid);
      NodeId r = f;
      for (const Stage& s : head_reg_tower_) r = apply_stage(g, pnodes, r, s, valid);
      r = g.conv1d(r, pnode(g, pnodes, head_reg_out_.w), pnode(g, pnodes, head_reg_out_.b), 1);
      r = g.softplus(r);
      r = g.mask_rows(r, valid);
      LevelNodes<T> ln;
      ln.cls = c;
      ln.reg = r;
      ln.stride = sc;
      ln.rows = g.value(c).shape[0];
      ln.valid = valid;
      out.levels.push_back(ln);
    }
    out.param_nodes = std::move(pnodes);
    return out;
  }

  static int valid_at(int valid_len, int scale) { return (valid_len + scale - 1) / scale; }

 private:
  struct ConvSpec {
    int w = -1, b = -1;
    int stride = 1;
    bool transposed = false;
  };
  struct NormSpec {
    int gain = -1, shift = -1;
  };
  struct Stage {
    ConvSpec conv;
    NormSpec norm;
    bool normed = true;
    bool relu = true;
  };
  struct ReconNet {
    Pair pair = Pair::av;
    std::vector<Stage> pre, down, up, post;
  };

  ModelConfig cfg_;
  std::vector<Tensor<T>> params_;
  std::vector<std::string> names_;
  std::vector<ReconNet> recon_;
  std::vector<Stage> enc_retain_, enc_down_;
  std::vector<ConvSpec> lateral_;
  std::vector<ConvSpec> smooth_;  // levels 0..L-2
  std::vector<Stage> head_cls_tower_, head_reg_tower_;
  ConvSpec head_cls_out_, head_reg_out_;

  int add_param(std::string name, std::vector<int> shape) {
    names_.push_back(std::move(name));
    params_.push_back(Tensor<T>::zeros(std::move(shape)));
    return static_cast<int>(params_.size() - 1);
  }

  ConvSpec add_conv(const std::string& prefix, int cin, int cout, int k, int stride, bool transposed) {
    ConvSpec c;
    c.stride = stride;
    c.transposed = transposed;
    c.w = add_param(prefix + ".w", transposed ? std::vector<int>{cin, cout, k} : std::vector<int>{cout, cin, k});
    c.b = add_param(prefix + ".b", {cout});
    return c;
  }

  Stage add_stage(const std::string& prefix, int cin, int cout, int k, int stride, bool transposed,
                  bool normed, bool relu) {
    Stage s;
    s.conv = add_conv(prefix, cin, cout, k, stride, transposed);
    s.normed = normed;
    s.relu = relu;
    if (normed) {
      s.norm.gain = add_param(prefix + ".gain", {cout});
      s.norm.shift = add_param(prefix + ".shift", {cout});
    }
    return s;
  }

  void build() {
    const int d = cfg_.d, da = cfg_.d_a, k = cfg_.k, q = cfg_.fpn_width();
    for (Pair p : canonical_pair_order()) {
      bool present = false;
      for (Pair s : cfg_.pair_set) present = present || (s == p);
      if (!present) continue;
      ReconNet net;
      net.pair = p;
      const std::string base = std::string("recon.") + pair_name(p);
      int cin = d;
      for (int i = 0; i < cfg_.l_pre_r; ++i) {
        net.pre.push_back(add_stage(base + ".pre." + std::to_string(i), cin, da, 3, 1, false, true, true));
        cin = da;
      }
      for (int i = 0; i < cfg_.l_down_r; ++i)
        net.down.push_back(add_stage(base + ".down." + std::to_string(i), da, da, k, 2, false, true, true));
      for (int i = 0; i < cfg_.l_up_r; ++i)
        net.up.push_back(add_stage(base + ".up." + std::to_string(i), da, da, k, 1, true, true, true));
      for (int i = 0; i + 1 < cfg_.l_post_r; ++i)
        net.post.push_back(add_stage(base + ".post." + std::to_string(i), da, da, 3, 1, false, true, true));
      net.post.push_back(add_stage(base + ".out", da, d, 3, 1, false, false, false));
      recon_.push_back(std::move(net));
    }

    int cin = d * static_cast<int>(recon_.size());
    for (int i = 0; i < cfg_.l_retain_e; ++i) {
      enc_retain_.push_back(add_stage("enc.retain." + std::to_string(i), cin, da, k, 1, false, true, true));
      cin = da;
    }
    for (int i = 0; i < cfg_.l_down_e; ++i)
      enc_down_.push_back(add_stage("enc.down." + std::to_string(i), da, da, k, 2, false, true, true));

    const int L = cfg_.levels();
    for (int lvl = 0; lvl < L; ++lvl)
      lateral_.push_back(add_conv("fpn.lateral." + std::to_string(lvl), da, q, 1, 1, false));
    for (int lvl = 0; lvl + 1 < L; ++lvl)
      smooth_.push_back(add_conv("fpn.smooth." + std::to_string(lvl), q, q, 3, 1, false));

    int hin = q;
    for (int i = 0; i < 2; ++i) {
      head_cls_tower_.push_back(add_stage("head.cls." + std::to_string(i), hin, da, 3, 1, false, true, true));
      hin = da;
    }
    head_cls_out_ = add_conv("head.cls.out", da, 1, 3, 1, false);
    hin = q;
    for (int i = 0; i < 2; ++i) {
      head_reg_tower_.push_back(add_stage("head.reg." + std::to_string(i), hin, da, 3, 1, false, true, true));
      hin = da;
    }
    head_reg_out_ = add_conv("head.reg.out", da, 2, 3, 1, false);
  }

  NodeId pnode(Graph<T>& g, std::vector<NodeId>& pnodes, int idx) const {
    NodeId& n = pnodes[static_cast<std::size_t>(idx)];
    if (n < 0) n = g.parameter(&params_[static_cast<std::size_t>(idx)]);
    return n;
  }

  NodeId apply_stage(Graph<T>& g, std::vector<NodeId>& pnodes, NodeId x, const Stage& s, int valid) const {
    NodeId h = s.conv.transposed
                   ? g.deconv1d(x, pnode(g, pnodes, s.conv.w), pnode(g, pnodes, s.conv.b))
                   : g.conv1d(x, pnode(g, pnodes, s.conv.w), pnode(g, pnodes, s.conv.b), s.conv.stride);
    if (s.normed) h = g.layer_norm(h, pnode(g, pnodes, s.norm.gain), pnode(g, pnodes, s.norm.shift));
    if (s.relu) h = g.relu(h);
    const int rows = g.value(h).shape[0];
    return g.mask_rows(h, valid < rows ? valid : rows);
  }
};

}  // namespace auvire
