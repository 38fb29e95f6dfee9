#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "auvire/tensor.hpp"

namespace auvire {

// Define-by-run reverse-mode tape over dense tensors.
//
// Every op evaluates eagerly and records a scatter closure. backward(loss)
// runs one reverse sweep over a transient adjoint buffer, then folds the
// result into persistent per-node accumulators, so a second backward call
// without reset_gradients() doubles the stored gradients.
template <typename T>
class Graph {
 public:
  using NodeId = std::int32_t;

  // ---- leaves ------------------------------------------------------------

  NodeId constant(Tensor<T> v) {
    v.requires_grad = false;
    return push(std::move(v), false, {});
  }

  NodeId input(Tensor<T> v) {
    bool ng = v.requires_grad;
    return push(std::move(v), ng, {});
  }

  // External storage; the caller keeps *p alive for the graph's lifetime.
  NodeId parameter(const Tensor<T>* p) {
    if (p == nullptr) throw contract_error("parameter: null tensor");
    Node n;
    n.external = p;
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  // ---- structured ops ----------------------------------------------------

  // x: (t, c_in), w: (c_out, c_in, k) with odd k, b: (c_out), stride 1 or 2.
  // Same padding: floor(k/2) left, k-1-floor(k/2) right; output ceil(t/stride) rows.
  NodeId conv1d(NodeId x, NodeId w, NodeId b, int stride) {
    const Tensor<T>& X = value(x);
    const Tensor<T>& W = value(w);
    const Tensor<T>& B = value(b);
    if (X.rank() != 2) throw contract_error("conv1d: input rank " + shape_str(X.shape));
    if (W.rank() != 3) throw contract_error("conv1d: weight rank " + shape_str(W.shape));
    if (B.rank() != 1) throw contract_error("conv1d: bias rank " + shape_str(B.shape));
    const int t = X.shape[0], cin = X.shape[1];
    const int cout = W.shape[0], k = W.shape[2];
    if (W.shape[1] != cin) throw contract_error("conv1d: weight channels " + shape_str(W.shape) + " vs input " + shape_str(X.shape));
    if (B.shape[0] != cout) throw contract_error("conv1d: bias size " + shape_str(B.shape));
    if (k % 2 == 0) throw contract_error("conv1d: kernel width must be odd");
    if (stride != 1 && stride != 2) throw contract_error("conv1d: stride must be 1 or 2");

    const int lpad = k / 2;
    const int tout = (stride == 1) ? t : (t + 1) / 2;
    Tensor<T> out({tout, cout});

    // Pack weights as [j][c][o] so the innermost loop is a contiguous axpy.
    std::vector<T> wp(static_cast<std::size_t>(k) * cin * cout);
    for (int o = 0; o < cout; ++o)
      for (int c = 0; c < cin; ++c)
        for (int j = 0; j < k; ++j)
          wp[(static_cast<std::size_t>(j) * cin + c) * cout + o] = W.data[(static_cast<std::size_t>(o) * cin + c) * k + j];

    for (int to = 0; to < tout; ++to) {
      T* orow = &out.data[static_cast<std::size_t>(to) * cout];
      for (int o = 0; o < cout; ++o) orow[o] = B.data[o];
      const int base = to * stride - lpad;
      const int jlo = std::max(0, -base);
      const int jhi = std::min(k, t - base);
      for (int j = jlo; j < jhi; ++j) {
        const T* xrow = &X.data[static_cast<std::size_t>(base + j) * cin];
        const T* wrow = &wp[static_cast<std::size_t>(j) * cin * cout];
        for (int c = 0; c < cin; ++c) {
          const T xv = xrow[c];
          const T* wv = wrow + static_cast<std::size_t>(c) * cout;
          for (int o = 0; o < cout; ++o) orow[o] += xv * wv[o];
        }
      }
    }

    return push(std::move(out), needs(x) || needs(w) || needs(b),
                [x, w, b, stride, t, cin, cout, k, lpad, tout](Graph& g, NodeId self) {
      const Tensor<T>& go = g.adjoint_[self];
      const Tensor<T>& X = g.value(x);
      const Tensor<T>& W = g.value(w);
      if (g.needs(x)) {
        Tensor<T>& dx = g.adj(x);
        // Pack as [j][o][c]: inner axpy over input channels.
        std::vector<T> wb(static_cast<std::size_t>(k) * cout * cin);
        for (int o = 0; o < cout; ++o)
          for (int c = 0; c < cin; ++c)
            for (int j = 0; j < k; ++j)
              wb[(static_cast<std::size_t>(j) * cout + o) * cin + c] = W.data[(static_cast<std::size_t>(o) * cin + c) * k + j];
        for (int to = 0; to < tout; ++to) {
          const T* grow = &go.data[static_cast<std::size_t>(to) * cout];
          const int base = to * stride - lpad;
          const int jlo = std::max(0, -base);
          const int jhi = std::min(k, t - base);
          for (int j = jlo; j < jhi; ++j) {
            T* xrow = &dx.data[static_cast<std::size_t>(base + j) * cin];
            const T* wrow = &wb[static_cast<std::size_t>(j) * cout * cin];
            for (int o = 0; o < cout; ++o) {
              const T gv = grow[o];
              const T* wv = wrow + static_cast<std::size_t>(o) * cin;
              for (int c = 0; c < cin; ++c) xrow[c] += gv * wv[c];
            }
          }
        }
      }
      if (g.needs(w)) {
        std::vector<T> dwp(static_cast<std::size_t>(k) * cin * cout, T(0));
        for (int to = 0; to < tout; ++to) {
          const T* grow = &go.data[static_cast<std::size_t>(to) * cout];
          const int base = to * stride - lpad;
          const int jlo = std::max(0, -base);
          const int jhi = std::min(k, t - base);
          for (int j = jlo; j < jhi; ++j) {
            const T* xrow = &X.data[static_cast<std::size_t>(base + j) * cin];
            T* drow = &dwp[static_cast<std::size_t>(j) * cin * cout];
            for (int c = 0; c < cin; ++c) {
              const T xv = xrow[c];
              T* dv = drow + static_cast<std::size_t>(c) * cout;
              for (int o = 0; o < cout; ++o) dv[o] += xv * grow[o];
            }
          }
        }
        Tensor<T>& dw = g.adj(w);
        for (int o = 0; o < cout; ++o)
          for (int c = 0; c < cin; ++c)
            for (int j = 0; j < k; ++j)
              dw.data[(static_cast<std::size_t>(o) * cin + c) * k + j] += dwp[(static_cast<std::size_t>(j) * cin + c) * cout + o];
      }
      if (g.needs(b)) {
        Tensor<T>& db = g.adj(b);
        for (int to = 0; to < tout; ++to) {
          const T* grow = &go.data[static_cast<std::size_t>(to) * cout];
          for (int o = 0; o < cout; ++o) db.data[o] += grow[o];
        }
      }
    });
  }

  // Adjoint of conv1d with stride 2 and the same padding convention.
  // x: (t, c_in), w: (c_in, c_out, k) with odd k, b: (c_out); output (2t, c_out):
  // out[i,q] = b[q] + sum over {tau,c,j : 2*tau + j - floor(k/2) = i} of x[tau,c] * w[c,q,j].
  NodeId deconv1d(NodeId x, NodeId w, NodeId b) {
    const Tensor<T>& X = value(x);
    const Tensor<T>& W = value(w);
    const Tensor<T>& B = value(b);
    if (X.rank() != 2) throw contract_error("deconv1d: input rank " + shape_str(X.shape));
    if (W.rank() != 3) throw contract_error("deconv1d: weight rank " + shape_str(W.shape));
    if (B.rank() != 1) throw contract_error("deconv1d: bias rank " + shape_str(B.shape));
    const int t = X.shape[0], cin = X.shape[1];
    const int cout = W.shape[1], k = W.shape[2];
    if (W.shape[0] != cin) throw contract_error("deconv1d: weight channels " + shape_str(W.shape) + " vs input " + shape_str(X.shape));
    if (B.shape[0] != cout) throw contract_error("deconv1d: bias size " + shape_str(B.shape));
    if (k % 2 == 0) throw contract_error("deconv1d: kernel width must be odd");

    const int lpad = k / 2;
    const int tout = 2 * t;
    Tensor<T> out({tout, cout});
    for (int i = 0; i < tout; ++i) {
      T* orow = &out.data[static_cast<std::size_t>(i) * cout];
      for (int q = 0; q < cout; ++q) orow[q] = B.data[q];
    }

    std::vector<T> wp(static_cast<std::size_t>(k) * cin * cout);  // [j][c][q]
    for (int c = 0; c < cin; ++c)
      for (int q = 0; q < cout; ++q)
        for (int j = 0; j < k; ++j)
          wp[(static_cast<std::size_t>(j) * cin + c) * cout + q] = W.data[(static_cast<std::size_t>(c) * cout + q) * k + j];

    for (int tau = 0; tau < t; ++tau) {
      const T* xrow = &X.data[static_cast<std::size_t>(tau) * cin];
      const int base = 2 * tau - lpad;
      for (int j = 0; j < k; ++j) {
        const int i = base + j;
        if (i < 0 || i >= tout) continue;
        T* orow = &out.data[static_cast<std::size_t>(i) * cout];
        const T* wrow = &wp[static_cast<std::size_t>(j) * cin * cout];
        for (int c = 0; c < cin; ++c) {
          const T xv = xrow[c];
          const T* wv = wrow + static_cast<std::size_t>(c) * cout;
          for (int q = 0; q < cout; ++q) orow[q] += xv * wv[q];
        }
      }
    }

    return push(std::move(out), needs(x) || needs(w) || needs(b),
                [x, w, b, t, cin, cout, k, lpad, tout](Graph& g, NodeId self) {
      const Tensor<T>& go = g.adjoint_[self];
      const Tensor<T>& X = g.value(x);
      const Tensor<T>& W = g.value(w);
      if (g.needs(x)) {
        Tensor<T>& dx = g.adj(x);
        std::vector<T> wq(static_cast<std::size_t>(k) * cout * cin);  // [j][q][c]
        for (int c = 0; c < cin; ++c)
          for (int q = 0; q < cout; ++q)
            for (int j = 0; j < k; ++j)
              wq[(static_cast<std::size_t>(j) * cout + q) * cin + c] = W.data[(static_cast<std::size_t>(c) * cout + q) * k + j];
        for (int tau = 0; tau < t; ++tau) {
          T* xrow = &dx.data[static_cast<std::size_t>(tau) * cin];
          const int base = 2 * tau - lpad;
          for (int j = 0; j < k; ++j) {
            const int i = base + j;
            if (i < 0 || i >= tout) continue;
            const T* grow = &go.data[static_cast<std::size_t>(i) * cout];
            const T* wrow = &wq[static_cast<std::size_t>(j) * cout * cin];
            for (int q = 0; q < cout; ++q) {
              const T gv = grow[q];
              const T* wv = wrow + static_cast<std::size_t>(q) * cin;
              for (int c = 0; c < cin; ++c) xrow[c] += gv * wv[c];
            }
          }
        }
      }
      if (g.needs(w)) {
        std::vector<T> dwp(static_cast<std::size_t>(k) * cin * cout, T(0));  // [j][c][q]
        for (int tau = 0; tau < t; ++tau) {
          const T* xrow = &X.data[static_cast<std::size_t>(tau) * cin];
          const int base = 2 * tau - lpad;
          for (int j = 0; j < k; ++j) {
            const int i = base + j;
            if (i < 0 || i >= tout) continue;
            const T* grow = &go.data[static_cast<std::size_t>(i) * cout];
            T* drow = &dwp[static_cast<std::size_t>(j) * cin * cout];
            for (int c = 0; c < cin; ++c) {
              const T xv = xrow[c];
              T* dv = drow + static_cast<std::size_t>(c) * cout;
              for (int q = 0; q < cout; ++q) dv[q] += xv * grow[q];
            }
          }
        }
        Tensor<T>& dw = g.adj(w);
        for (int c = 0; c < cin; ++c)
          for (int q = 0; q < cout; ++q)
            for (int j = 0; j < k; ++j)
              dw.data[(static_cast<std::size_t>(c) * cout + q) * k + j] += dwp[(static_cast<std::size_t>(j) * cin + c) * cout + q];
      }
      if (g.needs(b)) {
        Tensor<T>& db = g.adj(b);
        for (int i = 0; i < tout; ++i) {
          const T* grow = &go.data[static_cast<std::size_t>(i) * cout];
          for (int q = 0; q < cout; ++q) db.data[q] += grow[q];
        }
      }
    });
  }

  // Per-row normalization over channels; gain and shift are (c).
  NodeId layer_norm(NodeId x, NodeId gain, NodeId shift, T eps = T(1e-5)) {
    const Tensor<T>& X = value(x);
    const Tensor<T>& G = value(gain);
    const Tensor<T>& S = value(shift);
    if (X.rank() != 2) throw contract_error("layer_norm: input rank " + shape_str(X.shape));
    const int t = X.shape[0], c = X.shape[1];
    if (G.rank() != 1 || G.shape[0] != c) throw contract_error("layer_norm: gain shape " + shape_str(G.shape));
    if (S.rank() != 1 || S.shape[0] != c) throw contract_error("layer_norm: shift shape " + shape_str(S.shape));

    Tensor<T> out({t, c});
    for (int r = 0; r < t; ++r) {
      const T* xi = &X.data[static_cast<std::size_t>(r) * c];
      T* oi = &out.data[static_cast<std::size_t>(r) * c];
      T mu = 0;
      for (int j = 0; j < c; ++j) mu += xi[j];
      mu /= static_cast<T>(c);
      T var = 0;
      for (int j = 0; j < c; ++j) {
        const T d = xi[j] - mu;
        var += d * d;
      }
      var /= static_cast<T>(c);
      const T inv = T(1) / std::sqrt(var + eps);
      for (int j = 0; j < c; ++j) oi[j] = G.data[j] * (xi[j] - mu) * inv + S.data[j];
    }

    return push(std::move(out), needs(x) || needs(gain) || needs(shift),
                [x, gain, shift, eps, t, c](Graph& g, NodeId self) {
      const Tensor<T>& go = g.adjoint_[self];
      const Tensor<T>& X = g.value(x);
      const Tensor<T>& G = g.value(gain);
      const bool wx = g.needs(x), wg = g.needs(gain), ws = g.needs(shift);
      Tensor<T>* dx = wx ? &g.adj(x) : nullptr;
      Tensor<T>* dg = wg ? &g.adj(gain) : nullptr;
      Tensor<T>* ds = ws ? &g.adj(shift) : nullptr;
      std::vector<T> h(static_cast<std::size_t>(c));
      for (int r = 0; r < t; ++r) {
        const T* xi = &X.data[static_cast<std::size_t>(r) * c];
        const T* gi = &go.data[static_cast<std::size_t>(r) * c];
        T mu = 0;
        for (int j = 0; j < c; ++j) mu += xi[j];
        mu /= static_cast<T>(c);
        T var = 0;
        for (int j = 0; j < c; ++j) {
          const T d = xi[j] - mu;
          var += d * d;
        }
        var /= static_cast<T>(c);
        const T inv = T(1) / std::sqrt(var + eps);
        for (int j = 0; j < c; ++j) h[j] = (xi[j] - mu) * inv;
        if (ws) {
          for (int j = 0; j < c; ++j) ds->data[j] += gi[j];
        }
        if (wg) {
          for (int j = 0; j < c; ++j) dg->data[j] += gi[j] * h[j];
        }
        if (wx) {
          T a = 0, bsum = 0;
          for (int j = 0; j < c; ++j) {
            const T gg = gi[j] * G.data[j];
            a += gg;
            bsum += gg * h[j];
          }
          a /= static_cast<T>(c);
          bsum /= static_cast<T>(c);
          T* di = &dx->data[static_cast<std::size_t>(r) * c];
          for (int j = 0; j < c; ++j) di[j] += inv * (gi[j] * G.data[j] - a - h[j] * bsum);
        }
      }
    });
  }

  // ---- elementwise -------------------------------------------------------

  NodeId relu(NodeId x) {
    return unary(x, "relu", [](T v) { return v > T(0) ? v : T(0); },
                 [](T v, T) { return v > T(0) ? T(1) : T(0); });
  }

  NodeId sigmoid(NodeId x) {
    return unary(x, "sigmoid",
                 [](T v) { return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v)); },
                 [](T, T y) { return y * (T(1) - y); });
  }

  NodeId softplus(NodeId x) {
    return unary(x, "softplus",
                 [](T v) { return v > T(30) ? v : std::log1p(std::exp(std::min(v, T(30)))); },
                 [](T v, T) { return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v)); });
  }

  NodeId log(NodeId x) {
    return unary(x, "log", [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
  }

  NodeId abs(NodeId x) {
    return unary(x, "abs", [](T v) { return std::fabs(v); },
                 [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
  }

  // Callers keep x in the exponent's domain (x > 0 for fractional p).
  NodeId pow(NodeId x, T p) {
    return unary(x, "pow", [p](T v) { return std::pow(v, p); },
                 [p](T v, T) { return p == T(0) ? T(0) : p * std::pow(v, p - T(1)); });
  }

  NodeId clamp(NodeId x, T lo, T hi) {
    if (!(lo <= hi)) throw contract_error("clamp: lo > hi");
    return unary(x, "clamp", [lo, hi](T v) { return v < lo ? lo : (v > hi ? hi : v); },
                 [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
  }

  // Elementwise smooth L1: 0.5*v^2/beta for |v| < beta else |v| - 0.5*beta.
  NodeId huber(NodeId x, T beta) {
    if (!(beta > T(0))) throw contract_error("huber: beta must be positive");
    return unary(x, "huber",
                 [beta](T v) { return std::fabs(v) < beta ? T(0.5) * v * v / beta : std::fabs(v) - T(0.5) * beta; },
                 [beta](T v, T) { return std::fabs(v) < beta ? v / beta : (v > T(0) ? T(1) : T(-1)); });
  }

  NodeId scale(NodeId x, T f) {
    return unary(x, "scale", [f](T v) { return f * v; }, [f](T, T) { return f; });
  }

  NodeId add_scalar(NodeId x, T cst) {
    return unary(x, "add_scalar", [cst](T v) { return v + cst; }, [](T, T) { return T(1); });
  }

  NodeId add(NodeId a, NodeId b) {
    return binary(a, b, "add", [](T u, T v) { return u + v; },
                  [](T, T, T go, T& da, T& db) { da = go; db = go; });
  }

  NodeId subtract(NodeId a, NodeId b) {
    return binary(a, b, "subtract", [](T u, T v) { return u - v; },
                  [](T, T, T go, T& da, T& db) { da = go; db = -go; });
  }

  NodeId multiply(NodeId a, NodeId b) {
    return binary(a, b, "multiply", [](T u, T v) { return u * v; },
                  [](T u, T v, T go, T& da, T& db) { da = go * v; db = go * u; });
  }

  NodeId divide(NodeId a, NodeId b) {
    return binary(a, b, "divide", [](T u, T v) { return u / v; },
                  [](T u, T v, T go, T& da, T& db) { da = go / v; db = -go * u / (v * v); });
  }

  NodeId maximum(NodeId a, NodeId b) {
    return binary(a, b, "maximum", [](T u, T v) { return u > v ? u : v; },
                  [](T u, T v, T go, T& da, T& db) { da = u >= v ? go : T(0); db = u >= v ? T(0) : go; });
  }

  NodeId minimum(NodeId a, NodeId b) {
    return binary(a, b, "minimum", [](T u, T v) { return u < v ? u : v; },
                  [](T u, T v, T go, T& da, T& db) { da = u <= v ? go : T(0); db = u <= v ? T(0) : go; });
  }

  // ---- structure ---------------------------------------------------------

  NodeId concat_channels(const std::vector<NodeId>& xs) {
    if (xs.empty()) throw contract_error("concat_channels: no inputs");
    int t = -1, ctot = 0;
    bool ng = false;
    for (NodeId id : xs) {
      const Tensor<T>& v = value(id);
      if (v.rank() != 2) throw contract_error("concat_channels: rank " + shape_str(v.shape));
      if (t < 0) t = v.shape[0];
      if (v.shape[0] != t) throw contract_error("concat_channels: row mismatch " + shape_str(v.shape));
      ctot += v.shape[1];
      ng = ng || needs(id);
    }
    Tensor<T> out({t, ctot});
    int off = 0;
    for (NodeId id : xs) {
      const Tensor<T>& v = value(id);
      const int c = v.shape[1];
      for (int r = 0; r < t; ++r)
        for (int j = 0; j < c; ++j)
          out.data[static_cast<std::size_t>(r) * ctot + off + j] = v.data[static_cast<std::size_t>(r) * c + j];
      off += c;
    }
    return push(std::move(out), ng, [xs, t, ctot](Graph& g, NodeId self) {
      const Tensor<T>& go = g.adjoint_[self];
      int off = 0;
      for (NodeId id : xs) {
        const int c = g.value(id).shape[1];
        if (g.needs(id)) {
          Tensor<T>& d = g.adj(id);
          for (int r = 0; r < t; ++r)
            for (int j = 0; j < c; ++j)
              d.data[static_cast<std::size_t>(r) * c + j] += go.data[static_cast<std::size_t>(r) * ctot + off + j];
        }
        off += c;
      }
    });
  }

  NodeId slice_rows(NodeId x, int begin, int end) {
    const Tensor<T>& X = value(x);
    if (X.rank() != 2) throw contract_error("slice_rows: rank " + shape_str(X.shape));
    const int t = X.shape[0], c = X.shape[1];
    if (begin < 0 || end > t || begin >= end) throw contract_error("slice_rows: bad range");
    Tensor<T> out({end - begin, c});
    std::copy(X.data.begin() + static_cast<std::size_t>(begin) * c,
              X.data.begin() + static_cast<std::size_t>(end) * c, out.data.begin());
    return push(std::move(out), needs(x), [x, begin, end, c](Graph& g, NodeId self) {
      if (!g.needs(x)) return;
      const Tensor<T>& go = g.adjoint_[self];
      Tensor<T>& d = g.adj(x);
      const std::size_t n = static_cast<std::size_t>(end - begin) * c;
      for (std::size_t i = 0; i < n; ++i) d.data[static_cast<std::size_t>(begin) * c + i] += go.data[i];
    });
  }

  NodeId slice_channels(NodeId x, int begin, int end) {
    const Tensor<T>& X = value(x);
    if (X.rank() != 2) throw contract_error("slice_channels: rank " + shape_str(X.shape));
    const int t = X.shape[0], c = X.shape[1];
    if (begin < 0 || end > c || begin >= end) throw contract_error("slice_channels: bad range");
    const int cw = end - begin;
    Tensor<T> out({t, cw});
    for (int r = 0; r < t; ++r)
      for (int j = 0; j < cw; ++j)
        out.data[static_cast<std::size_t>(r) * cw + j] = X.data[static_cast<std::size_t>(r) * c + begin + j];
    return push(std::move(out), needs(x), [x, begin, c, cw, t](Graph& g, NodeId self) {
      if (!g.needs(x)) return;
      const Tensor<T>& go = g.adjoint_[self];
      Tensor<T>& d = g.adj(x);
      for (int r = 0; r < t; ++r)
        for (int j = 0; j < cw; ++j)
          d.data[static_cast<std::size_t>(r) * c + begin + j] += go.data[static_cast<std::size_t>(r) * cw + j];
    });
  }

  // Append zero rows up to new_rows.
  NodeId pad_rows(NodeId x, int new_rows) {
    const Tensor<T>& X = value(x);
    if (X.rank() != 2) throw contract_error("pad_rows: rank " + shape_str(X.shape));
    const int t = X.shape[0], c = X.shape[1];
    if (new_rows < t) throw contract_error("pad_rows: new_rows < rows");
    Tensor<T> out({new_rows, c});
    std::copy(X.data.begin(), X.data.end(), out.data.begin());
    return push(std::move(out), needs(x), [x, t, c](Graph& g, NodeId self) {
      if (!g.needs(x)) return;
      const Tensor<T>& go = g.adjoint_[self];
      Tensor<T>& d = g.adj(x);
      const std::size_t n = static_cast<std::size_t>(t) * c;
      for (std::size_t i = 0; i < n; ++i) d.data[i] += go.data[i];
    });
  }

  // Zero every row at index >= valid_rows.
  NodeId mask_rows(NodeId x, int valid_rows) {
    const Tensor<T>& X = value(x);
    if (X.rank() != 2) throw contract_error("mask_rows: rank " + shape_str(X.shape));
    const int t = X.shape[0], c = X.shape[1];
    if (valid_rows < 0 || valid_rows > t) throw contract_error("mask_rows: bad valid_rows");
    Tensor<T> out({t, c});
    std::copy(X.data.begin(), X.data.begin() + static_cast<std::size_t>(valid_rows) * c, out.data.begin());
    return push(std::move(out), needs(x), [x, valid_rows, c](Graph& g, NodeId self) {
      if (!g.needs(x)) return;
      const Tensor<T>& go = g.adjoint_[self];
      Tensor<T>& d = g.adj(x);
      const std::size_t n = static_cast<std::size_t>(valid_rows) * c;
      for (std::size_t i = 0; i < n; ++i) d.data[i] += go.data[i];
    });
  }

  // Nearest-neighbour doubling along rows, cropped to out_rows.
  NodeId upsample2x(NodeId x, int out_rows) {
    const Tensor<T>& X = value(x);
    if (X.rank() != 2) throw contract_error("upsample2x: rank " + shape_str(X.shape));
    const int t = X.shape[0], c = X.shape[1];
    if (out_rows < 1 || out_rows > 2 * t) throw contract_error("upsample2x: bad out_rows");
    Tensor<T> out({out_rows, c});
    for (int r = 0; r < out_rows; ++r)
      for (int j = 0; j < c; ++j)
        out.data[static_cast<std::size_t>(r) * c + j] = X.data[static_cast<std::size_t>(r / 2) * c + j];
    return push(std::move(out), needs(x), [x, out_rows, c](Graph& g, NodeId self) {
      if (!g.needs(x)) return;
      const Tensor<T>& go = g.adjoint_[self];
      Tensor<T>& d = g.adj(x);
      for (int r = 0; r < out_rows; ++r)
        for (int j = 0; j < c; ++j)
          d.data[static_cast<std::size_t>(r / 2) * c + j] += go.data[static_cast<std::size_t>(r) * c + j];
    });
  }

  // ---- reductions (scalar output of shape {1}) ----------------------------

  NodeId sum(NodeId x) {
    const Tensor<T>& X = value(x);
    T s = 0;
    for (const T& v : X.data) s += v;
    return push(Tensor<T>::scalar(s), needs(x), [x](Graph& g, NodeId self) {
      if (!g.needs(x)) return;
      const T go = g.adjoint_[self].data[0];
      Tensor<T>& d = g.adj(x);
      for (T& v : d.data) v += go;
    });
  }

  NodeId mean(NodeId x) {
    const Tensor<T>& X = value(x);
    const T n = static_cast<T>(X.numel());
    T s = 0;
    for (const T& v : X.data) s += v;
    return push(Tensor<T>::scalar(s / n), needs(x), [x, n](Graph& g, NodeId self) {
      if (!g.needs(x)) return;
      const T go = g.adjoint_[self].data[0] / n;
      Tensor<T>& d = g.adj(x);
      for (T& v : d.data) v += go;
    });
  }

  // Gradient flows to the first occurrence of the maximum.
  NodeId reduce_max(NodeId x) {
    const Tensor<T>& X = value(x);
    std::size_t arg = 0;
    for (std::size_t i = 1; i < X.data.size(); ++i)
      if (X.data[i] > X.data[arg]) arg = i;
    return push(Tensor<T>::scalar(X.data[arg]), needs(x), [x, arg](Graph& g, NodeId self) {
      if (!g.needs(x)) return;
      g.adj(x).data[arg] += g.adjoint_[self].data[0];
    });
  }

  // ---- execution ----------------------------------------------------------

  const Tensor<T>& value(NodeId id) const {
    const Node& n = node(id);
    return n.external ? *n.external : n.val;
  }

  bool needs(NodeId id) const { return node(id).needs_grad; }

  std::size_t size() const { return nodes_.size(); }

  void backward(NodeId loss) {
    const Tensor<T>& lv = value(loss);
    if (lv.numel() != 1) throw contract_error("backward: loss must be scalar, got " + shape_str(lv.shape));
    adjoint_.assign(nodes_.size(), Tensor<T>{});
    adj(loss).data[0] += T(1);
    for (NodeId id = loss; id >= 0; --id) {
      if (adjoint_[static_cast<std::size_t>(id)].empty()) continue;
      if (nodes_[static_cast<std::size_t>(id)].backprop) nodes_[static_cast<std::size_t>(id)].backprop(*this, id);
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (!nodes_[i].needs_grad || adjoint_[i].empty()) continue;
      Tensor<T>& acc = grad_slot(static_cast<NodeId>(i));
      const Tensor<T>& a = adjoint_[i];
      for (std::size_t j = 0; j < a.data.size(); ++j) acc.data[j] += a.data[j];
    }
    adjoint_.clear();
  }

  void reset_gradients() {
    for (Node& n : nodes_) n.grad = Tensor<T>{};
  }

  // Accumulated gradient; zeros if the node never received one.
  const Tensor<T>& gradient(NodeId id) { return grad_slot(id); }

 private:
  struct Node {
    Tensor<T> val;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    bool needs_grad = false;
    std::function<void(Graph&, NodeId)> backprop;
  };

  std::vector<Node> nodes_;
  std::vector<Tensor<T>> adjoint_;

  const Node& node(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) throw contract_error("graph: bad node id");
    return nodes_[static_cast<std::size_t>(id)];
  }

  Tensor<T>& grad_slot(NodeId id) {
    Node& n = const_cast<Node&>(node(id));
    if (n.grad.empty()) n.grad = Tensor<T>::zeros(value(id).shape);
    return n.grad;
  }

  Tensor<T>& adj(NodeId id) {
    Tensor<T>& a = adjoint_[static_cast<std::size_t>(id)];
    if (a.empty()) a = Tensor<T>::zeros(value(id).shape);
    return a;
  }

  NodeId push(Tensor<T> val, bool needs_grad, std::function<void(Graph&, NodeId)> backprop) {
    Node n;
    n.val = std::move(val);
    n.needs_grad = needs_grad;
    if (needs_grad) n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  template <typename F, typename DF>
  NodeId unary(NodeId x, const char*, F f, DF df) {
    const Tensor<T>& X = value(x);
    Tensor<T> out;
    out.shape = X.shape;
    out.data.resize(X.data.size());
    for (std::size_t i = 0; i < X.data.size(); ++i) out.data[i] = f(X.data[i]);
    return push(std::move(out), needs(x), [x, df](Graph& g, NodeId self) {
      if (!g.needs(x)) return;
      const Tensor<T>& go = g.adjoint_[self];
      const Tensor<T>& X = g.value(x);
      const Tensor<T>& Y = g.value(self);
      Tensor<T>& d = g.adj(x);
      for (std::size_t i = 0; i < X.data.size(); ++i) d.data[i] += go.data[i] * df(X.data[i], Y.data[i]);
    });
  }

  template <typename F, typename DF>
  NodeId binary(NodeId a, NodeId b, const char* name, F f, DF df) {
    const Tensor<T>& A = value(a);
    const Tensor<T>& B = value(b);
    if (A.shape != B.shape)
      throw contract_error(std::string(name) + ": shape mismatch " + shape_str(A.shape) + " vs " + shape_str(B.shape));
    Tensor<T> out;
    out.shape = A.shape;
    out.data.resize(A.data.size());
    for (std::size_t i = 0; i < A.data.size(); ++i) out.data[i] = f(A.data[i], B.data[i]);
    return push(std::move(out), needs(a) || needs(b), [a, b, df](Graph& g, NodeId self) {
      const Tensor<T>& go = g.adjoint_[self];
      const Tensor<T>& A = g.value(a);
      const Tensor<T>& B = g.value(b);
      const bool wa = g.needs(a), wb = g.needs(b);
      Tensor<T>* da = wa ? &g.adj(a) : nullptr;
      Tensor<T>* db = wb ? &g.adj(b) : nullptr;
      for (std::size_t i = 0; i < A.data.size(); ++i) {
        T ga = 0, gb = 0;
        df(A.data[i], B.data[i], go.data[i], ga, gb);
        if (wa) da->data[i] += ga;
        if (wb) db->data[i] += gb;
      }
    });
  }
};

}  // namespace auvire
