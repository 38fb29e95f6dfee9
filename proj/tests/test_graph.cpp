#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "auvire/graph.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "support/test_util.hpp"

using auvire::Graph;
using auvire::Rng;
using auvire::Tensor;
using testsupport::fd_gradients;
using testsupport::max_abs_diff;
using testsupport::max_rel_err;
using testsupport::random_tensor;

namespace {

Tensor<double> graph_conv(const Tensor<double>& x, const Tensor<double>& w,
                          const Tensor<double>& b, int stride) {
  Graph<double> g;
  auto out = g.conv1d(g.input(x), g.input(w), g.input(b), stride);
  return g.value(out);
}

}  // namespace

TEST_CASE("conv1d with width-1 identity kernel reproduces its input") {
  const int t = 6, c = 3;
  Rng rng(1);
  auto x = random_tensor({t, c}, rng);
  Tensor<double> w({c, c, 1});
  for (int i = 0; i < c; ++i) w.at(i, i, 0) = 1.0;
  Tensor<double> b({c});
  auto out = graph_conv(x, w, b, 1);
  REQUIRE(out.shape == x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) REQUIRE(out.data[i] == x.data[i]);
}

TEST_CASE("conv1d matches the nested-loop reference") {
  Rng rng(2);
  auto x = random_tensor({8, 2}, rng);
  auto w = random_tensor({3, 2, 3}, rng);
  auto b = random_tensor({3}, rng);
  for (int stride : {1, 2}) {
    auto got = graph_conv(x, w, b, stride);
    auto want = testsupport::conv1d_reference(x, w, b, stride);
    REQUIRE(got.shape == want.shape);
    REQUIRE(max_abs_diff(got, want) < 1e-12);
  }
}

TEST_CASE("conv1d stride-2 output has ceil(t/2) rows") {
  Rng rng(3);
  for (int t : {1, 2, 5, 7, 8}) {
    auto x = random_tensor({t, 2}, rng);
    auto w = random_tensor({4, 2, 5}, rng);
    auto b = random_tensor({4}, rng);
    auto out = graph_conv(x, w, b, 2);
    REQUIRE(out.shape[0] == (t + 1) / 2);
    auto want = testsupport::conv1d_reference(x, w, b, 2);
    REQUIRE(max_abs_diff(out, want) < 1e-12);
  }
}

TEST_CASE("conv1d with zero bias is linear in its input") {
  Rng rng(4);
  auto w = random_tensor({3, 2, 5}, rng);
  Tensor<double> b({3});
  for (int rep = 0; rep < 5; ++rep) {
    auto x = random_tensor({9, 2}, rng);
    auto y = random_tensor({9, 2}, rng);
    const double a = rng.normal(), bb = rng.normal();
    Tensor<double> mix({9, 2});
    for (std::size_t i = 0; i < mix.data.size(); ++i) mix.data[i] = a * x.data[i] + bb * y.data[i];
    auto lhs = graph_conv(mix, w, b, 2);
    auto cx = graph_conv(x, w, b, 2);
    auto cy = graph_conv(y, w, b, 2);
    for (std::size_t i = 0; i < lhs.data.size(); ++i)
      REQUIRE(std::fabs(lhs.data[i] - (a * cx.data[i] + bb * cy.data[i])) < 1e-10);
  }
}

TEST_CASE("conv1d gradients match finite differences") {
  Rng rng(5);
  auto x = random_tensor({7, 3}, rng);
  auto w = random_tensor({4, 3, 5}, rng, 0.5);
  auto b = random_tensor({4}, rng);
  for (int stride : {1, 2}) {
    const int tout = (7 + stride - 1) / stride;
    auto r = random_tensor({tout, 4}, rng);
    auto f = [&](const std::vector<Tensor<double>>& in) {
      Graph<double> g;
      auto c = g.conv1d(g.input(in[0]), g.input(in[1]), g.input(in[2]), stride);
      return g.value(g.sum(g.multiply(c, g.constant(r)))).data[0];
    };
    auto fd = fd_gradients(f, {x, w, b});

    Graph<double> g;
    auto xt = x, wt = w, bt = b;
    xt.requires_grad = wt.requires_grad = bt.requires_grad = true;
    auto xi = g.input(xt), wi = g.input(wt), bi = g.input(bt);
    g.backward(g.sum(g.multiply(g.conv1d(xi, wi, bi, stride), g.constant(r))));
    REQUIRE(max_rel_err(g.gradient(xi), fd[0]) < 1e-6);
    REQUIRE(max_rel_err(g.gradient(wi), fd[1]) < 1e-6);
    REQUIRE(max_rel_err(g.gradient(bi), fd[2]) < 1e-6);
  }
}

TEST_CASE("deconv1d doubles the row count and matches the reference") {
  Rng rng(6);
  auto x = random_tensor({4, 3}, rng);
  auto w = random_tensor({3, 2, 5}, rng);
  auto b = random_tensor({2}, rng);
  Graph<double> g;
  auto out = g.deconv1d(g.input(x), g.input(w), g.input(b));
  REQUIRE(g.value(out).shape == std::vector<int>{8, 2});
  auto want = testsupport::deconv1d_reference(x, w, b);
  REQUIRE(max_abs_diff(g.value(out), want) < 1e-12);
}

TEST_CASE("deconv1d is the adjoint of stride-2 conv1d") {
  Rng rng(7);
  for (int rep = 0; rep < 8; ++rep) {
    const int t = 5 + rng.uniform_int(6);
    const int a = 1 + rng.uniform_int(4), c = 1 + rng.uniform_int(4);
    const int k = 2 * rng.uniform_int(4) + 1;
    auto w = random_tensor({a, c, k}, rng);
    Tensor<double> zb_a({a}), zb_c({c});
    auto x = random_tensor({t, c}, rng);
    auto y = random_tensor({(t + 1) / 2, a}, rng);
    // <conv(x), y> with weight (a,c,k) equals <x, deconv(y)> with the same array
    // read as (deconv_in=a, deconv_out=c, k). deconv output is 2*ceil(t/2) rows;
    // compare on the first t rows, conv consumed exactly those.
    Graph<double> g;
    auto cx = g.conv1d(g.input(x), g.input(w), g.input(zb_a), 2);
    auto dy = g.deconv1d(g.input(y), g.input(w), g.input(zb_c));
    double lhs = 0, rhs = 0;
    const auto& cv = g.value(cx);
    for (std::size_t i = 0; i < cv.data.size(); ++i) lhs += cv.data[i] * y.data[i];
    const auto& dv = g.value(dy);
    for (int r = 0; r < t; ++r)
      for (int j = 0; j < c; ++j) rhs += dv.at(r, j) * x.at(r, j);
    REQUIRE(std::fabs(lhs - rhs) < 1e-10);
  }
}

TEST_CASE("deconv1d gradients match finite differences") {
  Rng rng(8);
  auto x = random_tensor({5, 3}, rng);
  auto w = random_tensor({3, 4, 3}, rng, 0.5);
  auto b = random_tensor({4}, rng);
  auto r = random_tensor({10, 4}, rng);
  auto f = [&](const std::vector<Tensor<double>>& in) {
    Graph<double> g;
    auto d = g.deconv1d(g.input(in[0]), g.input(in[1]), g.input(in[2]));
    return g.value(g.sum(g.multiply(d, g.constant(r)))).data[0];
  };
  auto fd = fd_gradients(f, {x, w, b});

  Graph<double> g;
  auto xt = x, wt = w, bt = b;
  xt.requires_grad = wt.requires_grad = bt.requires_grad = true;
  auto xi = g.input(xt), wi = g.input(wt), bi = g.input(bt);
  g.backward(g.sum(g.multiply(g.deconv1d(xi, wi, bi), g.constant(r))));
  REQUIRE(max_rel_err(g.gradient(xi), fd[0]) < 1e-6);
  REQUIRE(max_rel_err(g.gradient(wi), fd[1]) < 1e-6);
  REQUIRE(max_rel_err(g.gradient(bi), fd[2]) < 1e-6);
}

TEST_CASE("layer_norm output rows have zero mean and unit-ish variance") {
  Rng rng(9);
  auto x = random_tensor({5, 16}, rng, 3.0);
  Tensor<double> gain = Tensor<double>::full({16}, 1.0);
  Tensor<double> shift({16});
  Graph<double> g;
  auto out = g.layer_norm(g.input(x), g.input(gain), g.input(shift));
  const auto& v = g.value(out);
  for (int r = 0; r < 5; ++r) {
    double mu = 0;
    for (int j = 0; j < 16; ++j) mu += v.at(r, j);
    mu /= 16;
    REQUIRE(std::fabs(mu) < 1e-9);
    double var = 0;
    for (int j = 0; j < 16; ++j) var += (v.at(r, j) - mu) * (v.at(r, j) - mu);
    var /= 16;
    REQUIRE(var == Catch::Approx(1.0).margin(1e-4));
  }
  auto want = testsupport::layer_norm_reference(x, gain, shift);
  REQUIRE(max_abs_diff(v, want) < 1e-12);
}

TEST_CASE("layer_norm of a constant row is the shift vector") {
  Tensor<double> x = Tensor<double>::full({2, 8}, 3.25);
  Tensor<double> gain = Tensor<double>::full({8}, 2.0);
  Tensor<double> shift({8});
  for (int j = 0; j < 8; ++j) shift.at(j) = 0.5 * j;
  Graph<double> g;
  auto out = g.layer_norm(g.input(x), g.input(gain), g.input(shift));
  for (int r = 0; r < 2; ++r)
    for (int j = 0; j < 8; ++j) REQUIRE(g.value(out).at(r, j) == Catch::Approx(shift.at(j)).margin(1e-9));
}

TEST_CASE("layer_norm gradients match finite differences") {
  Rng rng(10);
  auto x = random_tensor({4, 6}, rng);
  auto gain = random_tensor({6}, rng);
  auto shift = random_tensor({6}, rng);
  auto r = random_tensor({4, 6}, rng);
  auto f = [&](const std::vector<Tensor<double>>& in) {
    Graph<double> g;
    auto o = g.layer_norm(g.input(in[0]), g.input(in[1]), g.input(in[2]));
    return g.value(g.sum(g.multiply(o, g.constant(r)))).data[0];
  };
  auto fd = fd_gradients(f, {x, gain, shift});

  Graph<double> g;
  auto xt = x, gt = gain, st = shift;
  xt.requires_grad = gt.requires_grad = st.requires_grad = true;
  auto xi = g.input(xt), gi = g.input(gt), si = g.input(st);
  g.backward(g.sum(g.multiply(g.layer_norm(xi, gi, si), g.constant(r))));
  REQUIRE(max_rel_err(g.gradient(xi), fd[0]) < 1e-6);
  REQUIRE(max_rel_err(g.gradient(gi), fd[1]) < 1e-6);
  REQUIRE(max_rel_err(g.gradient(si), fd[2]) < 1e-6);
}

TEST_CASE("elementwise and structural op gradients match finite differences") {
  Rng rng(11);
  auto x = random_tensor({4, 3}, rng);
  // Keep away from kinks and domain edges.
  for (auto& v : x.data) {
    if (std::fabs(v) < 0.15) v = v < 0 ? v - 0.2 : v + 0.2;
  }
  auto pos = x;
  for (auto& v : pos.data) v = std::fabs(v) + 0.1;
  auto y = random_tensor({4, 3}, rng);
  for (auto& v : y.data) {
    if (std::fabs(v) < 0.15) v = v < 0 ? v - 0.3 : v + 0.3;
  }
  auto r = random_tensor({4, 3}, rng);

  struct Case {
    const char* name;
    std::function<Graph<double>::NodeId(Graph<double>&, Graph<double>::NodeId, Graph<double>::NodeId)> build;
    bool positive_only;
  };
  std::vector<Case> cases = {
      {"relu", [](Graph<double>& g, auto a, auto) { return g.relu(a); }, false},
      {"sigmoid", [](Graph<double>& g, auto a, auto) { return g.sigmoid(a); }, false},
      {"softplus", [](Graph<double>& g, auto a, auto) { return g.softplus(a); }, false},
      {"log", [](Graph<double>& g, auto a, auto) { return g.log(a); }, true},
      {"abs", [](Graph<double>& g, auto a, auto) { return g.abs(a); }, false},
      {"pow2", [](Graph<double>& g, auto a, auto) { return g.pow(a, 2.0); }, false},
      {"pow_half", [](Graph<double>& g, auto a, auto) { return g.pow(a, 0.5); }, true},
      {"clamp", [](Graph<double>& g, auto a, auto) { return g.clamp(a, -0.9, 0.9); }, false},
      {"huber", [](Graph<double>& g, auto a, auto) { return g.huber(a, 1.0); }, false},
      {"scale", [](Graph<double>& g, auto a, auto) { return g.scale(a, -2.5); }, false},
      {"add_scalar", [](Graph<double>& g, auto a, auto) { return g.add_scalar(a, 0.75); }, false},
      {"add", [](Graph<double>& g, auto a, auto b) { return g.add(a, b); }, false},
      {"subtract", [](Graph<double>& g, auto a, auto b) { return g.subtract(a, b); }, false},
      {"multiply", [](Graph<double>& g, auto a, auto b) { return g.multiply(a, b); }, false},
      {"divide", [](Graph<double>& g, auto a, auto b) { return g.divide(a, b); }, false},
      {"maximum", [](Graph<double>& g, auto a, auto b) { return g.maximum(a, b); }, false},
      {"minimum", [](Graph<double>& g, auto a, auto b) { return g.minimum(a, b); }, false},
      {"concat_slice",
       [](Graph<double>& g, auto a, auto b) {
         auto cc = g.concat_channels({a, b});
         return g.slice_channels(cc, 1, 5);
       },
       false},
      {"slice_rows", [](Graph<double>& g, auto a, auto) { return g.slice_rows(a, 1, 3); }, false},
      {"pad_mask",
       [](Graph<double>& g, auto a, auto) { return g.mask_rows(g.pad_rows(a, 6), 3); }, false},
      {"upsample", [](Graph<double>& g, auto a, auto) { return g.upsample2x(a, 7); }, false},
  };

  for (const auto& cse : cases) {
    INFO(cse.name);
    const auto& xin = cse.positive_only ? pos : x;
    auto f = [&](const std::vector<Tensor<double>>& in) {
      Graph<double> g;
      auto out = cse.build(g, g.input(in[0]), g.input(in[1]));
      auto rr = r;
      rr.shape = g.value(out).shape;
      rr.data.resize(g.value(out).numel(), 0.37);
      return g.value(g.sum(g.multiply(out, g.constant(rr)))).data[0];
    };
    auto fd = fd_gradients(f, {xin, y});

    Graph<double> g;
    auto xt = xin, yt = y;
    xt.requires_grad = yt.requires_grad = true;
    auto xi = g.input(xt), yi = g.input(yt);
    auto out = cse.build(g, xi, yi);
    auto rr = r;
    rr.shape = g.value(out).shape;
    rr.data.resize(g.value(out).numel(), 0.37);
    g.backward(g.sum(g.multiply(out, g.constant(rr))));
    REQUIRE(max_rel_err(g.gradient(xi), fd[0]) < 1e-6);
    REQUIRE(max_rel_err(g.gradient(yi), fd[1]) < 1e-6);
  }
}

TEST_CASE("reduction gradients match finite differences") {
  Rng rng(12);
  auto x = random_tensor({3, 4}, rng);
  x.at(1, 2) = 5.0;  // unique max, away from ties
  for (const char* which : {"sum", "mean", "max"}) {
    INFO(which);
    auto f = [&](const std::vector<Tensor<double>>& in) {
      Graph<double> g;
      auto a = g.input(in[0]);
      auto out = std::string(which) == "sum" ? g.sum(a)
                 : std::string(which) == "mean" ? g.mean(a)
                                                : g.reduce_max(a);
      return g.value(out).data[0];
    };
    auto fd = fd_gradients(f, {x});
    Graph<double> g;
    auto xt = x;
    xt.requires_grad = true;
    auto xi = g.input(xt);
    auto out = std::string(which) == "sum" ? g.sum(xi)
               : std::string(which) == "mean" ? g.mean(xi)
                                              : g.reduce_max(xi);
    g.backward(out);
    REQUIRE(max_rel_err(g.gradient(xi), fd[0]) < 1e-8);
  }
}

TEST_CASE("backward of a plain sum yields all-ones gradient") {
  Rng rng(13);
  auto x = random_tensor({5, 2}, rng);
  x.requires_grad = true;
  Graph<double> g;
  auto xi = g.input(x);
  g.backward(g.sum(xi));
  for (double v : g.gradient(xi).data) REQUIRE(v == 1.0);
}

TEST_CASE("relu blocks gradient where its input is negative") {
  Tensor<double> x({1, 4}, {-1.0, 2.0, -3.0, 4.0});
  x.requires_grad = true;
  Graph<double> g;
  auto xi = g.input(x);
  g.backward(g.sum(g.relu(xi)));
  const auto& d = g.gradient(xi);
  REQUIRE(d.data == std::vector<double>{0.0, 1.0, 0.0, 1.0});
}

TEST_CASE("second backward without reset doubles accumulated gradients") {
  Rng rng(14);
  auto x = random_tensor({3, 3}, rng);
  x.requires_grad = true;
  Graph<double> g;
  auto xi = g.input(x);
  auto loss = g.sum(g.multiply(g.sigmoid(xi), g.sigmoid(xi)));
  g.backward(loss);
  auto once = g.gradient(xi);
  g.backward(loss);
  const auto& twice = g.gradient(xi);
  for (std::size_t i = 0; i < once.data.size(); ++i)
    REQUIRE(twice.data[i] == Catch::Approx(2.0 * once.data[i]).epsilon(1e-12));
  g.reset_gradients();
  for (double v : g.gradient(xi).data) REQUIRE(v == 0.0);
}

TEST_CASE("backward rejects non-scalar losses") {
  Tensor<double> x({2, 2}, {1, 2, 3, 4});
  x.requires_grad = true;
  Graph<double> g;
  auto xi = g.input(x);
  REQUIRE_THROWS_AS(g.backward(xi), auvire::contract_error);
}

TEST_CASE("nodes outside the loss subgraph keep zero gradient") {
  Rng rng(15);
  auto x = random_tensor({2, 3}, rng);
  x.requires_grad = true;
  Graph<double> g;
  auto xi = g.input(x);
  auto unused = g.sigmoid(xi);
  g.backward(g.sum(g.relu(xi)));
  for (double v : g.gradient(unused).data) REQUIRE(v == 0.0);
}

TEST_CASE("parameter nodes accumulate gradients against external storage") {
  Rng rng(16);
  auto w = random_tensor({2, 2}, rng);
  Graph<double> g;
  auto wi = g.parameter(&w);
  auto loss = g.sum(g.multiply(wi, wi));
  g.backward(loss);
  const auto& d = g.gradient(wi);
  for (std::size_t i = 0; i < w.data.size(); ++i)
    REQUIRE(d.data[i] == Catch::Approx(2.0 * w.data[i]).epsilon(1e-12));
}

TEST_CASE("fan-out nodes receive adjoints from every consumer") {
  // y = s + s where s = sum(x): dy/dx = 2 everywhere.
  Rng rng(17);
  auto x = random_tensor({2, 2}, rng);
  x.requires_grad = true;
  Graph<double> g;
  auto xi = g.input(x);
  auto s = g.sum(xi);
  g.backward(g.add(s, s));
  for (double v : g.gradient(xi).data) REQUIRE(v == 2.0);
}

TEST_CASE("shape mismatches raise contract errors") {
  Graph<double> g;
  auto a = g.input(Tensor<double>({2, 3}));
  auto b = g.input(Tensor<double>({3, 2}));
  REQUIRE_THROWS_AS(g.add(a, b), auvire::contract_error);
  REQUIRE_THROWS_AS(g.conv1d(a, g.input(Tensor<double>({2, 4, 3})), g.input(Tensor<double>({2})), 1),
                    auvire::contract_error);
  REQUIRE_THROWS_AS(g.conv1d(a, g.input(Tensor<double>({2, 3, 4})), g.input(Tensor<double>({2})), 1),
                    auvire::contract_error);  // even kernel
  REQUIRE_THROWS_AS(g.conv1d(a, g.input(Tensor<double>({2, 3, 3})), g.input(Tensor<double>({2})), 3),
                    auvire::contract_error);  // bad stride
  REQUIRE_THROWS_AS(g.slice_rows(a, 1, 1), auvire::contract_error);
}

TEST_CASE("primitive outputs stay finite on finite inputs") {
  Rng rng(18);
  for (int rep = 0; rep < 20; ++rep) {
    auto x = random_tensor({6, 4}, rng, 10.0);
    auto w = random_tensor({4, 4, 3}, rng, 10.0);
    auto b = random_tensor({4}, rng, 10.0);
    Tensor<double> gain = Tensor<double>::full({4}, 1.0);
    Tensor<double> shift({4});
    Graph<double> g;
    auto h = g.conv1d(g.input(x), g.input(w), g.input(b), 1);
    h = g.layer_norm(h, g.input(gain), g.input(shift));
    h = g.relu(h);
    h = g.sigmoid(h);
    auto s = g.sum(h);
    REQUIRE(std::isfinite(g.value(s).data[0]));
  }
}
