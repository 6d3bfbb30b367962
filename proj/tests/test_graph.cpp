#include <doctest.h>

#include <cmath>
#include <map>

#include "ctaf/common/errors.hpp"
#include "ctaf/num/grad_check.hpp"
#include "ctaf/num/graph.hpp"
#include "ctaf/num/rng.hpp"

using ctaf::num::Graph;
using ctaf::num::GradEval;
using ctaf::num::ParamStore;
using ctaf::num::Rng;
using ctaf::num::Tensor;
using ctaf::num::Var;

namespace {

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double s = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, s);
  return t;
}

}  // namespace

TEST_CASE("masked softmax: logits [1,2,masked] give [0.2689,0.7311,0]") {
  Graph g;
  Var x = g.leaf(Tensor::from({1, 1, 3}, {1.0, 2.0, -3.0}), true);
  Tensor mask = Tensor::from({1, 3}, {1.0, 1.0, 0.0});
  Var p = g.masked_softmax(x, mask, 1);
  const Tensor& pv = g.val(p);
  CHECK(pv[0] == doctest::Approx(0.26894142).epsilon(1e-6));
  CHECK(pv[1] == doctest::Approx(0.73105858).epsilon(1e-6));
  CHECK(pv[2] == 0.0);
  CHECK(pv[0] + pv[1] == doctest::Approx(1.0).epsilon(1e-12));

  // gradient through the masked entry is exactly zero
  Var loss = g.sum_all(g.mul(p, p));
  g.backward(loss);
  CHECK(g.grad(x)[2] == 0.0);
}

TEST_CASE("masked softmax: all-invalid row is exactly zero, no NaN") {
  Graph g;
  Var x = g.leaf(Tensor::from({1, 2, 2}, {5.0, -1.0, 0.0, 3.0}), true);
  Tensor mask = Tensor::from({1, 2}, {0.0, 0.0});
  Var p = g.masked_softmax(x, mask, 1);
  for (std::size_t i = 0; i < 4; ++i) CHECK(g.val(p)[i] == 0.0);
  Var loss = g.sum_all(p);
  g.backward(loss);
  for (std::size_t i = 0; i < 4; ++i) CHECK(g.grad(x)[i] == 0.0);
}

TEST_CASE("d/dx of x*x is 2x") {
  Graph g;
  Var x = g.leaf(Tensor::scalar(3.0), true);
  Var y = g.sum_all(g.mul(x, x));
  CHECK(g.val(y)[0] == doctest::Approx(9.0));
  g.backward(y);
  CHECK(g.grad(x)[0] == doctest::Approx(6.0));
}

TEST_CASE("gradient of squared norm of [1,2] is [2,4]") {
  Graph g;
  Var x = g.leaf(Tensor::from({2}, {1.0, 2.0}), true);
  Var y = g.sum_all(g.mul(x, x));
  CHECK(g.val(y)[0] == doctest::Approx(5.0));
  g.backward(y);
  CHECK(g.grad(x)[0] == doctest::Approx(2.0));
  CHECK(g.grad(x)[1] == doctest::Approx(4.0));
}

TEST_CASE("l2norm_rows: [3,4] maps to [0.6,0.8]") {
  Graph g;
  Var x = g.leaf(Tensor::from({1, 2}, {3.0, 4.0}), true);
  Var y = g.l2norm_rows(x);
  CHECK(g.val(y)[0] == doctest::Approx(0.6).epsilon(1e-10));
  CHECK(g.val(y)[1] == doctest::Approx(0.8).epsilon(1e-10));
}

TEST_CASE("logsumexp_rows matches a direct computation") {
  Graph g;
  Var x = g.leaf(Tensor::from({2, 3}, {0.0, 1.0, 2.0, -5.0, 0.0, 5.0}), false);
  Var l = g.logsumexp_rows(x);
  const double e0 = std::log(std::exp(0.0) + std::exp(1.0) + std::exp(2.0));
  const double e1 = std::log(std::exp(-5.0) + std::exp(0.0) + std::exp(5.0));
  CHECK(g.val(l)[0] == doctest::Approx(e0).epsilon(1e-12));
  CHECK(g.val(l)[1] == doctest::Approx(e1).epsilon(1e-12));
}

TEST_CASE("gelu matches the tanh-form reference") {
  Graph g;
  const std::vector<double> xs = {-3.0, -1.0, -0.1, 0.0, 0.5, 2.0, 8.0};
  Var x = g.leaf(Tensor::from({7}, std::vector<double>(xs)), false);
  Var y = g.gelu(x);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double t =
        std::tanh(0.7978845608028654 * (xs[i] + 0.044715 * std::pow(xs[i], 3)));
    CHECK(g.val(y)[i] == doctest::Approx(0.5 * xs[i] * (1.0 + t)).epsilon(1e-10));
  }
}

TEST_CASE("layer_norm normalizes rows and matches manual computation") {
  Graph g;
  Var x = g.leaf(Tensor::from({1, 4}, {1.0, 2.0, 3.0, 4.0}), false);
  Var gamma = g.leaf(Tensor::from({4}, {1.0, 1.0, 1.0, 1.0}), false);
  Var beta = g.leaf(Tensor::from({4}, {0.0, 0.0, 0.0, 0.0}), false);
  Var y = g.layer_norm(x, gamma, beta, 1e-5);
  const double mean = 2.5;
  const double var = (2.25 + 0.25 + 0.25 + 2.25) / 4.0;
  for (std::size_t j = 0; j < 4; ++j) {
    const double expect = (1.0 + static_cast<double>(j) - mean) / std::sqrt(var + 1e-5);
    CHECK(g.val(y)[j] == doctest::Approx(expect).epsilon(1e-10));
  }
}

TEST_CASE("masked conv renormalizes by the valid tap fraction") {
  // k=3 identity-ish kernel summing taps of a 1-d feature
  Graph g;
  Var x = g.leaf(Tensor::from({1, 3, 1}, {1.0, 1.0, 1.0}), false);
  Var w = g.leaf(Tensor::from({3, 1, 1}, {1.0, 1.0, 1.0}), false);

  SUBCASE("all valid: interior gets all three taps, edges renormalized") {
    Tensor mask = Tensor::from({1, 3}, {1.0, 1.0, 1.0});
    Var y = g.conv1d_masked(x, mask, w);
    // edge positions have 2 valid taps -> scaled by 3/2
    CHECK(g.val(y)[0] == doctest::Approx(2.0 * 1.5).epsilon(1e-12));
    CHECK(g.val(y)[1] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(g.val(y)[2] == doctest::Approx(2.0 * 1.5).epsilon(1e-12));
  }

  SUBCASE("masked middle token contributes nothing") {
    Tensor mask = Tensor::from({1, 3}, {1.0, 0.0, 1.0});
    Var y = g.conv1d_masked(x, mask, w);
    // position 0 sees only itself (1 valid tap of 3)
    CHECK(g.val(y)[0] == doctest::Approx(1.0 * 3.0).epsilon(1e-12));
    // position 1 sees neighbors only (2 valid taps)
    CHECK(g.val(y)[1] == doctest::Approx(2.0 * 1.5).epsilon(1e-12));
  }
}

TEST_CASE("finite differences agree with backward through a deep composite") {
  Rng rng(7);
  ParamStore params;
  params.add("w1", random_tensor(rng, {3, 8}, 0.5));
  params.add("b1", random_tensor(rng, {8}, 0.1));
  params.add("gamma", Tensor::full({8}, 1.0));
  params.add("beta", Tensor::full({8}, 0.0));
  params.add("w2", random_tensor(rng, {8, 4}, 0.5));
  params.add("q", random_tensor(rng, {4, 1}, 0.5));
  params.add("conv", random_tensor(rng, {3, 3, 3}, 0.4));

  const Tensor x0 = random_tensor(rng, {2, 5, 3});
  const Tensor mask = Tensor::from({2, 5}, {1, 1, 0, 1, 1, 0, 1, 1, 1, 0});

  const GradEval eval = [&](ParamStore& p,
                            std::map<std::string, Tensor>* grads) {
    Graph g;
    std::vector<std::pair<std::string, Var>> mounted;
    auto P = [&](const std::string& name) {
      Var v = g.leaf(p.get(name), grads != nullptr, name);
      mounted.emplace_back(name, v);
      return v;
    };
    Var x = g.constant(x0);
    Var c = g.conv1d_masked(x, mask, P("conv"));
    Var h = g.add_bias(g.matmul(c, P("w1")), P("b1"));
    h = g.layer_norm(h, P("gamma"), P("beta"));
    h = g.gelu(h);
    Var z = g.matmul(h, P("w2"));  // [2,5,4]
    Var scores = g.reshape(g.matmul(z, P("q")), {2, 1, 5});
    Var alpha = g.masked_softmax(scores, mask, 1);
    Var pooled = g.pool_weighted(z, g.reshape(alpha, {2, 5}));
    Var unit = g.l2norm_rows(pooled);
    Var loss = g.mean_all(g.mul(unit, unit));
    if (grads) {
      g.backward(loss);
      for (auto& [name, var] : mounted)
        if (g.has_grad(var)) (*grads)[name] = g.grad(var);
    }
    return g.val(loss)[0];
  };

  const auto res = ctaf::num::grad_check(params, eval, 1e-5, 1e-4);
  INFO(res.summary());
  CHECK(res.pass);
}

TEST_CASE("grad_check flags a corrupted gradient (negative control)") {
  ParamStore params;
  params.add("w", Tensor::from({2}, {0.3, -0.7}));
  const GradEval eval = [&](ParamStore& p, std::map<std::string, Tensor>* grads) {
    Graph g;
    Var w = g.leaf(p.get("w"), grads != nullptr);
    Var loss = g.sum_all(g.mul(w, w));
    if (grads) {
      g.backward(loss);
      Tensor corrupt = g.grad(w);
      corrupt[0] += 0.5;  // inject a wrong analytic gradient
      (*grads)["w"] = corrupt;
    }
    return g.val(loss)[0];
  };
  const auto res = ctaf::num::grad_check(params, eval, 1e-5, 1e-4);
  CHECK(!res.pass);
}

TEST_CASE("backward rejects non-scalar roots") {
  Graph g;
  Var x = g.leaf(Tensor::from({2}, {1.0, 2.0}), true);
  CHECK_THROWS_AS(g.backward(x), ctaf::NumericError);
}

TEST_CASE("check_finite names the offending node") {
  Graph g(ctaf::num::GraphOptions{.check_finite = true});
  Var x = g.leaf(Tensor::from({2}, {-1.0, 4.0}), false, "negative_input");
  CHECK_THROWS_AS(g.log(x), ctaf::NumericError);
}

TEST_CASE("split/merge heads round-trips and head_mean averages") {
  Graph g;
  Rng rng(9);
  Tensor x0 = random_tensor(rng, {2, 3, 6});
  Var x = g.leaf(x0, false);
  Var split = g.split_heads(x, 2);
  CHECK(g.val(split).shape() == std::vector<std::size_t>{4, 3, 3});
  Var merged = g.merge_heads(split, 2);
  for (std::size_t i = 0; i < x0.numel(); ++i)
    CHECK(g.val(merged)[i] == x0[i]);

  Var hm = g.head_mean(split, 2);
  CHECK(g.val(hm).shape() == std::vector<std::size_t>{2, 3, 3});
  // mean over the two head slices of batch 0, position 0, feature 0
  CHECK(g.val(hm).at3(0, 0, 0) ==
        doctest::Approx(0.5 * (x0.at3(0, 0, 0) + x0.at3(0, 0, 3))));
}
