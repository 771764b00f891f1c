#include <cmath>

#include "doctest.h"
#include "gradient_suite.hpp"
#include "support.hpp"
#include "vdanlg/autodiff.hpp"

using namespace vdanlg;
using ad::Graph;
using ad::Parameter;
using ad::Tensor;
using ad::Var;

namespace {

Parameter make_param(const std::string& name, Tensor value) {
  Parameter p{name, std::move(value), {}};
  p.grad = Tensor(p.value.shape());
  return p;
}

}  // namespace

TEST_CASE("tensor shapes are validated") {
  CHECK_THROWS_AS(Tensor({0}), ad::ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ad::ShapeError);
  const Tensor m({2, 3});
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m.shape_string() == "[2x3]");
}

TEST_CASE("forward values of simple primitives") {
  Graph g;
  const Var r = ad::relu(g.constant(Tensor::vector({-1, 0, 2})));
  CHECK(r.value() == Tensor::vector({0, 0, 2}));
  CHECK(ad::sigmoid(g.constant(Tensor::vector({0}))).value()[0] == 0.5);
  const Var pooled = ad::mean_pool(g.constant(Tensor({2, 2}, {1, 3, 3, 5})));
  CHECK(pooled.value() == Tensor::vector({2, 4}));
  const Var mm = ad::matmul(g.constant(Tensor({2, 2}, {1, 2, 3, 4})),
                            g.constant(Tensor::vector({1, -1})));
  CHECK(mm.value() == Tensor::vector({-1, -1}));
  const Var t = ad::transpose(g.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6})));
  CHECK(t.value() == Tensor({3, 2}, {1, 4, 2, 5, 3, 6}));
}

TEST_CASE("shape mismatch names both shapes") {
  Graph g;
  const Var a = g.constant(Tensor({2}));
  const Var b = g.constant(Tensor({3}));
  try {
    ad::add(a, b);
    FAIL("expected ShapeError");
  } catch (const ad::ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2]") != std::string::npos);
    CHECK(msg.find("[3]") != std::string::npos);
  }
  CHECK_THROWS_AS(ad::matmul(g.constant(Tensor({2, 3})), g.constant(Tensor({2}))),
                  ad::ShapeError);
}

TEST_CASE("softmax and cross-entropy stay finite on extreme logits") {
  Graph g;
  const Var logits = g.constant(Tensor::vector({1000, -1000, 0}));
  const Var p = ad::softmax(logits);
  CHECK(p.value().all_finite());
  CHECK(p.value()[0] == doctest::Approx(1.0));
  const Var ce = ad::softmax_cross_entropy(logits, 1);
  CHECK(std::isfinite(ce.value()[0]));
  CHECK(ce.value()[0] == doctest::Approx(2000.0));
  double total = 0;
  for (double v : ad::log_softmax(Tensor::vector({3, 1, -2}).values())) total += std::exp(v);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("grad_reverse is the identity forward and scales adjoints by -lambda") {
  const Tensor x = Tensor::vector({1.5, -2});
  for (double lambda : {1.0, 0.5}) {
    Parameter p = make_param("x", x);
    Graph g;
    const Var xv = g.param(p);
    const Var y = ad::grad_reverse(xv, {lambda});
    CHECK(y.value() == x);
    const Var loss = ad::sum(ad::mul(y, g.constant(Tensor::vector({2, -4}))));
    g.backward(loss);
    CHECK(p.grad == Tensor::vector({-2 * lambda, 4 * lambda}));
  }
  Graph g;
  CHECK_THROWS_AS(ad::grad_reverse(g.constant(x), {1.5}), std::invalid_argument);
  CHECK_THROWS_AS(ad::grad_reverse(g.constant(x), {-0.1}), std::invalid_argument);
}

TEST_CASE("backward examples") {
  SUBCASE("x*x at 3") {
    Parameter x = make_param("x", Tensor::vector({3}));
    Graph g;
    const Var xv = g.param(x);
    g.backward(ad::mul(xv, xv));
    CHECK(x.grad[0] == 6.0);
  }
  SUBCASE("sum through grad_reverse") {
    Parameter x = make_param("x", Tensor::vector({0.3, -0.7, 2.0}));
    Graph g;
    g.backward(ad::sum(ad::grad_reverse(g.param(x), {1.0})));
    CHECK(x.grad == Tensor::vector({-1, -1, -1}));
  }
  SUBCASE("disconnected parameter gets exactly zero") {
    Parameter x = make_param("x", Tensor::vector({1, 2}));
    Parameter unused = make_param("unused", Tensor::vector({5}));
    Graph g;
    g.param(unused);
    g.backward(ad::sum(ad::tanh(g.param(x))));
    CHECK(unused.grad[0] == 0.0);
  }
  SUBCASE("non-scalar loss is rejected") {
    Graph g;
    CHECK_THROWS_AS(g.backward(g.constant(Tensor({2}))), ad::ShapeError);
  }
  SUBCASE("parameter gradients accumulate across graphs") {
    Parameter x = make_param("x", Tensor::vector({2}));
    for (int k = 0; k < 2; ++k) {
      Graph g;
      g.backward(ad::scale(g.param(x), 3.0));
    }
    CHECK(x.grad[0] == 6.0);
  }
}

TEST_CASE("a node with two consumers receives the sum of both adjoints") {
  std::mt19937_64 rng(11);
  const Tensor W = testing::random_tensor({3, 3}, rng);
  const Tensor x0 = testing::random_tensor({3}, rng);

  Parameter shared = make_param("x", x0);
  {
    Graph g;
    const Var h = ad::tanh(g.param(shared));
    const Var a = ad::sum(ad::sigmoid(ad::matmul(g.constant(W), h)));
    const Var b = ad::sum(ad::mul(h, h));
    g.backward(ad::add(a, b));
  }
  // The same function with h computed twice from separate leaves.
  Parameter left = make_param("l", x0), right = make_param("r", x0);
  {
    Graph g;
    const Var a = ad::sum(ad::sigmoid(ad::matmul(g.constant(W), ad::tanh(g.param(left)))));
    const Var hr = ad::tanh(g.param(right));
    g.backward(ad::add(a, ad::sum(ad::mul(hr, hr))));
  }
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(shared.grad[i] == doctest::Approx(left.grad[i] + right.grad[i]).epsilon(1e-14));
  }
}

TEST_CASE("dropout scales kept units by 1/keep") {
  std::mt19937_64 rng(3);
  Graph g;
  const Var x = g.constant(Tensor({1000}, 1.0));
  const Var y = ad::dropout(x, 0.7, rng);
  std::size_t kept = 0;
  for (double v : y.value().values()) {
    if (v != 0.0) {
      CHECK(v == doctest::Approx(1.0 / 0.7));
      ++kept;
    }
  }
  CHECK(kept > 600);
  CHECK(kept < 800);
  CHECK(ad::dropout(x, 1.0, rng).value() == x.value());
  CHECK_THROWS_AS(ad::dropout(x, 0.0, rng), std::invalid_argument);
}

TEST_CASE("check_gradients harness") {
  std::mt19937_64 rng(5);
  SUBCASE("sum(sigmoid(Wx))") {
    Parameter W = make_param("W", testing::random_tensor({3, 4}, rng, 0.5));
    const Tensor x = testing::random_tensor({4}, rng);
    std::vector<Parameter*> params{&W};
    const auto res = ad::check_gradients(
        [&](Graph& g) {
          return ad::sum(ad::sigmoid(ad::matmul(g.param(W), g.constant(x))));
        },
        params, 1e-5);
    CHECK(res.max_rel_error < 1e-4);
  }
  SUBCASE("constant function") {
    Parameter W = make_param("W", Tensor::vector({1, 2}));
    std::vector<Parameter*> params{&W};
    const auto res = ad::check_gradients(
        [&](Graph& g) {
          g.param(W);
          return g.constant(Tensor::scalar(4.0));
        },
        params, 1e-5);
    CHECK(res.max_rel_error == 0.0);
    CHECK(res.analytic == 0.0);
    CHECK(res.numeric == 0.0);
  }
  SUBCASE("grad_reverse differs from the forward derivative by -lambda") {
    Parameter x = make_param("x", testing::random_tensor({4}, rng));
    std::vector<Parameter*> params{&x};
    auto f = [&](Graph& g) {
      return ad::sum(ad::tanh(ad::grad_reverse(g.param(x), {0.5})));
    };
    CHECK(ad::check_gradients(f, params, 1e-5, -0.5).max_rel_error < 1e-6);
    CHECK(ad::check_gradients(f, params, 1e-5, 1.0).max_rel_error > 1.0);
  }
  SUBCASE("eps outside [1e-6, 1e-3] is rejected") {
    Parameter x = make_param("x", Tensor::vector({1}));
    std::vector<Parameter*> params{&x};
    auto f = [&](Graph& g) { return g.param(x); };
    CHECK_THROWS_AS(ad::check_gradients(f, params, 1e-7), std::invalid_argument);
    CHECK_THROWS_AS(ad::check_gradients(f, params, 1e-2), std::invalid_argument);
  }
  SUBCASE("unseeded noise is rejected") {
    Parameter x = make_param("x", Tensor({50}, 1.0));
    std::vector<Parameter*> params{&x};
    std::mt19937_64 noise(1);
    auto f = [&](Graph& g) { return ad::sum(ad::dropout(g.param(x), 0.5, noise)); };
    CHECK_THROWS_AS(ad::check_gradients(f, params, 1e-5), ad::NonDeterministicGraph);
  }
}

TEST_CASE("every primitive passes finite-difference checks") {
  std::mt19937_64 rng(2024);
  for (const auto& c : testing::primitive_grad_cases()) {
    CAPTURE(c.name);
    double worst = 0;
    for (int instance = 0; instance < 20; ++instance) {
      worst = std::max(worst, c.run(rng).max_rel_error);
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("forward passes on finite inputs stay finite") {
  std::mt19937_64 rng(9);
  Graph g;
  const Var x = g.constant(testing::random_tensor({6}, rng, 50.0));
  for (const Var& y : {ad::sigmoid(x), ad::tanh(x), ad::softmax(x), ad::relu(x)}) {
    CHECK(y.value().all_finite());
  }
}
