// Gradient checks for every differentiable op. These run on the double
// instantiation of the engine so the central-difference oracle is not
// limited by float32 rounding; the float path shares the same templates.

#include <cmath>
#include <functional>
#include <string>

#include "doctest.h"
#include "test_util.hpp"
#include "yolod/errors.hpp"
#include "yolod/grad_check.hpp"
#include "yolod/ops.hpp"

using namespace yolod;
using yolod::testing::random_tensor;

namespace {

using G = Graph<double>;
using Fn = std::function<Var(G&, Var)>;

// Projects a tensor-valued op onto a scalar with fixed random weights.
Fn projected(std::function<Var(G&, Var)> op, std::uint64_t seed) {
  return [op, seed](G& g, Var x) {
    Var y = op(g, x);
    Var r = g.constant(random_tensor<double>(g.value(y).shape(), seed ^ 0x9e3779b9ULL));
    return ops::sum(g, ops::mul(g, y, r));
  };
}

struct OpCase {
  std::string name;
  Shape shape;
  double lo, hi;
  std::function<Var(G&, Var, std::uint64_t)> op;
};

std::vector<OpCase> op_cases() {
  std::vector<OpCase> c;
  const Shape s4{2, 3, 4, 4};
  c.push_back({"silu", s4, -3, 3, [](G& g, Var x, std::uint64_t) { return ops::silu(g, x); }});
  c.push_back({"sigmoid", s4, -3, 3, [](G& g, Var x, std::uint64_t) { return ops::sigmoid(g, x); }});
  c.push_back({"exp", s4, -2, 2, [](G& g, Var x, std::uint64_t) { return ops::exp(g, x); }});
  c.push_back({"atan", s4, -3, 3, [](G& g, Var x, std::uint64_t) { return ops::atan(g, x); }});
  c.push_back({"square", s4, -2, 2, [](G& g, Var x, std::uint64_t) { return ops::square(g, x); }});
  c.push_back({"clamp_min", s4, -1, 1, [](G& g, Var x, std::uint64_t) { return ops::clamp_min(g, x, 0.1); }});
  c.push_back({"mul_scalar", s4, -1, 1, [](G& g, Var x, std::uint64_t) { return ops::mul_scalar(g, x, -2.5); }});
  c.push_back({"add_scalar", s4, -1, 1, [](G& g, Var x, std::uint64_t) { return ops::add_scalar(g, x, 0.3); }});
  c.push_back({"conv2d.input", Shape{2, 3, 6, 6}, -1, 1, [](G& g, Var x, std::uint64_t s) {
                 return ops::conv2d(g, x, g.constant(random_tensor<double>(Shape{4, 3, 3, 3}, s + 1)),
                                    g.constant(random_tensor<double>(Shape{4}, s + 2)), 2, 1);
               }});
  c.push_back({"conv2d.weight", Shape{4, 3, 3, 3}, -1, 1, [](G& g, Var w, std::uint64_t s) {
                 return ops::conv2d(g, g.constant(random_tensor<double>(Shape{2, 3, 5, 5}, s + 1)), w, Var{}, 1, 1);
               }});
  c.push_back({"conv2d.bias", Shape{4}, -1, 1, [](G& g, Var b, std::uint64_t s) {
                 return ops::conv2d(g, g.constant(random_tensor<double>(Shape{1, 2, 4, 4}, s + 1)),
                                    g.constant(random_tensor<double>(Shape{4, 2, 1, 1}, s + 2)), b, 1, 0);
               }});
  c.push_back({"batch_norm.train", s4, -2, 2, [](G& g, Var x, std::uint64_t s) {
                 static ops::BatchNormState<double> st(3);
                 return ops::batch_norm2d(g, x, g.constant(random_tensor<double>(Shape{3}, s + 1, 0.5, 1.5)),
                                          g.constant(random_tensor<double>(Shape{3}, s + 2)), st, true);
               }});
  c.push_back({"batch_norm.gamma", Shape{3}, 0.5, 1.5, [](G& g, Var gm, std::uint64_t s) {
                 static ops::BatchNormState<double> st(3);
                 return ops::batch_norm2d(g, g.constant(random_tensor<double>(Shape{2, 3, 4, 4}, s + 1)), gm,
                                          g.constant(random_tensor<double>(Shape{3}, s + 2)), st, true);
               }});
  c.push_back({"batch_norm.eval", s4, -2, 2, [](G& g, Var x, std::uint64_t s) {
                 ops::BatchNormState<double> st(3);
                 st.running_mean = random_tensor<double>(Shape{3}, s + 3);
                 st.running_var = random_tensor<double>(Shape{3}, s + 4, 0.5, 2.0);
                 return ops::batch_norm2d(g, x, g.constant(random_tensor<double>(Shape{3}, s + 1)),
                                          g.constant(random_tensor<double>(Shape{3}, s + 2)), st, false);
               }});
  c.push_back({"add.broadcast", s4, -1, 1, [](G& g, Var x, std::uint64_t s) {
                 return ops::add(g, g.constant(random_tensor<double>(Shape{2, 1, 4, 4}, s + 1)), x);
               }});
  c.push_back({"sub.broadcast_rhs", Shape{2, 1, 4, 4}, -1, 1, [](G& g, Var x, std::uint64_t s) {
                 return ops::sub(g, g.constant(random_tensor<double>(Shape{2, 3, 4, 4}, s + 1)), x);
               }});
  c.push_back({"mul.broadcast", Shape{2, 1, 4, 4}, -1, 1, [](G& g, Var x, std::uint64_t s) {
                 return ops::mul(g, g.constant(random_tensor<double>(Shape{2, 3, 4, 4}, s + 1)), x);
               }});
  c.push_back({"div.numerator", Shape{7}, -1, 1, [](G& g, Var x, std::uint64_t s) {
                 return ops::div(g, x, g.constant(random_tensor<double>(Shape{7}, s + 1, 0.5, 2.0)));
               }});
  c.push_back({"div.denominator", Shape{7}, 0.5, 2.0, [](G& g, Var x, std::uint64_t s) {
                 return ops::div(g, g.constant(random_tensor<double>(Shape{7}, s + 1)), x);
               }});
  c.push_back({"maximum", Shape{9}, -1, 1, [](G& g, Var x, std::uint64_t s) {
                 return ops::maximum(g, x, g.constant(random_tensor<double>(Shape{9}, s + 1)));
               }});
  c.push_back({"minimum", Shape{9}, -1, 1, [](G& g, Var x, std::uint64_t s) {
                 return ops::minimum(g, g.constant(random_tensor<double>(Shape{9}, s + 1)), x);
               }});
  c.push_back({"max_pool2d", Shape{1, 2, 6, 6}, -1, 1,
               [](G& g, Var x, std::uint64_t) { return ops::max_pool2d(g, x, 5, 1, 2); }});
  c.push_back({"upsample_nearest", Shape{1, 2, 3, 3}, -1, 1,
               [](G& g, Var x, std::uint64_t) { return ops::upsample_nearest(g, x, 2); }});
  c.push_back({"concat_channels", Shape{1, 2, 3, 3}, -1, 1, [](G& g, Var x, std::uint64_t s) {
                 return ops::concat_channels(g, {g.constant(random_tensor<double>(Shape{1, 1, 3, 3}, s + 1)), x, x});
               }});
  c.push_back({"slice_channels", Shape{1, 5, 3, 3}, -1, 1,
               [](G& g, Var x, std::uint64_t) { return ops::slice_channels(g, x, 1, 4); }});
  c.push_back({"channel_mean", s4, -1, 1, [](G& g, Var x, std::uint64_t) { return ops::channel_mean(g, x); }});
  c.push_back(
      {"mean_over_channels", s4, -1, 1, [](G& g, Var x, std::uint64_t) { return ops::mean_over_channels(g, x); }});
  c.push_back(
      {"max_over_channels", s4, -1, 1, [](G& g, Var x, std::uint64_t) { return ops::max_over_channels(g, x); }});
  c.push_back({"mask_channels", s4, -1, 1, [](G& g, Var x, std::uint64_t) {
                 return ops::mask_channels(g, x, {1, 0, 1, 0, 1, 1});
               }});
  c.push_back({"reshape", s4, -1, 1, [](G& g, Var x, std::uint64_t) { return ops::reshape(g, x, Shape{6, 16}); }});
  c.push_back({"gather", Shape{10}, -1, 1, [](G& g, Var x, std::uint64_t) {
                 return ops::gather(g, x, std::vector<std::int64_t>{3, 3, 0, 9});
               }});
  c.push_back({"mean", s4, -1, 1, [](G& g, Var x, std::uint64_t) { return ops::mean(g, x); }});
  c.push_back({"bce_with_logits", Shape{12}, -4, 4, [](G& g, Var x, std::uint64_t s) {
                 return ops::bce_with_logits(g, x, random_tensor<double>(Shape{12}, s + 1, 0.0, 1.0));
               }});
  return c;
}

}  // namespace

TEST_CASE("every differentiable op passes grad_check over 64 seeded trials") {
  for (const OpCase& c : op_cases()) {
    double worst = 0.0;
    for (std::uint64_t trial = 0; trial < 64; ++trial) {
      const std::uint64_t seed = 1000 * trial + 17;
      auto op = c.op;
      Fn f = projected([op, seed](G& g, Var x) { return op(g, x, seed); }, seed);
      const auto rep = grad_check<double>(f, random_tensor<double>(c.shape, seed, c.lo, c.hi), 1e-6);
      worst = std::max(worst, rep.max_rel_error);
    }
    CAPTURE(c.name);
    CHECK(worst < 1e-3);
  }
}

TEST_CASE("grad_check examples") {
  SUBCASE("sum(sigmoid(x)) with eps 1e-3") {
    Fn f = [](G& g, Var x) { return ops::sum(g, ops::sigmoid(g, x)); };
    CHECK(grad_check<double>(f, random_tensor<double>(Shape{64}, 3, -2, 2), 1e-3).max_rel_error < 1e-4);
  }
  SUBCASE("sum(conv2d(x, w))") {
    Tensor w = random_tensor(Shape{3, 2, 3, 3}, 5);
    Fn f = [&](G& g, Var x) {
      return ops::sum(g, ops::conv2d(g, x, g.constant(w.cast<double>()), Var{}, 1, 1));
    };
    CHECK(grad_check<double>(f, random_tensor<double>(Shape{1, 2, 5, 5}, 4), 1e-3).max_rel_error < 1e-3);
  }
  SUBCASE("sum(x) has unit gradient") {
    Graph<float> g;
    Var x = g.input(random_tensor(Shape{3, 4}, 1));
    g.backward(ops::sum(g, x));
    for (float v : g.grad(x).data()) CHECK(v == 1.0f);
  }
  SUBCASE("non-scalar output is rejected") {
    Fn f = [](G& g, Var x) { return ops::sigmoid(g, x); };
    CHECK_THROWS_AS(grad_check<double>(f, random_tensor<double>(Shape{4}, 1), 1e-3), ShapeError);
  }
}

TEST_CASE("float graph gradients agree with the double instantiation") {
  auto build = [](auto& g, auto x) {
    using T = typename std::decay_t<decltype(g.value(x))>::value_type;
    Var w = g.constant(random_tensor(Shape{6, 4, 3, 3}, 2).template cast<T>());
    Var y = ops::silu(g, ops::conv2d(g, x, w, Var{}, 2, 1));
    return ops::sum(g, ops::mul(g, y, g.constant(random_tensor(g.value(y).shape(), 3).template cast<T>())));
  };
  const Tensor x0 = random_tensor(Shape{2, 4, 8, 8}, 1);
  Graph<float> gf;
  Var xf = gf.input(x0);
  gf.backward(build(gf, xf));
  Graph<double> gd;
  Var xd = gd.input(x0.cast<double>());
  gd.backward(build(gd, xd));
  double scale = 0.0, worst = 0.0;
  for (double v : gd.grad(xd).data()) scale = std::max(scale, std::abs(v));
  for (std::int64_t i = 0; i < x0.numel(); ++i) {
    worst = std::max(worst, std::abs(gf.grad(xf)[i] - gd.grad(xd)[i]));
  }
  CHECK(worst / scale < 1e-5);
}
