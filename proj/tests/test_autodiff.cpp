// Reverse-mode tape: finite-difference oracles, adjoint identities for the
// linear operators, and second-order (graph-building) backward passes.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "aslsr/autodiff.hpp"

using namespace aslsr;
using ad::Tensor;
using ad::Var;

namespace {

Tensor<double> random_tensor(const std::vector<Index>& dims, uint64_t seed, double lo = -1.0,
                             double hi = 1.0) {
  Tensor<double> t(dims);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (Index i = 0; i < t.size(); ++i) t.data[i] = u(rng);
  return t;
}

/// Central-difference check of d(scalar f)/d(inputs[which]) at up to `probes`
/// random coordinates.
void gradcheck(const std::function<Var<double>(const std::vector<Var<double>>&)>& f,
               std::vector<Tensor<double>> inputs, size_t which, uint64_t seed,
               double eps = 1e-5, double tol = 1e-6, int probes = 12) {
  std::vector<Var<double>> vars;
  for (auto& t : inputs) vars.push_back(ad::leaf(t, true));
  Var<double> out = f(vars);
  REQUIRE(out->value.is_scalar());
  auto grads = ad::gradient(out, {vars[which]});
  const Tensor<double>& g = grads[0]->value;
  REQUIRE(g.same_shape(vars[which]->value));

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Index> pick(0, inputs[which].size() - 1);
  for (int p = 0; p < probes; ++p) {
    const Index i = pick(rng);
    auto eval = [&](double delta) {
      std::vector<Var<double>> vs;
      for (size_t k = 0; k < inputs.size(); ++k) {
        Tensor<double> t = inputs[k];
        if (k == which) t.data[i] += delta;
        vs.push_back(ad::leaf(t, false));
      }
      ad::NoGradGuard guard;
      return f(vs)->value.scalar();
    };
    const double fd = (eval(eps) - eval(-eps)) / (2 * eps);
    const double an = g.data[i];
    const double scale = std::max({std::abs(fd), std::abs(an), 1e-8});
    INFO("probe ", p, " coord ", i, " fd=", fd, " an=", an);
    REQUIRE(std::abs(fd - an) / scale < tol);
  }
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  return (a.data * b.data).sum();
}

}  // namespace

TEST_CASE("gradient of elementwise polynomial matches the analytic value") {
  Tensor<double> t({1, 3, 2, 2});
  for (Index i = 0; i < t.size(); ++i) t.data[i] = 0.25 * static_cast<double>(i) - 1.0;
  auto x = ad::leaf(t, true);
  // f = sum(x^2 + 3x)  =>  df/dx = 2x + 3
  auto f = ad::sum_all(ad::add(ad::pow_scalar(x, 2.0), ad::mul_scalar(x, 3.0)));
  auto g = ad::gradient(f, {x})[0];
  for (Index i = 0; i < t.size(); ++i)
    REQUIRE(g->value.data[i] == doctest::Approx(2 * t.data[i] + 3).epsilon(1e-12));
}

TEST_CASE("diamond graphs accumulate gradients once per path") {
  Tensor<double> t({1, 2, 2, 2});
  for (Index i = 0; i < t.size(); ++i) t.data[i] = 0.3 * static_cast<double>(i + 1);
  auto x = ad::leaf(t, true);
  auto via_mul = ad::gradient(ad::sum_all(ad::mul(x, x)), {x})[0];
  auto via_pow = ad::gradient(ad::sum_all(ad::pow_scalar(x, 2.0)), {x})[0];
  for (Index i = 0; i < t.size(); ++i)
    REQUIRE(via_mul->value.data[i] == doctest::Approx(via_pow->value.data[i]).epsilon(1e-12));
}

TEST_CASE("elementwise and reduction ops pass finite differences") {
  auto t = random_tensor({2, 4, 3, 3}, 7);
  gradcheck([](const std::vector<Var<double>>& v) { return ad::mean_all(ad::mul(v[0], v[0])); },
            {t}, 0, 100);
  gradcheck(
      [](const std::vector<Var<double>>& v) {
        return ad::sum_all(ad::leaky_relu(v[0], 0.2));
      },
      {random_tensor({2, 4, 3, 3}, 8)}, 0, 101);
  gradcheck(
      [](const std::vector<Var<double>>& v) {
        return ad::sum_all(ad::pow_scalar(ad::add_scalar(ad::mul(v[0], v[1]), 2.0), 1.5));
      },
      {t, random_tensor({2, 4, 3, 3}, 9)}, 1, 102);
  gradcheck(
      [](const std::vector<Var<double>>& v) {
        // Per-channel statistics through spatial_sum / broadcast.
        auto mu = ad::mul_scalar(ad::spatial_sum(v[0]), 1.0 / 36.0);
        auto centered = ad::sub(v[0], ad::broadcast_spatial(mu, v[0]->value.dims));
        return ad::mean_all(ad::mul(centered, centered));
      },
      {random_tensor({2, 4, 3, 3}, 10)}, 0, 103);
}

TEST_CASE("channel concat and slice pass finite differences") {
  auto a = random_tensor({2, 3, 3, 3}, 11);
  auto b = random_tensor({1, 3, 3, 3}, 12);
  for (size_t which : {size_t(0), size_t(1)}) {
    gradcheck(
        [](const std::vector<Var<double>>& v) {
          auto cat = ad::concat_c(v[0], v[1]);
          auto mid = ad::slice_c(cat, 1, 2);
          return ad::sum_all(ad::mul(mid, mid));
        },
        {a, b}, which, 104 + which);
  }
}

TEST_CASE("padding modes pass finite differences") {
  auto t = random_tensor({2, 4, 4, 3}, 13);
  for (auto mode : {ad::PadMode::zero, ad::PadMode::replicate, ad::PadMode::periodic}) {
    gradcheck(
        [mode](const std::vector<Var<double>>& v) {
          auto p = ad::pad3(v[0], {1, 2, 0}, {2, 1, 1}, mode);
          return ad::sum_all(ad::mul(p, p));
        },
        {t}, 0, 110 + static_cast<int>(mode));
  }
}

TEST_CASE("crop and resize pass finite differences") {
  auto t = random_tensor({1, 5, 4, 4}, 14);
  gradcheck(
      [](const std::vector<Var<double>>& v) {
        auto c = ad::crop3(v[0], {1, 0, 1}, {1, 1, 0});
        return ad::mean_all(ad::mul(c, c));
      },
      {t}, 0, 115);
  gradcheck(
      [](const std::vector<Var<double>>& v) {
        auto r = ad::resize3(v[0], {8, 6, 4});
        return ad::mean_all(ad::mul(r, r));
      },
      {t}, 0, 116);
  gradcheck(
      [](const std::vector<Var<double>>& v) {
        auto r = ad::resize3(v[0], {3, 2, 4});  // shrink
        return ad::mean_all(ad::mul(r, r));
      },
      {t}, 0, 117);
}

TEST_CASE("convolution passes finite differences for input, weight, and bias") {
  auto x = random_tensor({2, 5, 5, 4}, 15);
  auto w = random_tensor({3, 2, 3, 3, 3}, 16, -0.5, 0.5);
  auto b = random_tensor({3, 1, 1, 1}, 17);
  for (ad::Stride3 st : {ad::Stride3{1, 1, 1}, ad::Stride3{2, 2, 1}}) {
    for (size_t which : {size_t(0), size_t(1), size_t(2)}) {
      gradcheck(
          [st](const std::vector<Var<double>>& v) {
            auto y = ad::add_bias(ad::conv3d(v[0], v[1], st), v[2]);
            return ad::sum_all(ad::mul(y, y));
          },
          {x, w, b}, which, 120 + which + 10 * st[0]);
    }
  }
}

TEST_CASE("adjoint identities hold to machine precision") {
  std::mt19937_64 rng(18);
  // <A x, y> == <x, A^T y> for the linear graph ops, evaluated through the
  // backward pass: gradient of <A x, y> w.r.t. x equals A^T y.
  auto check_linear = [&](const std::function<Var<double>(const Var<double>&)>& op,
                          const std::vector<Index>& in_dims, uint64_t seed) {
    auto xt = random_tensor(in_dims, seed);
    auto x = ad::leaf(xt, true);
    auto ax = op(x);
    auto yt = random_tensor(ax->value.dims, seed + 1);
    auto y = ad::constant(yt);
    auto inner = ad::sum_all(ad::mul(ax, y));
    auto gx = ad::gradient(inner, {x})[0];
    // Forward inner product and the adjoint-side inner product must agree.
    const double lhs = dot(ax->value, yt);
    const double rhs = dot(xt, gx->value);
    REQUIRE(lhs == doctest::Approx(rhs).epsilon(1e-12));
  };

  check_linear([](const Var<double>& v) { return ad::pad3(v, {1, 0, 2}, {0, 2, 1}, ad::PadMode::zero); },
               {1, 4, 5, 3}, 200);
  check_linear(
      [](const Var<double>& v) { return ad::pad3(v, {2, 1, 1}, {1, 1, 2}, ad::PadMode::replicate); },
      {2, 3, 4, 3}, 202);
  check_linear(
      [](const Var<double>& v) { return ad::pad3(v, {1, 1, 1}, {1, 1, 1}, ad::PadMode::periodic); },
      {1, 4, 4, 4}, 204);
  check_linear([](const Var<double>& v) { return ad::resize3(v, {7, 3, 5}); }, {2, 4, 4, 4},
               206);
  check_linear([](const Var<double>& v) { return ad::crop3(v, {1, 1, 0}, {0, 1, 1}); },
               {1, 4, 4, 4}, 208);
  auto w = ad::constant(random_tensor({2, 2, 2, 2, 2}, 210));
  check_linear([&](const Var<double>& v) { return ad::conv3d(v, w, {1, 1, 1}); }, {2, 4, 4, 4},
               211);
  check_linear([&](const Var<double>& v) { return ad::conv3d(v, w, {2, 2, 2}); }, {2, 5, 4, 4},
               212);
}

TEST_CASE("second-order backward matches the analytic derivative") {
  // g = sum(x^3); h = sum((dg/dx)^2) = sum(9 x^4); dh/dx = 36 x^3.
  auto t = random_tensor({1, 3, 3, 2}, 19, 0.2, 1.5);
  auto x = ad::leaf(t, true);
  auto g = ad::sum_all(ad::pow_scalar(x, 3.0));
  auto dg = ad::gradient(g, {x}, /*create_graph=*/true)[0];
  auto h = ad::sum_all(ad::mul(dg, dg));
  auto dh = ad::gradient(h, {x})[0];
  for (Index i = 0; i < t.size(); ++i) {
    const double expect = 36.0 * std::pow(t.data[i], 3.0);
    REQUIRE(dh->value.data[i] == doctest::Approx(expect).epsilon(1e-10));
  }
}

TEST_CASE("second-order backward through convolution matches finite differences") {
  auto xt = random_tensor({1, 4, 4, 4}, 20);
  auto wt = random_tensor({1, 1, 3, 3, 3}, 21, -0.5, 0.5);

  auto penalty = [&](const Tensor<double>& x_in) {
    auto x = ad::leaf(x_in, true);
    auto w = ad::constant(wt);
    auto y = ad::sum_all(ad::pow_scalar(ad::conv3d(x, w, {1, 1, 1}), 2.0));
    auto gx = ad::gradient(y, {x}, /*create_graph=*/true)[0];
    return std::make_pair(x, ad::sum_all(ad::mul(gx, gx)));
  };

  auto [x, h] = penalty(xt);
  auto dh = ad::gradient(h, {x})[0];

  std::mt19937_64 rng(22);
  std::uniform_int_distribution<Index> pick(0, xt.size() - 1);
  const double eps = 1e-5;
  for (int p = 0; p < 8; ++p) {
    const Index i = pick(rng);
    Tensor<double> plus = xt, minus = xt;
    plus.data[i] += eps;
    minus.data[i] -= eps;
    const double fd = (penalty(plus).second->value.scalar() -
                       penalty(minus).second->value.scalar()) /
                      (2 * eps);
    REQUIRE(dh->value.data[i] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("no-grad regions build no graph") {
  auto t = random_tensor({1, 2, 2, 2}, 23);
  Var<double> y;
  {
    ad::NoGradGuard guard;
    auto x = ad::leaf(t, true);
    y = ad::mul(x, x);
  }
  CHECK(y->parents.empty());
  CHECK_FALSE(y->requires_grad);
}

TEST_CASE("gradient rejects non-scalar roots") {
  auto x = ad::leaf(random_tensor({1, 2, 2, 2}, 24), true);
  auto y = ad::mul(x, x);
  CHECK_THROWS_AS(ad::gradient(y, {x}), GeometryError);
}
