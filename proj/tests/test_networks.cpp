// Generator and critic: identity at initialization, shape contracts,
// parameter inheritance, critic geometry, and gradient checks.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "aslsr/networks.hpp"
#include "aslsr/optim.hpp"

using namespace aslsr;
using ad::Tensor;
using ad::Var;

namespace {

template <class S>
Tensor<S> random_tensor(const std::vector<Index>& dims, uint64_t seed, double lo = -1.0,
                        double hi = 1.0) {
  Tensor<S> t(dims);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (Index i = 0; i < t.size(); ++i) t.data[i] = static_cast<S>(u(rng));
  return t;
}

template <class S>
Volume3<S> random_volume(Shape3 sh, uint64_t seed) {
  Volume3<S> v(sh, Eigen::Vector3d(1, 1, 1), Eigen::Vector3d::Zero());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (Index i = 0; i < v.size(); ++i) v.data[i] = static_cast<S>(u(rng));
  return v;
}

}  // namespace

TEST_CASE("residual generator is the identity at initialization") {
  GeneratorSpec spec;
  spec.base_width = 8;
  nn::Generator<float> g(spec, 42);
  auto x = random_volume<float>({11, 10, 9}, 1);
  auto a = random_volume<float>({11, 10, 9}, 2);
  auto out = g.apply(x, a);
  REQUIRE(out.shape == x.shape);
  float max_dev = 0;
  for (Index i = 0; i < x.size(); ++i)
    max_dev = std::max(max_dev, std::abs(out.data[i] - x.data[i]));
  CHECK(max_dev == 0.0f);  // zero-initialized head + residual skip
}

TEST_CASE("non-residual generator outputs zeros at initialization") {
  GeneratorSpec spec;
  spec.base_width = 4;
  spec.residual = false;
  nn::Generator<float> g(spec, 7);
  auto out = g.apply(random_volume<float>({8, 8, 8}, 3), random_volume<float>({8, 8, 8}, 4));
  CHECK(out.data.abs().maxCoeff() == 0.0f);
}

TEST_CASE("generator preserves arbitrary spatial shapes") {
  GeneratorSpec spec;
  spec.base_width = 4;
  nn::Generator<float> g(spec, 9);
  for (Shape3 sh : {Shape3{7, 9, 11}, Shape3{4, 4, 4}, Shape3{16, 5, 13}}) {
    auto out = g.apply(random_volume<float>(sh, 5), random_volume<float>(sh, 6));
    REQUIRE(out.shape == sh);
    REQUIRE(out.all_finite());
  }
}

TEST_CASE("generator rejects mismatched grids and undersized inputs") {
  nn::Generator<float> g(GeneratorSpec{.base_width = 4}, 1);
  auto x = random_volume<float>({8, 8, 8}, 1);
  auto a = random_volume<float>({8, 8, 7}, 2);
  CHECK_THROWS_AS(g.apply(x, a), GeometryError);
  auto tiny_x = random_volume<float>({3, 8, 8}, 3);
  auto tiny_a = random_volume<float>({3, 8, 8}, 4);
  CHECK_THROWS_AS(g.apply(tiny_x, tiny_a), GeometryError);
}

TEST_CASE("seeded construction is deterministic, different seeds differ") {
  GeneratorSpec spec;
  spec.base_width = 4;
  nn::Generator<float> g1(spec, 5), g2(spec, 5), g3(spec, 6);
  const auto& p1 = g1.params().items;
  const auto& p2 = g2.params().items;
  const auto& p3 = g3.params().items;
  REQUIRE(p1.size() == p2.size());
  bool any_diff = false;
  for (size_t i = 0; i < p1.size(); ++i) {
    REQUIRE(p1[i].first == p2[i].first);
    for (Index k = 0; k < p1[i].second->value.size(); ++k) {
      REQUIRE(p1[i].second->value.data[k] == p2[i].second->value.data[k]);
      any_diff |= p1[i].second->value.data[k] != p3[i].second->value.data[k];
    }
  }
  CHECK(any_diff);
}

TEST_CASE("parameter inheritance copies values and rejects mismatched shapes") {
  GeneratorSpec spec;
  spec.base_width = 4;
  nn::Generator<float> src(spec, 11), dst(spec, 12);
  dst.inherit_params(src);
  for (size_t i = 0; i < src.params().items.size(); ++i) {
    const auto& a = src.params().items[i].second->value;
    const auto& b = dst.params().items[i].second->value;
    for (Index k = 0; k < a.size(); ++k) REQUIRE(a.data[k] == b.data[k]);
  }
  GeneratorSpec other = spec;
  other.base_width = 8;
  nn::Generator<float> wide(other, 13);
  CHECK_THROWS_AS(dst.inherit_params(wide), ConfigError);
}

TEST_CASE("critic receptive field and score-map geometry") {
  nn::Discriminator<float> d(DiscriminatorSpec{}, 3);
  CHECK(d.receptive_field() == 23);  // four 3^3 convs at strides 2,2,1,1
  CHECK(d.min_input_extent() == 4);

  Tensor<float> in({1, 12, 12, 12});
  in.data.setRandom();
  auto map = d.forward(ad::constant(in));
  CHECK(map->value.dims == std::vector<Index>{1, 3, 3, 3});

  Tensor<float> small({1, 3, 4, 4});
  CHECK_THROWS_AS(d.forward(ad::constant(small)), GeometryError);

  auto s = d.score(ad::constant(in));
  CHECK(s->value.is_scalar());
}

TEST_CASE("critic with periodic padding is translation covariant") {
  DiscriminatorSpec spec;
  spec.base_width = 4;
  spec.pad_mode = ad::PadMode::periodic;
  nn::Discriminator<float> d(spec, 21);

  const Index n = 16;  // stride product is 4; shift by 4 => map shifts by 1
  Tensor<float> in({1, n, n, n});
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  for (Index i = 0; i < in.size(); ++i) in.data[i] = u(rng);

  Tensor<float> shifted({1, n, n, n});
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      for (Index k = 0; k < n; ++k)
        shifted.data[((i * n) + j) * n + k] = in.data[(((i + 4) % n) * n + j) * n + k];

  auto base = d.forward(ad::constant(in))->value;
  auto moved = d.forward(ad::constant(shifted))->value;
  const Index m = base.x();
  REQUIRE(moved.x() == m);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < base.y(); ++j)
      for (Index k = 0; k < base.z(); ++k) {
        const float a = moved.data[(i * base.y() + j) * base.z() + k];
        const float b = base.data[(((i + 1) % m) * base.y() + j) * base.z() + k];
        REQUIRE(a == doctest::Approx(b).epsilon(1e-4));
      }
}

TEST_CASE("generator gradients match finite differences") {
  GeneratorSpec spec;
  spec.base_width = 2;
  spec.levels = 2;
  nn::Generator<double> g(spec, 31);
  auto xt = random_tensor<double>({1, 6, 6, 6}, 32);
  auto at = random_tensor<double>({1, 6, 6, 6}, 33);

  auto loss_value = [&]() {
    auto out = g.forward(ad::constant(xt), ad::constant(at));
    return ad::mean_all(ad::mul(out, out));
  };
  auto loss = loss_value();
  auto params = g.params().vars();
  auto grads = ad::gradient(loss, params);

  std::mt19937_64 rng(34);
  const double eps = 1e-4;
  int checked = 0;
  for (size_t pi = 0; pi < params.size() && checked < 12; ++pi) {
    auto& value = params[pi]->value;
    std::uniform_int_distribution<Index> pick(0, value.size() - 1);
    const Index i = pick(rng);
    const double orig = value.data[i];
    value.data[i] = orig + eps;
    const double up = loss_value()->value.scalar();
    value.data[i] = orig - eps;
    const double down = loss_value()->value.scalar();
    value.data[i] = orig;
    const double fd = (up - down) / (2 * eps);
    const double an = grads[pi]->value.data[i];
    const double scale = std::max({std::abs(fd), std::abs(an), 1e-8});
    INFO("param ", g.params().items[pi].first, " coord ", i);
    REQUIRE(std::abs(fd - an) / scale < 1e-5);
    ++checked;
  }
  CHECK(checked == 12);
}

TEST_CASE("instance normalization yields zero mean and unit variance") {
  auto xt = random_tensor<double>({3, 5, 5, 5}, 41, -2.0, 5.0);
  auto out = nn::instance_norm(ad::constant(xt), 1e-9)->value;
  const Index sp = out.spatial_size();
  for (Index c = 0; c < out.c(); ++c) {
    double mean = 0, var = 0;
    for (Index i = 0; i < sp; ++i) mean += out.data[c * sp + i];
    mean /= static_cast<double>(sp);
    for (Index i = 0; i < sp; ++i) {
      const double d = out.data[c * sp + i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(sp);
    CHECK(std::abs(mean) < 1e-10);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
  }
  // Constant input stays finite thanks to the epsilon.
  Tensor<double> flat({2, 4, 4, 4});
  flat.data.setConstant(3.0);
  auto safe = nn::instance_norm(ad::constant(flat), 1e-5)->value;
  CHECK(safe.data.isFinite().all());
}

TEST_CASE("adam takes a descent step on a quadratic") {
  Tensor<double> t({1, 2, 2, 2});
  t.data.setConstant(1.0);
  nn::ParamSet<double> ps;
  auto x = ps.add("x", t);
  nn::AdamConfig cfg;
  cfg.lr = 0.1;
  nn::Adam<double> opt(ps.vars(), cfg);
  const double initial = ad::mean_all(ad::mul(x, x))->value.scalar();
  double last = initial;
  for (int step = 0; step < 50; ++step) {
    auto loss = ad::mean_all(ad::mul(x, x));
    last = loss->value.scalar();
    CHECK(last < 10 * initial);  // never diverges
    opt.step(ad::gradient(loss, ps.vars()));
  }
  CHECK(last < 1e-3 * initial);
  CHECK_THROWS_AS(nn::Adam<double>(ps.vars(), nn::AdamConfig{.lr = 0.0}), ConfigError);
}
