// Loss terms: analytic values, the low-pass filter contract, finite
// difference gradients, and the composed generator objective.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "aslsr/losses.hpp"
#include "aslsr/networks.hpp"

using namespace aslsr;
using ad::Tensor;
using ad::Var;

namespace {

Volume3<float> random_volume(Shape3 sh, uint64_t seed) {
  Volume3<float> v(sh, Eigen::Vector3d(1, 1, 1), Eigen::Vector3d::Zero());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  for (Index i = 0; i < v.size(); ++i) v.data[i] = u(rng);
  return v;
}

template <class S>
Tensor<S> random_tensor(const std::vector<Index>& dims, uint64_t seed) {
  Tensor<S> t(dims);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (Index i = 0; i < t.size(); ++i) t.data[i] = static_cast<S>(u(rng));
  return t;
}

// A critic whose score is the plain mean of its input; its gradient w.r.t.
// the input is exactly 1/n per voxel, making the penalty analytic.
struct MeanCritic {
  template <class S>
  Var<S> score(const Var<S>& v) const {
    return ad::mean_all(v);
  }
};

// A critic that ignores its input entirely: D == 0 everywhere.
struct ZeroCritic {
  template <class S>
  Var<S> score(const Var<S>& v) const {
    return ad::mean_all(ad::mul_scalar(v, S(0)));
  }
};

}  // namespace

TEST_CASE("mse loss reproduces a uniform offset analytically") {
  auto ref = random_volume({8, 8, 8}, 1);
  Volume3<float> pred = ref;
  pred.data += 0.1f;
  CHECK(mse_loss(pred, ref) == doctest::Approx(0.01).epsilon(1e-5));
  CHECK(mse_loss(ref, ref) == 0.0);
  Volume3<float> other({8, 8, 7}, ref.spacing, ref.origin);
  CHECK_THROWS_AS(mse_loss(pred, other), GeometryError);
}

TEST_CASE("low-pass loss of a DC offset equals the offset squared") {
  auto ref = random_volume({10, 9, 8}, 2);
  Volume3<float> pred = ref;
  const double offset = 0.3;
  pred.data += static_cast<float>(offset);
  GaussianFilterSpec spec;  // sigma = 5
  CHECK(lowpass_loss(pred, ref, spec) == doctest::Approx(offset * offset).epsilon(1e-6));
}

TEST_CASE("sigma-5 filter passes DC and kills the Nyquist checkerboard") {
  GaussianFilterSpec spec;
  REQUIRE(spec.sigma == 5.0);
  REQUIRE(spec.effective_radius() == 15);
  const auto kernel = gaussian_kernel_1d<double>(spec.sigma, spec.effective_radius());

  double dc = 0.0, nyquist = 0.0;
  for (size_t i = 0; i < kernel.size(); ++i) {
    dc += kernel[i];
    nyquist += (i % 2 == 0 ? kernel[i] : -kernel[i]);
  }
  CHECK(std::abs(dc - 1.0) < 1e-6);
  // One axis already attenuates the checkerboard amplitude to ~0; energy
  // (amplitude squared, cubed across the separable axes) drops by >= 98%.
  const double energy_gain = std::pow(nyquist * nyquist, 3.0);
  CHECK(energy_gain <= 0.02);

  Volume3<float> board({24, 24, 24}, Eigen::Vector3d(1, 1, 1), Eigen::Vector3d::Zero());
  for (Index i = 0; i < 24; ++i)
    for (Index j = 0; j < 24; ++j)
      for (Index k = 0; k < 24; ++k) board.at(i, j, k) = ((i + j + k) % 2 == 0) ? 1.f : -1.f;
  auto filtered = gaussian_lowpass(board, spec);
  const double in_energy = board.data.square().sum();
  const double out_energy = filtered.data.square().sum();
  CHECK(out_energy / in_energy <= 0.02);

  Volume3<float> flat = board;
  flat.data.setConstant(0.73f);
  auto same = gaussian_lowpass(flat, spec);
  CHECK((same.data - 0.73f).abs().maxCoeff() < 1e-6);
}

TEST_CASE("graph low-pass matches the volume implementation") {
  auto v = random_volume({9, 8, 7}, 3);
  GaussianFilterSpec spec;
  spec.sigma = 2.0;
  auto direct = gaussian_lowpass(v, spec);
  auto graph = nn::lowpass_op(ad::constant(ad::Tensor<float>::from_volume(v)), spec);
  REQUIRE(graph->value.spatial_shape() == direct.shape);
  // Same separable filter, different inner loops (scalar vs GEMM); agreement
  // is to float accumulation order, not bitwise.
  for (Index i = 0; i < direct.size(); ++i)
    REQUIRE(graph->value.data[i] == doctest::Approx(direct.data[i]).epsilon(2e-6));
}

TEST_CASE("critic loss with a mean critic and real == fake is analytic") {
  // Gradient of mean over 64 voxels has norm 1/8, so the penalty is
  // lambda * (1/8 - 1)^2 = 10 * 0.765625 and the score gap vanishes.
  Tensor<double> t({1, 4, 4, 4});
  std::mt19937_64 seed_rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (Index i = 0; i < t.size(); ++i) t.data[i] = u(seed_rng);

  MeanCritic d;
  std::mt19937_64 rng(5);
  auto loss = nn::critic_loss<double>(d, ad::constant(t), ad::constant(t), 10.0, rng);
  CHECK(loss->value.scalar() == doctest::Approx(7.65625).epsilon(1e-9));

  // Same value in single precision, to a looser tolerance.
  Tensor<float> tf({1, 4, 4, 4});
  for (Index i = 0; i < tf.size(); ++i) tf.data[i] = static_cast<float>(t.data[i]);
  std::mt19937_64 rng2(6);
  auto lossf = nn::critic_loss<float>(d, ad::constant(tf), ad::constant(tf), 10.0, rng2);
  CHECK(std::abs(lossf->value.scalar() - 7.65625) < 1e-5);
}

TEST_CASE("critic loss handles a zero-gradient critic via the norm epsilon") {
  Tensor<double> t({1, 4, 4, 4});
  t.data.setConstant(0.5);
  ZeroCritic d;
  std::mt19937_64 rng(7);
  auto loss = nn::critic_loss<double>(d, ad::constant(t), ad::constant(t), 10.0, rng);
  // norm = sqrt(1e-12) = 1e-6, loss = 10 * (1e-6 - 1)^2
  CHECK(loss->value.scalar() == doctest::Approx(10.0 * std::pow(1e-6 - 1.0, 2)).epsilon(1e-10));
}

TEST_CASE("critic loss gradients pass finite differences through the penalty") {
  DiscriminatorSpec spec;
  spec.base_width = 2;
  spec.strides = {2, 1};
  nn::Discriminator<double> d(spec, 51);
  auto real = random_tensor<double>({1, 6, 6, 6}, 52);
  auto fake = random_tensor<double>({1, 6, 6, 6}, 53);

  auto loss_at = [&](const Tensor<double>& f, uint64_t rng_seed) {
    std::mt19937_64 rng(rng_seed);
    return nn::critic_loss<double>(d, ad::constant(real), ad::leaf(f, true), 10.0, rng);
  };

  // Gradient w.r.t. critic parameters (the trained quantity).
  std::mt19937_64 rng(54);
  auto fake_var = ad::constant(fake);
  std::mt19937_64 loss_rng(99);
  auto loss = nn::critic_loss<double>(d, ad::constant(real), fake_var, 10.0, loss_rng);
  auto params = d.params().vars();
  auto grads = ad::gradient(loss, params);

  const double eps = 1e-5;
  int checked = 0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& value = params[pi]->value;
    std::uniform_int_distribution<Index> pick(0, value.size() - 1);
    const Index i = pick(rng);
    const double orig = value.data[i];
    auto eval = [&](double delta) {
      value.data[i] = orig + delta;
      std::mt19937_64 r(99);  // same epsilon draw as the analytic pass
      double out =
          nn::critic_loss<double>(d, ad::constant(real), ad::constant(fake), 10.0, r)->value.scalar();
      value.data[i] = orig;
      return out;
    };
    const double fd = (eval(eps) - eval(-eps)) / (2 * eps);
    const double an = grads[pi]->value.data[i];
    const double scale = std::max({std::abs(fd), std::abs(an), 1e-8});
    INFO("param ", d.params().items[pi].first);
    REQUIRE(std::abs(fd - an) / scale < 1e-4);
    ++checked;
  }
  CHECK(checked >= 5);
  (void)loss_at;
}

TEST_CASE("generator objective composes its three terms") {
  DiscriminatorSpec dspec;
  dspec.base_width = 2;
  dspec.strides = {2, 1};
  nn::Discriminator<float> d(dspec, 61);
  auto gen = ad::constant(random_tensor<float>({1, 8, 8, 8}, 62));
  auto target = ad::constant(random_tensor<float>({1, 8, 8, 8}, 63));
  LossWeights w;
  w.alpha = 7.0;
  w.beta = 3.0;
  GaussianFilterSpec filter;
  filter.sigma = 1.5;

  auto terms = nn::total_generator_loss(d, gen, target, w, filter);
  const double composed = terms.adv->value.scalar() + w.alpha * terms.mse->value.scalar() +
                          w.beta * terms.lowpass->value.scalar();
  CHECK(terms.total->value.scalar() == doctest::Approx(composed).epsilon(1e-6));
  CHECK(terms.mse->value.scalar() ==
        doctest::Approx(nn::mse_op(gen, target)->value.scalar()).epsilon(1e-7));
}

TEST_CASE("loss configs validate their domains") {
  LossWeights w;
  w.alpha = -1;
  CHECK_THROWS_AS(w.validate(), ConfigError);
  w = LossWeights{};
  w.d_steps_per_g = 0;
  CHECK_THROWS_AS(w.validate(), ConfigError);
  GaussianFilterSpec f;
  f.sigma = 0;
  CHECK_THROWS_AS(f.validate(), ConfigError);
  CHECK(GaussianFilterSpec{.sigma = 2.0, .radius = 4}.effective_radius() == 4);
  CHECK(GaussianFilterSpec{.sigma = 2.0}.effective_radius() == 6);
}
