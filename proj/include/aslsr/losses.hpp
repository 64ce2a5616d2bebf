#pragma once

#include <cmath>
#include <random>

#include "aslsr/autodiff.hpp"
#include "aslsr/resample.hpp"
#include "aslsr/volume.hpp"

namespace aslsr {

struct LossWeights {
  double alpha = 10.0;      // reconstruction (squared-error) weight
  double beta = 10.0;       // low-pass weight
  double lambda_gp = 10.0;  // gradient-penalty coefficient
  int d_steps_per_g = 1;

  void validate() const {
    if (!(alpha >= 0) || !std::isfinite(alpha)) throw ConfigError("loss: alpha must be finite and >= 0");
    if (!(beta >= 0) || !std::isfinite(beta)) throw ConfigError("loss: beta must be finite and >= 0");
    if (!(lambda_gp >= 0) || !std::isfinite(lambda_gp))
      throw ConfigError("loss: lambda_gp must be finite and >= 0");
    if (d_steps_per_g < 1) throw ConfigError("loss: d_steps_per_g must be >= 1");
  }
};

struct GaussianFilterSpec {
  double sigma = 5.0;  // voxels at the current scale
  int radius = -1;     // taps per side; < 0 means ceil(3*sigma)

  int effective_radius() const {
    return radius >= 0 ? radius : static_cast<int>(std::ceil(3.0 * sigma));
  }
  void validate() const {
    if (!(sigma > 0)) throw ConfigError("low-pass filter: sigma must be > 0");
  }
};

// ---- value-level (volume) API ----------------------------------------------

template <class S>
Volume3<S> gaussian_lowpass(const Volume3<S>& v, const GaussianFilterSpec& spec) {
  spec.validate();
  const auto kernel = gaussian_kernel_1d<S>(spec.sigma, spec.effective_radius());
  Volume3<S> out = v;
  typename Volume3<S>::Array tmp(v.size());
  for (int ax = 0; ax < 3; ++ax) {
    detail::blur_axis(out.data.data(), v.shape, ax, kernel, tmp.data());
    out.data.swap(tmp);
  }
  return out;
}

template <class S>
double mse_loss(const Volume3<S>& gen, const Volume3<S>& target) {
  if (!(gen.shape == target.shape))
    throw GeometryError("mse: shape mismatch " + shape_str(gen.shape) + " vs " +
                        shape_str(target.shape));
  double acc = 0;
  for (Index i = 0; i < gen.size(); ++i) {
    const double d = double(gen.data[i]) - double(target.data[i]);
    acc += d * d;
  }
  return acc / double(gen.size());
}

template <class S>
double lowpass_loss(const Volume3<S>& gen, const Volume3<S>& target,
                    const GaussianFilterSpec& spec) {
  return mse_loss(gaussian_lowpass(gen, spec), gaussian_lowpass(target, spec));
}

// ---- graph API ---------------------------------------------------------------

namespace nn {

/// Mean squared difference as a graph scalar.
template <class S>
ad::Var<S> mse_op(const ad::Var<S>& a, const ad::Var<S>& b) {
  auto d = ad::sub(a, b);
  return ad::mean_all(ad::mul(d, d));
}

/// Separable Gaussian low-pass over a single-channel activation, built from
/// replicate padding + fixed-kernel convolutions so it is differentiable to
/// any order. Matches gaussian_lowpass() on volumes.
template <class S>
ad::Var<S> lowpass_op(const ad::Var<S>& x, const GaussianFilterSpec& spec) {
  spec.validate();
  if (x->value.c() != 1) throw GeometryError("lowpass: expected a single-channel activation");
  const auto kernel = gaussian_kernel_1d<S>(spec.sigma, spec.effective_radius());
  const Index k = static_cast<Index>(kernel.size());
  const Index r = (k - 1) / 2;
  ad::Var<S> h = x;
  for (int ax = 0; ax < 3; ++ax) {
    std::vector<Index> wdims{1, 1, 1, 1, 1};
    wdims[static_cast<size_t>(2 + ax)] = k;
    ad::Tensor<S> w(wdims);
    for (Index i = 0; i < k; ++i) w.data[i] = kernel[static_cast<size_t>(i)];
    Shape3 lo{0, 0, 0}, hi{0, 0, 0};
    lo[ax] = hi[ax] = r;
    h = ad::conv3d(ad::pad3(h, lo, hi, ad::PadMode::replicate), ad::constant(std::move(w)),
                   {1, 1, 1});
  }
  return h;
}

template <class S>
ad::Var<S> lowpass_loss_op(const ad::Var<S>& gen, const ad::Var<S>& target,
                           const GaussianFilterSpec& spec) {
  return mse_op(lowpass_op(gen, spec), lowpass_op(target, spec));
}

/// Critic objective: mean score gap plus gradient penalty on one
/// real/fake interpolate (single-image training: the whole volume is the
/// sample). fake must already be detached.
template <class S, class Critic>
ad::Var<S> critic_loss(const Critic& D, const ad::Var<S>& real, const ad::Var<S>& fake,
                       double lambda_gp, std::mt19937_64& rng) {
  ad::detail::check_same_shape(real->value, fake->value, "critic_loss");
  auto gap = ad::sub(D.score(fake), D.score(real));

  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const S e = S(uni(rng));
  ad::Tensor<S> mix(real->value.dims);
  mix.data = e * real->value.data + (S(1) - e) * fake->value.data;
  auto xhat = ad::leaf(std::move(mix), true);
  auto g = ad::gradient(D.score(xhat), {xhat}, /*create_graph=*/true)[0];
  auto norm = ad::pow_scalar(ad::add_scalar(ad::sum_all(ad::mul(g, g)), S(1e-12)), 0.5);
  auto dev = ad::add_scalar(norm, S(-1));
  return ad::add(gap, ad::mul_scalar(ad::mul(dev, dev), S(lambda_gp)));
}

/// Generator's adversarial term: -mean critic score of the attached fake.
template <class S, class Critic>
ad::Var<S> generator_adv_loss(const Critic& D, const ad::Var<S>& fake) {
  return ad::neg(D.score(fake));
}

template <class S>
struct GenLossTerms {
  ad::Var<S> total, adv, mse, lowpass;
};

/// adv + alpha * MSE + beta * low-pass MSE against the scale label.
template <class S, class Critic>
GenLossTerms<S> total_generator_loss(const Critic& D, const ad::Var<S>& gen,
                                     const ad::Var<S>& target, const LossWeights& w,
                                     const GaussianFilterSpec& filter) {
  w.validate();
  ad::detail::check_same_shape(gen->value, target->value, "generator_loss");
  GenLossTerms<S> t;
  t.adv = generator_adv_loss(D, gen);
  t.mse = mse_op(gen, target);
  t.lowpass = lowpass_loss_op(gen, target, filter);
  t.total = ad::add(t.adv, ad::add(ad::mul_scalar(t.mse, S(w.alpha)),
                                   ad::mul_scalar(t.lowpass, S(w.beta))));
  return t;
}

}  // namespace nn
}  // namespace aslsr
