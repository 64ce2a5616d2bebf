#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "aslsr/autodiff.hpp"

namespace aslsr {

struct GeneratorSpec {
  Index in_channels = 2;  // image channel + anatomical prior channel
  Index out_channels = 1;
  Index levels = 3;       // U-Net resolution levels
  Index base_width = 16;
  double leaky_slope = 0.2;
  double norm_eps = 1e-5;
  bool residual = true;       // add the image input back onto the output

  void validate() const {
    if (in_channels < 2) throw ConfigError("generator: in_channels must be >= 2");
    if (out_channels != 1) throw ConfigError("generator: out_channels must be 1");
    if (levels < 1 || levels > 5) throw ConfigError("generator: levels must be in [1,5]");
    if (base_width < 1) throw ConfigError("generator: base_width must be positive");
  }
};

struct DiscriminatorSpec {
  Index in_channels = 1;
  Index base_width = 16;
  std::vector<Index> strides = {2, 2, 1, 1};
  double leaky_slope = 0.2;
  ad::PadMode pad_mode = ad::PadMode::replicate;

  void validate() const {
    if (in_channels < 1) throw ConfigError("discriminator: in_channels must be positive");
    if (base_width < 1) throw ConfigError("discriminator: base_width must be positive");
    if (strides.empty()) throw ConfigError("discriminator: needs at least one block");
    for (auto s : strides)
      if (s != 1 && s != 2) throw ConfigError("discriminator: strides must be 1 or 2");
  }
};

namespace nn {

using ad::PadMode;
using ad::Stride3;
using ad::Tensor;
using ad::Var;

/// Named trainable leaf variables, in a stable order.
template <class S>
struct ParamSet {
  std::vector<std::pair<std::string, Var<S>>> items;

  Var<S> add(const std::string& name, Tensor<S> init) {
    items.emplace_back(name, ad::leaf(std::move(init), true));
    return items.back().second;
  }
  std::vector<Var<S>> vars() const {
    std::vector<Var<S>> v;
    v.reserve(items.size());
    for (const auto& it : items) v.push_back(it.second);
    return v;
  }
  const Var<S>* find(const std::string& name) const {
    for (const auto& it : items)
      if (it.first == name) return &it.second;
    return nullptr;
  }
  void copy_values_from(const ParamSet& other) {
    if (other.items.size() != items.size())
      throw ConfigError("parameter-set mismatch: " + std::to_string(items.size()) + " vs " +
                        std::to_string(other.items.size()) + " tensors");
    for (size_t i = 0; i < items.size(); ++i) {
      if (items[i].first != other.items[i].first ||
          items[i].second->value.dims != other.items[i].second->value.dims)
        throw ConfigError("parameter mismatch at '" + items[i].first + "'");
      items[i].second->value.data = other.items[i].second->value.data;
    }
  }
};

namespace detail {

template <class S>
Tensor<S> he_normal(std::mt19937_64& rng, std::vector<Index> dims, double slope) {
  Tensor<S> t(std::move(dims));
  const double fan_in = static_cast<double>(t.dims[1] * t.dims[2] * t.dims[3] * t.dims[4]);
  const double std = std::sqrt(2.0 / ((1.0 + slope * slope) * fan_in));
  std::normal_distribution<double> dist(0.0, std);
  for (Index i = 0; i < t.size(); ++i) t.data[i] = S(dist(rng));
  return t;
}

}  // namespace detail

/// 3D convolution layer with symmetric same padding for odd kernels.
template <class S>
struct ConvLayer {
  Var<S> w, b;
  Stride3 stride{1, 1, 1};
  PadMode pad_mode = PadMode::replicate;

  Var<S> operator()(const Var<S>& x) const {
    const Index p = (w->value.dims[2] - 1) / 2;
    Var<S> h = x;
    if (p > 0) h = ad::pad3(h, {p, p, p}, {p, p, p}, pad_mode);
    return ad::add_bias(ad::conv3d(h, w, stride), b);
  }
};

/// Per-channel instance normalization (no affine parameters), composed from
/// differentiable primitives so it survives double backward.
template <class S>
Var<S> instance_norm(const Var<S>& x, double eps) {
  const Index V = x->value.spatial_size();
  auto mu = ad::mul_scalar(ad::spatial_sum(x), S(1) / S(V));
  auto xc = ad::sub(x, ad::broadcast_spatial(mu, x->value.dims));
  auto var = ad::mul_scalar(ad::spatial_sum(ad::mul(xc, xc)), S(1) / S(V));
  auto inv = ad::pow_scalar(ad::add_scalar(var, S(eps)), -0.5);
  return ad::mul(xc, ad::broadcast_spatial(inv, x->value.dims));
}

/// Conditional U-Net generator. Takes the image channel and the anatomical
/// prior on the same grid, and returns one output channel on that grid. The
/// final convolution is zero-initialized, so a residual generator is exactly
/// the identity on its image channel at initialization.
template <class S>
class Generator {
 public:
  explicit Generator(GeneratorSpec spec = {}, std::uint64_t seed = 0) : spec_(spec) {
    spec_.validate();
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
    const Index L = spec_.levels;
    auto width = [&](Index l) { return spec_.base_width << l; };

    for (Index l = 0; l < L; ++l) {
      const Index cin = l == 0 ? spec_.in_channels : width(l - 1);
      const Index cw = width(l);
      const Stride3 st = l == 0 ? Stride3{1, 1, 1} : Stride3{2, 2, 2};
      enc_.push_back(block(rng, "enc" + std::to_string(l), cin, cw, st));
    }
    for (Index l = L - 2; l >= 0; --l) {
      const Index cw = width(l);
      // input: upsampled deeper features (2w) concatenated with the skip (w)
      dec_.push_back(block(rng, "dec" + std::to_string(l), width(l + 1) + cw, cw, {1, 1, 1}));
    }
    head_.w = params_.add("head.w", Tensor<S>::zeros({spec_.out_channels, width(0), 3, 3, 3}));
    head_.b = params_.add("head.b", Tensor<S>::zeros({spec_.out_channels, 1, 1, 1}));
  }

  const GeneratorSpec& spec() const { return spec_; }
  ParamSet<S>& params() { return params_; }
  const ParamSet<S>& params() const { return params_; }

  /// Architecture signature used to validate parameter transfer between
  /// scales and checkpoint loads. The residual flag does not change the
  /// parameterization, so it is excluded.
  std::string signature() const {
    return "g:in" + std::to_string(spec_.in_channels) + ":out" +
           std::to_string(spec_.out_channels) + ":l" + std::to_string(spec_.levels) + ":w" +
           std::to_string(spec_.base_width);
  }

  Index min_input_extent() const { return 4; }

  void inherit_params(const Generator& other) {
    if (signature() != other.signature())
      throw ConfigError("generator architecture mismatch: " + signature() + " vs " +
                        other.signature());
    params_.copy_values_from(other.params_);
  }

  /// x: image channel(s) (in_channels-1, X, Y, Z); a: prior (1, X, Y, Z).
  Var<S> forward(const Var<S>& x, const Var<S>& a) const {
    if (x->value.spatial_shape() != a->value.spatial_shape())
      throw GeometryError("generator: image " + x->value.shape_str() + " and prior " +
                          a->value.shape_str() + " grids differ");
    if (x->value.c() + a->value.c() != spec_.in_channels)
      throw GeometryError("generator: expected " + std::to_string(spec_.in_channels) +
                          " input channels");
    const Shape3 in_shape = x->value.spatial_shape();
    for (int ax = 0; ax < 3; ++ax)
      if (in_shape[ax] < min_input_extent())
        throw GeometryError("generator: input extent " + shape_str(in_shape) +
                            " below minimum " + std::to_string(min_input_extent()));

    Var<S> h = ad::concat_c(x, a);
    // Pad so every level divides evenly under stride-2 downsampling.
    const Index mult = Index(1) << (spec_.levels - 1);
    Shape3 pad_hi{};
    bool padded = false;
    for (int ax = 0; ax < 3; ++ax) {
      pad_hi[ax] = (mult - in_shape[ax] % mult) % mult;
      padded = padded || pad_hi[ax] > 0;
    }
    if (padded) h = ad::pad3(h, {0, 0, 0}, pad_hi, PadMode::replicate);

    std::vector<Var<S>> skips;
    for (Index l = 0; l < spec_.levels; ++l) {
      h = run_block(enc_[static_cast<size_t>(l)], h, /*norm=*/true);
      if (l + 1 < spec_.levels) skips.push_back(h);
    }
    for (size_t d = 0; d < dec_.size(); ++d) {
      const Var<S>& skip = skips[skips.size() - 1 - d];
      h = ad::resize3(h, skip->value.spatial_shape());
      h = ad::concat_c(h, skip);
      h = run_block(dec_[d], h, /*norm=*/false);
    }
    h = head_(h);
    if (padded) h = ad::crop3(h, {0, 0, 0}, pad_hi);
    if (spec_.residual) h = ad::add(h, x);
    return h;
  }

  /// Value-only forward on volumes (no graph). The prior rides along on x's
  /// grid; both must already be on the same grid.
  Volume3<S> apply(const Volume3<S>& x, const Volume3<S>& a) const {
    ad::NoGradGuard ng;
    auto out = forward(ad::constant(Tensor<S>::from_volume(x)),
                       ad::constant(Tensor<S>::from_volume(a)));
    return out->value.to_volume(x.spacing, x.origin);
  }

 private:
  struct Block {
    ConvLayer<S> c0, c1;
  };

  Block block(std::mt19937_64& rng, const std::string& name, Index cin, Index cout,
              Stride3 st) {
    Block b;
    b.c0.w = params_.add(name + ".conv0.w",
                         detail::he_normal<S>(rng, {cout, cin, 3, 3, 3}, spec_.leaky_slope));
    b.c0.b = params_.add(name + ".conv0.b", Tensor<S>::zeros({cout, 1, 1, 1}));
    b.c0.stride = st;
    b.c1.w = params_.add(name + ".conv1.w",
                         detail::he_normal<S>(rng, {cout, cout, 3, 3, 3}, spec_.leaky_slope));
    b.c1.b = params_.add(name + ".conv1.b", Tensor<S>::zeros({cout, 1, 1, 1}));
    return b;
  }

  Var<S> run_block(const Block& b, const Var<S>& in, bool norm) const {
    auto act = [&](const Var<S>& v) {
      Var<S> h = norm ? instance_norm(v, spec_.norm_eps) : v;
      return ad::leaky_relu(h, S(spec_.leaky_slope));
    };
    return act(b.c1(act(b.c0(in))));
  }

  GeneratorSpec spec_;
  ParamSet<S> params_;
  std::vector<Block> enc_;
  std::vector<Block> dec_;
  ConvLayer<S> head_;
};

/// Markovian patch critic: a stack of stride-1/2 convolutions producing an
/// unbounded per-patch score map; no normalization layers (the gradient
/// penalty replaces them).
template <class S>
class Discriminator {
 public:
  explicit Discriminator(DiscriminatorSpec spec = {}, std::uint64_t seed = 0) : spec_(spec) {
    spec_.validate();
    std::mt19937_64 rng(seed ^ 0x2545f4914f6cdd1dull);
    Index cin = spec_.in_channels;
    for (size_t b = 0; b < spec_.strides.size(); ++b) {
      const Index cout = spec_.base_width << std::min<size_t>(b, 2);
      ConvLayer<S> layer;
      layer.w = params_.add("blk" + std::to_string(b) + ".w",
                            detail::he_normal<S>(rng, {cout, cin, 3, 3, 3}, spec_.leaky_slope));
      layer.b = params_.add("blk" + std::to_string(b) + ".b", Tensor<S>::zeros({cout, 1, 1, 1}));
      layer.stride = {spec_.strides[b], spec_.strides[b], spec_.strides[b]};
      layer.pad_mode = spec_.pad_mode;
      layers_.push_back(layer);
      cin = cout;
    }
    head_.w = params_.add("head.w", detail::he_normal<S>(rng, {1, cin, 1, 1, 1}, 1.0));
    head_.b = params_.add("head.b", Tensor<S>::zeros({1, 1, 1, 1}));
  }

  const DiscriminatorSpec& spec() const { return spec_; }
  ParamSet<S>& params() { return params_; }
  const ParamSet<S>& params() const { return params_; }

  std::string signature() const {
    std::string s = "d:in" + std::to_string(spec_.in_channels) + ":w" +
                    std::to_string(spec_.base_width) + ":s";
    for (auto v : spec_.strides) s += std::to_string(v);
    return s;
  }

  void inherit_params(const Discriminator& other) {
    if (signature() != other.signature())
      throw ConfigError("discriminator architecture mismatch: " + signature() + " vs " +
                        other.signature());
    params_.copy_values_from(other.params_);
  }

  /// Theoretical receptive field of one score-map element.
  Index receptive_field() const {
    Index rf = 1, jump = 1;
    for (auto s : spec_.strides) {
      rf += 2 * jump;  // kernel 3
      jump *= s;
    }
    return rf;
  }

  /// Smallest input extent the stride chain supports.
  Index min_input_extent() const {
    Index p = 1;
    for (auto s : spec_.strides) p *= s;
    return p;
  }

  /// Per-patch score map (1, X', Y', Z').
  Var<S> forward(const Var<S>& v) const {
    if (v->value.c() != spec_.in_channels)
      throw GeometryError("discriminator: expected " + std::to_string(spec_.in_channels) +
                          " channel(s), got " + v->value.shape_str());
    for (int ax = 0; ax < 3; ++ax)
      if (v->value.spatial_shape()[ax] < min_input_extent())
        throw GeometryError("discriminator: input extent " +
                            shape_str(v->value.spatial_shape()) + " below minimum " +
                            std::to_string(min_input_extent()));
    Var<S> h = v;
    for (const auto& layer : layers_) h = ad::leaky_relu(layer(h), S(spec_.leaky_slope));
    return head_(h);
  }

  /// Mean score over patches.
  Var<S> score(const Var<S>& v) const { return ad::mean_all(forward(v)); }

 private:
  DiscriminatorSpec spec_;
  ParamSet<S> params_;
  std::vector<ConvLayer<S>> layers_;
  ConvLayer<S> head_;
};

}  // namespace nn
}  // namespace aslsr
