#pragma once

#include <Eigen/Core>

#include <numeric>
#include <string>
#include <vector>

#include "aslsr/volume.hpp"

namespace aslsr::ad {

/// Dense n-d value for the differentiable pipeline. Activations are 4D
/// (channels, x, y, z) with z fastest and channel outermost; convolution
/// weights are 5D (out, in, kx, ky, kz); per-channel affines are (c,1,1,1);
/// scalars are {1}.
template <class S>
struct Tensor {
  using Array = Eigen::Array<S, Eigen::Dynamic, 1>;

  std::vector<Index> dims;
  Array data;

  Tensor() = default;
  explicit Tensor(std::vector<Index> d) : dims(std::move(d)), data(count(dims)) {}

  static Index count(const std::vector<Index>& d) {
    return std::accumulate(d.begin(), d.end(), Index(1), std::multiplies<>());
  }

  Index size() const { return data.size(); }
  bool is_scalar() const { return data.size() == 1; }
  S scalar() const { return data[0]; }

  // 4D activation accessors.
  Index c() const { return dims.at(0); }
  Index x() const { return dims.at(1); }
  Index y() const { return dims.at(2); }
  Index z() const { return dims.at(3); }
  Index spatial_size() const { return x() * y() * z(); }
  Shape3 spatial_shape() const { return {x(), y(), z()}; }

  static Tensor zeros(std::vector<Index> d) {
    Tensor t(std::move(d));
    t.data.setZero();
    return t;
  }
  static Tensor constant_full(std::vector<Index> d, S v) {
    Tensor t(std::move(d));
    t.data.setConstant(v);
    return t;
  }
  static Tensor scalar_value(S v) {
    Tensor t({Index(1)});
    t.data[0] = v;
    return t;
  }

  static Tensor from_volume(const Volume3<S>& v) {
    Tensor t({Index(1), v.shape[0], v.shape[1], v.shape[2]});
    t.data = v.data;
    return t;
  }

  Volume3<S> to_volume(const Eigen::Vector3d& spacing = {1, 1, 1},
                       const Eigen::Vector3d& origin = {0, 0, 0}) const {
    if (dims.size() != 4 || c() != 1)
      throw GeometryError("to_volume: tensor is not a single-channel 4D map");
    Volume3<S> v({x(), y(), z()}, spacing, origin);
    v.data = data;
    return v;
  }

  bool same_shape(const Tensor& o) const { return dims == o.dims; }

  std::string shape_str() const {
    std::string s = "(";
    for (size_t i = 0; i < dims.size(); ++i)
      s += (i ? "," : "") + std::to_string(dims[i]);
    return s + ")";
  }
};

template <class T, class S>
Tensor<T> cast_tensor(const Tensor<S>& t) {
  Tensor<T> out;
  out.dims = t.dims;
  out.data = t.data.template cast<T>();
  return out;
}

}  // namespace aslsr::ad
