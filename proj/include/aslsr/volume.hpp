#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <utility>

#include "aslsr/errors.hpp"

namespace aslsr {

using Index = Eigen::Index;
using Shape3 = std::array<Index, 3>;

inline Index shape_size(const Shape3& s) { return s[0] * s[1] * s[2]; }

inline bool operator==(const Shape3& a, const Shape3& b) {
  return a[0] == b[0] && a[1] == b[1] && a[2] == b[2];
}

inline std::string shape_str(const Shape3& s) {
  return "(" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]) + ")";
}

/// A dense 3D scalar grid with voxel spacing (mm) and origin (mm).
/// Data is stored flat with z fastest: index(i,j,k) = (i*ny + j)*nz + k.
/// Values are immutable by convention once a volume leaves the function that
/// built it; all pipeline operations take volumes by const reference and
/// return fresh ones.
template <class S>
struct Volume3 {
  using Array = Eigen::Array<S, Eigen::Dynamic, 1>;

  Shape3 shape{0, 0, 0};
  Eigen::Vector3d spacing{1.0, 1.0, 1.0};
  Eigen::Vector3d origin{0.0, 0.0, 0.0};
  Array data;

  Volume3() = default;
  Volume3(Shape3 sh, Eigen::Vector3d sp, Eigen::Vector3d org)
      : shape(sh), spacing(std::move(sp)), origin(std::move(org)), data(shape_size(sh)) {
    check_geometry();
  }

  Index size() const { return shape_size(shape); }
  Index index(Index i, Index j, Index k) const { return (i * shape[1] + j) * shape[2] + k; }
  S& at(Index i, Index j, Index k) { return data[index(i, j, k)]; }
  S at(Index i, Index j, Index k) const { return data[index(i, j, k)]; }

  static Volume3 constant(Shape3 sh, S value, Eigen::Vector3d sp = {1, 1, 1},
                          Eigen::Vector3d org = {0, 0, 0}) {
    Volume3 v(sh, std::move(sp), std::move(org));
    v.data.setConstant(value);
    return v;
  }

  /// Fill from f(i,j,k).
  template <class F>
  static Volume3 generate(Shape3 sh, F&& f, Eigen::Vector3d sp = {1, 1, 1},
                          Eigen::Vector3d org = {0, 0, 0}) {
    Volume3 v(sh, std::move(sp), std::move(org));
    for (Index i = 0; i < sh[0]; ++i)
      for (Index j = 0; j < sh[1]; ++j)
        for (Index k = 0; k < sh[2]; ++k) v.at(i, j, k) = static_cast<S>(f(i, j, k));
    return v;
  }

  void check_geometry() const {
    for (int ax = 0; ax < 3; ++ax) {
      if (shape[ax] < 1)
        throw GeometryError("volume shape must be positive, got " + shape_str(shape));
      if (!(spacing[ax] > 0.0))
        throw GeometryError("voxel spacing must be > 0 on axis " + std::to_string(ax));
    }
  }

  bool all_finite() const { return data.isFinite().all(); }

  void require_finite(const std::string& what) const {
    if (!all_finite()) throw NumericError(what + ": volume contains NaN/Inf");
  }
};

using Volume3f = Volume3<float>;
using Volume3d = Volume3<double>;

template <class T, class S>
Volume3<T> cast_volume(const Volume3<S>& v) {
  Volume3<T> out(v.shape, v.spacing, v.origin);
  out.data = v.data.template cast<T>();
  return out;
}

/// Intensity normalization mode. min_max_to_unit maps [min,max] onto [-1,1];
/// zscore maps to zero mean, unit variance.
enum class NormMode { min_max_to_unit, zscore };

/// Affine intensity transform: normalized = (v - shift) / scale.
template <class S>
struct NormParams {
  S shift = S(0);
  S scale = S(1);
  NormMode mode = NormMode::min_max_to_unit;
};

template <class S>
std::pair<Volume3<S>, NormParams<S>> normalize(const Volume3<S>& v,
                                               NormMode mode = NormMode::min_max_to_unit) {
  v.require_finite("normalize");
  NormParams<S> p;
  p.mode = mode;
  if (mode == NormMode::min_max_to_unit) {
    const S lo = v.data.minCoeff();
    const S hi = v.data.maxCoeff();
    if (hi > lo) {
      p.shift = (hi + lo) / S(2);
      p.scale = (hi - lo) / S(2);
    } else {
      // Constant volume: map to all zeros with unit scale.
      p.shift = lo;
      p.scale = S(1);
    }
  } else {
    const S mean = v.data.mean();
    const S var = (v.data - mean).square().mean();
    p.shift = mean;
    p.scale = var > S(0) ? std::sqrt(var) : S(1);
  }
  Volume3<S> out(v.shape, v.spacing, v.origin);
  out.data = (v.data - p.shift) / p.scale;
  return {std::move(out), p};
}

/// Apply an existing transform: (v - shift) / scale. Inverse of denormalize.
template <class S>
Volume3<S> apply_norm(const Volume3<S>& v, const NormParams<S>& p) {
  Volume3<S> out(v.shape, v.spacing, v.origin);
  out.data = (v.data - p.shift) / p.scale;
  return out;
}

template <class S>
Volume3<S> denormalize(const Volume3<S>& v, const NormParams<S>& p) {
  Volume3<S> out(v.shape, v.spacing, v.origin);
  out.data = v.data * p.scale + p.shift;
  return out;
}

}  // namespace aslsr
