#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "aslsr/volume.hpp"

namespace aslsr {

/// Interpolation kernels selectable for resampling. spline is Keys cubic
/// convolution (a = -1/2), which interpolates the samples and reproduces
/// polynomials up to degree two.
enum class ResampleMethod { nearest, linear, spline };

inline const char* to_string(ResampleMethod m) {
  switch (m) {
    case ResampleMethod::nearest: return "nearest";
    case ResampleMethod::linear: return "linear";
    case ResampleMethod::spline: return "spline";
  }
  return "?";
}

namespace detail {

// Keys cubic convolution kernel, a = -1/2.
template <class S>
S keys_weight(S s) {
  const S x = std::abs(s);
  if (x <= S(1)) return ((S(1.5) * x - S(2.5)) * x) * x + S(1);
  if (x < S(2)) return ((S(-0.5) * x + S(2.5)) * x - S(4)) * x + S(2);
  return S(0);
}

// Align-corners source coordinate for output index i: i*(n-1)/(m-1).
inline double source_coord(Index i, Index n, Index m) {
  if (m <= 1) return (static_cast<double>(n) - 1.0) / 2.0;
  return static_cast<double>(i) * (static_cast<double>(n - 1) / static_cast<double>(m - 1));
}

// Per-output-sample taps of one 1D resampling pass.
template <class S>
struct Tap {
  Index first;                 // index of the first source sample (already clamped)
  std::array<S, 4> w{};        // up to four weights
  int count = 0;
};

template <class S>
std::vector<Tap<S>> make_taps(Index n, Index m, ResampleMethod method) {
  std::vector<Tap<S>> taps(static_cast<size_t>(m));
  for (Index i = 0; i < m; ++i) {
    const double src = source_coord(i, n, m);
    Tap<S>& t = taps[static_cast<size_t>(i)];
    switch (method) {
      case ResampleMethod::nearest: {
        Index j = static_cast<Index>(std::lround(src));
        j = std::clamp(j, Index(0), n - 1);
        t.first = j;
        t.w[0] = S(1);
        t.count = 1;
        break;
      }
      case ResampleMethod::linear: {
        Index j0 = static_cast<Index>(std::floor(src));
        j0 = std::clamp(j0, Index(0), n - 1);
        const double f = src - static_cast<double>(j0);
        if (f == 0.0 || j0 == n - 1) {
          t.first = j0;
          t.w[0] = S(1);
          t.count = 1;
        } else {
          t.first = j0;
          t.w[0] = S(1.0 - f);
          t.w[1] = S(f);
          t.count = 2;
        }
        break;
      }
      case ResampleMethod::spline: {
        const Index j0 = static_cast<Index>(std::floor(src));
        const double f = src - static_cast<double>(j0);
        t.first = std::clamp(j0 - 1, Index(0), n - 1);
        t.count = 4;
        std::array<S, 4> raw{};
        for (int k = 0; k < 4; ++k) raw[k] = keys_weight<S>(S(f - (k - 1)));
        // Clamp out-of-range taps onto the border sample (replicate).
        std::array<S, 4> acc{};
        for (int k = 0; k < 4; ++k) {
          const Index j = std::clamp(j0 - 1 + k, Index(0), n - 1);
          acc[static_cast<size_t>(j - t.first)] += raw[k];
        }
        t.w = acc;
        break;
      }
    }
  }
  return taps;
}

// Resample one axis of a flat (nx,ny,nz) buffer; returns the new buffer.
template <class S>
void resample_axis(const S* in, Shape3 sh, int axis, Index m, ResampleMethod method, S* out) {
  const Index n = sh[axis];
  const auto taps = make_taps<S>(n, m, method);
  Shape3 osh = sh;
  osh[axis] = m;
  // Strides of the source / destination along each axis.
  const Index in_stride[3] = {sh[1] * sh[2], sh[2], 1};
  const Index out_stride[3] = {osh[1] * osh[2], osh[2], 1};
  const int a1 = axis == 0 ? 1 : 0;
  const int a2 = axis == 2 ? 1 : 2;
  for (Index i = 0; i < m; ++i) {
    const auto& t = taps[static_cast<size_t>(i)];
    for (Index p = 0; p < sh[a1]; ++p) {
      const S* src_line = in + p * in_stride[a1] + t.first * in_stride[axis];
      S* dst_line = out + p * out_stride[a1] + i * out_stride[axis];
      for (Index q = 0; q < sh[a2]; ++q) {
        S acc = S(0);
        const S* s = src_line + q * in_stride[a2];
        const Index limit = n - 1 - t.first;
        for (int k = 0; k < t.count; ++k) {
          const Index off = std::min<Index>(k, limit);
          acc += t.w[static_cast<size_t>(k)] * s[off * in_stride[axis]];
        }
        dst_line[q * out_stride[a2]] = acc;
      }
    }
  }
}

}  // namespace detail

/// Resample onto target_shape with align-corners sampling. Output spacing is
/// input spacing * (input_shape / target_shape) per axis, so physical extent
/// is preserved; origin is unchanged.
template <class S>
Volume3<S> resample(const Volume3<S>& v, Shape3 target_shape, ResampleMethod method) {
  for (int ax = 0; ax < 3; ++ax)
    if (target_shape[ax] < 1)
      throw GeometryError("resample: target shape must be >= 1, got " + shape_str(target_shape));
  Eigen::Vector3d sp = v.spacing;
  for (int ax = 0; ax < 3; ++ax)
    sp[ax] *= static_cast<double>(v.shape[ax]) / static_cast<double>(target_shape[ax]);
  Volume3<S> out(target_shape, sp, v.origin);

  Shape3 cur = v.shape;
  typename Volume3<S>::Array buf_a = v.data;
  typename Volume3<S>::Array buf_b;
  for (int ax = 0; ax < 3; ++ax) {
    if (cur[ax] == target_shape[ax] && method != ResampleMethod::nearest) {
      // Pass is identity for linear/spline when sizes match; skip it.
      continue;
    }
    Shape3 nxt = cur;
    nxt[ax] = target_shape[ax];
    buf_b.resize(shape_size(nxt));
    detail::resample_axis(buf_a.data(), cur, ax, target_shape[ax], method, buf_b.data());
    buf_a.swap(buf_b);
    cur = nxt;
  }
  out.data = std::move(buf_a);
  out.require_finite("resample");
  return out;
}

/// Normalized 1D Gaussian kernel; weights sum to one.
template <class S>
std::vector<S> gaussian_kernel_1d(double sigma, int radius) {
  if (!(sigma > 0.0)) throw ConfigError("gaussian kernel: sigma must be > 0");
  if (radius < 0) throw ConfigError("gaussian kernel: radius must be >= 0");
  std::vector<S> w(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int t = -radius; t <= radius; ++t) {
    const double g = std::exp(-0.5 * (t / sigma) * (t / sigma));
    w[static_cast<size_t>(t + radius)] = S(g);
    sum += g;
  }
  for (auto& x : w) x = S(x / sum);
  return w;
}

namespace detail {

// One separable blur pass with replicate (clamp) boundary.
template <class S>
void blur_axis(const S* in, Shape3 sh, int axis, const std::vector<S>& kernel, S* out) {
  const int radius = static_cast<int>(kernel.size() / 2);
  const Index n = sh[axis];
  const Index stride[3] = {sh[1] * sh[2], sh[2], 1};
  const int a1 = axis == 0 ? 1 : 0;
  const int a2 = axis == 2 ? 1 : 2;
  for (Index i = 0; i < n; ++i) {
    for (Index p = 0; p < sh[a1]; ++p) {
      for (Index q = 0; q < sh[a2]; ++q) {
        const Index base = p * stride[a1] + q * stride[a2];
        S acc = S(0);
        for (int t = -radius; t <= radius; ++t) {
          const Index j = std::clamp(i + t, Index(0), n - 1);
          acc += kernel[static_cast<size_t>(t + radius)] * in[base + j * stride[axis]];
        }
        out[base + i * stride[axis]] = acc;
      }
    }
  }
}

}  // namespace detail

/// Separable Gaussian blur with replicate boundary handling (unit DC gain).
/// Sigma may differ per axis; sigma <= 0 on an axis skips that pass.
template <class S>
Volume3<S> gaussian_blur(const Volume3<S>& v, const Eigen::Vector3d& sigma, int radius_factor = 3) {
  Volume3<S> out = v;
  typename Volume3<S>::Array tmp(v.size());
  for (int ax = 0; ax < 3; ++ax) {
    if (!(sigma[ax] > 0.0)) continue;
    const int radius = static_cast<int>(std::ceil(radius_factor * sigma[ax]));
    if (radius == 0) continue;
    const auto kernel = gaussian_kernel_1d<S>(sigma[ax], radius);
    detail::blur_axis(out.data.data(), v.shape, ax, kernel, tmp.data());
    out.data.swap(tmp);
  }
  return out;
}

/// Anti-aliased shrink: Gaussian pre-blur with sigma = 0.5 * zoom per axis
/// (zoom = in/out, blur only where zoom > 1) followed by linear resampling.
template <class S>
Volume3<S> downsample_antialiased(const Volume3<S>& v, Shape3 target_shape) {
  Eigen::Vector3d sigma(0, 0, 0);
  bool any = false;
  for (int ax = 0; ax < 3; ++ax) {
    const double zoom = static_cast<double>(v.shape[ax]) / static_cast<double>(target_shape[ax]);
    if (zoom > 1.0) {
      sigma[ax] = 0.5 * zoom;
      any = true;
    }
  }
  const Volume3<S> blurred = any ? gaussian_blur(v, sigma) : v;
  Volume3<S> out = resample(blurred, target_shape, ResampleMethod::linear);
  out.spacing = v.spacing;
  for (int ax = 0; ax < 3; ++ax)
    out.spacing[ax] *= static_cast<double>(v.shape[ax]) / static_cast<double>(target_shape[ax]);
  return out;
}

}  // namespace aslsr
