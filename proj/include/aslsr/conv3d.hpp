#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <vector>

#include "aslsr/resample.hpp"
#include "aslsr/tensor.hpp"

namespace aslsr::ad {

enum class PadMode { zero, replicate, periodic };

using Stride3 = std::array<Index, 3>;

namespace detail {

using RowMat = void;  // see maps below

template <class S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
using MapRM = Eigen::Map<MatRM<S>>;

template <class S>
using MapRMConst = Eigen::Map<const MatRM<S>>;

template <class S>
using MapRMStride = Eigen::Map<MatRM<S>, 0, Eigen::OuterStride<>>;

template <class S>
using MapRMStrideConst = Eigen::Map<const MatRM<S>, 0, Eigen::OuterStride<>>;

inline Index conv_out_extent(Index in, Index k, Index s) { return (in - k) / s + 1; }

// Valid-convolution output spatial shape.
inline Shape3 conv_out_shape(const Shape3& in, const Shape3& k, const Stride3& s) {
  for (int ax = 0; ax < 3; ++ax)
    if (in[ax] < k[ax])
      throw GeometryError("conv3d: input extent " + shape_str(in) +
                          " smaller than kernel " + shape_str(k));
  return {conv_out_extent(in[0], k[0], s[0]), conv_out_extent(in[1], k[1], s[1]),
          conv_out_extent(in[2], k[2], s[2])};
}

template <class S>
std::vector<S>& scratch_buffer() {
  static thread_local std::vector<S> buf;
  return buf;
}

// Gather one x-chunk of output columns into a row-major patch matrix
// P(K x ncols), K = cin*kx*ky*kz, columns ordered (ox-x0, oy, oz).
template <class S>
void im2col_chunk(const Tensor<S>& x, const Shape3& ksh, const Stride3& st, const Shape3& osh,
                  Index x0, Index x1, S* P) {
  const Index cin = x.c(), X = x.x(), Y = x.y(), Z = x.z();
  (void)X;
  const Index OY = osh[1], OZ = osh[2];
  const Index ncols = (x1 - x0) * OY * OZ;
  const S* xd = x.data.data();
  Index row = 0;
  for (Index ci = 0; ci < cin; ++ci) {
    const S* xc = xd + ci * x.spatial_size();
    for (Index kx = 0; kx < ksh[0]; ++kx)
      for (Index ky = 0; ky < ksh[1]; ++ky)
        for (Index kz = 0; kz < ksh[2]; ++kz) {
          S* dst = P + row * ncols;
          for (Index ox = x0; ox < x1; ++ox) {
            const S* plane = xc + (st[0] * ox + kx) * Y * Z;
            for (Index oy = 0; oy < OY; ++oy) {
              const S* line = plane + (st[1] * oy + ky) * Z + kz;
              if (st[2] == 1) {
                std::copy(line, line + OZ, dst);
                dst += OZ;
              } else {
                for (Index oz = 0; oz < OZ; ++oz) *dst++ = line[oz * st[2]];
              }
            }
          }
          ++row;
        }
  }
}

inline Index chunk_extent(Index K, Index OY, Index OZ, size_t elem_bytes) {
  // Keep each patch matrix chunk around 48 MB.
  const Index budget = Index(48) << 20;
  const Index per_slice = K * OY * OZ * static_cast<Index>(elem_bytes);
  return std::max<Index>(1, budget / std::max<Index>(per_slice, 1));
}

}  // namespace detail

/// y[co] = sum_ci w[co,ci] * x[ci] (valid convolution, strided). Bias is a
/// separate op.
template <class S>
Tensor<S> conv3d_forward(const Tensor<S>& x, const Tensor<S>& w, const Stride3& st) {
  if (x.dims.size() != 4 || w.dims.size() != 5)
    throw GeometryError("conv3d: expected 4D input and 5D weight");
  if (x.c() != w.dims[1])
    throw GeometryError("conv3d: input channels " + std::to_string(x.c()) +
                        " != weight in-channels " + std::to_string(w.dims[1]));
  const Index cout = w.dims[0];
  const Shape3 ksh{w.dims[2], w.dims[3], w.dims[4]};
  const Shape3 osh = detail::conv_out_shape(x.spatial_shape(), ksh, st);
  Tensor<S> y({cout, osh[0], osh[1], osh[2]});
  const Index K = w.dims[1] * ksh[0] * ksh[1] * ksh[2];
  const Index OV = y.spatial_size();

  auto& buf = detail::scratch_buffer<S>();
  const Index cx = detail::chunk_extent(K, osh[1], osh[2], sizeof(S));
  detail::MapRMConst<S> W(w.data.data(), cout, K);
  for (Index x0 = 0; x0 < osh[0]; x0 += cx) {
    const Index x1 = std::min(osh[0], x0 + cx);
    const Index ncols = (x1 - x0) * osh[1] * osh[2];
    buf.resize(static_cast<size_t>(K * ncols));
    detail::im2col_chunk(x, ksh, st, osh, x0, x1, buf.data());
    detail::MapRMConst<S> P(buf.data(), K, ncols);
    detail::MapRMStride<S> Y(y.data.data() + x0 * osh[1] * osh[2], cout, ncols,
                             Eigen::OuterStride<>(OV));
    Y.noalias() = W * P;
  }
  return y;
}

/// d(loss)/d(w) given upstream gradient g over the conv output.
template <class S>
Tensor<S> conv3d_weight_grad(const Tensor<S>& g, const Tensor<S>& x,
                             const std::vector<Index>& wdims, const Stride3& st) {
  const Index cout = wdims[0];
  const Shape3 ksh{wdims[2], wdims[3], wdims[4]};
  const Shape3 osh = detail::conv_out_shape(x.spatial_shape(), ksh, st);
  if (g.dims != std::vector<Index>{cout, osh[0], osh[1], osh[2]})
    throw GeometryError("conv3d_weight_grad: gradient shape " + g.shape_str() + " mismatch");
  const Index K = wdims[1] * ksh[0] * ksh[1] * ksh[2];
  const Index OV = g.spatial_size();

  Tensor<S> wg = Tensor<S>::zeros(wdims);
  detail::MapRM<S> WG(wg.data.data(), cout, K);
  auto& buf = detail::scratch_buffer<S>();
  const Index cx = detail::chunk_extent(K, osh[1], osh[2], sizeof(S));
  for (Index x0 = 0; x0 < osh[0]; x0 += cx) {
    const Index x1 = std::min(osh[0], x0 + cx);
    const Index ncols = (x1 - x0) * osh[1] * osh[2];
    buf.resize(static_cast<size_t>(K * ncols));
    detail::im2col_chunk(x, ksh, st, osh, x0, x1, buf.data());
    detail::MapRMConst<S> P(buf.data(), K, ncols);
    detail::MapRMStrideConst<S> G(g.data.data() + x0 * osh[1] * osh[2], cout, ncols,
                                  Eigen::OuterStride<>(OV));
    WG.noalias() += G * P.transpose();
  }
  return wg;
}

/// d(loss)/d(x) given upstream gradient g over the conv output; in_spatial is
/// the forward input's spatial shape.
template <class S>
Tensor<S> conv3d_input_grad(const Tensor<S>& g, const Tensor<S>& w, const Shape3& in_spatial,
                            const Stride3& st) {
  const Index cout = w.dims[0], cin = w.dims[1];
  const Shape3 ksh{w.dims[2], w.dims[3], w.dims[4]};
  const Shape3 osh = detail::conv_out_shape(in_spatial, ksh, st);
  if (g.dims != std::vector<Index>{cout, osh[0], osh[1], osh[2]})
    throw GeometryError("conv3d_input_grad: gradient shape " + g.shape_str() + " mismatch");
  const Index K = cin * ksh[0] * ksh[1] * ksh[2];
  const Index OV = g.spatial_size();

  Tensor<S> t = Tensor<S>::zeros({cin, in_spatial[0], in_spatial[1], in_spatial[2]});
  const Index Y = in_spatial[1], Z = in_spatial[2];
  detail::MapRMConst<S> W(w.data.data(), cout, K);
  auto& buf = detail::scratch_buffer<S>();
  const Index cx = detail::chunk_extent(K, osh[1], osh[2], sizeof(S));
  for (Index x0 = 0; x0 < osh[0]; x0 += cx) {
    const Index x1 = std::min(osh[0], x0 + cx);
    const Index ncols = (x1 - x0) * osh[1] * osh[2];
    buf.resize(static_cast<size_t>(K * ncols));
    detail::MapRM<S> PG(buf.data(), K, ncols);
    detail::MapRMStrideConst<S> G(g.data.data() + x0 * osh[1] * osh[2], cout, ncols,
                                  Eigen::OuterStride<>(OV));
    PG.noalias() = W.transpose() * G;
    // col2im scatter-add.
    Index row = 0;
    S* td = t.data.data();
    for (Index ci = 0; ci < cin; ++ci) {
      S* tc = td + ci * in_spatial[0] * Y * Z;
      for (Index kx = 0; kx < ksh[0]; ++kx)
        for (Index ky = 0; ky < ksh[1]; ++ky)
          for (Index kz = 0; kz < ksh[2]; ++kz) {
            const S* src = buf.data() + row * ncols;
            for (Index ox = x0; ox < x1; ++ox) {
              S* plane = tc + (st[0] * ox + kx) * Y * Z;
              for (Index oy = 0; oy < osh[1]; ++oy) {
                S* line = plane + (st[1] * oy + ky) * Z + kz;
                for (Index oz = 0; oz < osh[2]; ++oz) line[oz * st[2]] += *src++;
              }
            }
            ++row;
          }
    }
  }
  return t;
}

namespace detail {

// Source index for a padded coordinate, or -1 when the pad mode is zero and
// the coordinate falls outside.
inline Index pad_src(Index p, Index lo, Index n, PadMode mode) {
  Index i = p - lo;
  if (i >= 0 && i < n) return i;
  switch (mode) {
    case PadMode::zero: return -1;
    case PadMode::replicate: return std::clamp(i, Index(0), n - 1);
    case PadMode::periodic: return ((i % n) + n) % n;
  }
  return -1;
}

}  // namespace detail

template <class S>
Tensor<S> pad3_apply(const Tensor<S>& t, const Shape3& lo, const Shape3& hi, PadMode mode) {
  const Index C = t.c(), X = t.x(), Y = t.y(), Z = t.z();
  Tensor<S> out({C, X + lo[0] + hi[0], Y + lo[1] + hi[1], Z + lo[2] + hi[2]});
  const S* src = t.data.data();
  S* dst = out.data.data();
  for (Index c = 0; c < C; ++c) {
    const S* sc = src + c * t.spatial_size();
    for (Index i = 0; i < out.x(); ++i) {
      const Index si = detail::pad_src(i, lo[0], X, mode);
      for (Index j = 0; j < out.y(); ++j) {
        const Index sj = detail::pad_src(j, lo[1], Y, mode);
        for (Index k = 0; k < out.z(); ++k) {
          const Index sk = detail::pad_src(k, lo[2], Z, mode);
          *dst++ = (si < 0 || sj < 0 || sk < 0) ? S(0) : sc[(si * Y + sj) * Z + sk];
        }
      }
    }
  }
  return out;
}

/// Adjoint of pad3_apply: folds padded-border contributions back onto their
/// source voxels (crop for zero mode).
template <class S>
Tensor<S> pad3_adjoint_apply(const Tensor<S>& g, const Shape3& lo, const Shape3& hi,
                             PadMode mode) {
  const Index C = g.c();
  const Shape3 in{g.x() - lo[0] - hi[0], g.y() - lo[1] - hi[1], g.z() - lo[2] - hi[2]};
  for (int ax = 0; ax < 3; ++ax)
    if (in[ax] < 1) throw GeometryError("pad3_adjoint: padding exceeds tensor extent");
  Tensor<S> out = Tensor<S>::zeros({C, in[0], in[1], in[2]});
  const S* src = g.data.data();
  for (Index c = 0; c < C; ++c) {
    S* oc = out.data.data() + c * out.spatial_size();
    for (Index i = 0; i < g.x(); ++i) {
      const Index si = detail::pad_src(i, lo[0], in[0], mode);
      if (si < 0) { src += g.y() * g.z(); continue; }
      for (Index j = 0; j < g.y(); ++j) {
        const Index sj = detail::pad_src(j, lo[1], in[1], mode);
        if (sj < 0) { src += g.z(); continue; }
        S* line = oc + (si * in[1] + sj) * in[2];
        for (Index k = 0; k < g.z(); ++k) {
          const Index sk = detail::pad_src(k, lo[2], in[2], mode);
          if (sk >= 0) line[sk] += *src;
          ++src;
        }
      }
    }
  }
  return out;
}

namespace detail {

template <class S>
void resize_axis_fwd(const S* in, Shape3 sh, int axis, Index m, S* out) {
  aslsr::detail::resample_axis(in, sh, axis, m, ResampleMethod::linear, out);
}

template <class S>
void resize_axis_adj(const S* g, Shape3 gsh, int axis, Index n, S* out) {
  // Adjoint of the align-corners linear pass: scatter each output's taps
  // back onto its sources.
  const Index m = gsh[axis];
  const auto taps = aslsr::detail::make_taps<S>(n, m, ResampleMethod::linear);
  Shape3 osh = gsh;
  osh[axis] = n;
  std::fill(out, out + shape_size(osh), S(0));
  const Index g_stride[3] = {gsh[1] * gsh[2], gsh[2], 1};
  const Index o_stride[3] = {osh[1] * osh[2], osh[2], 1};
  const int a1 = axis == 0 ? 1 : 0;
  const int a2 = axis == 2 ? 1 : 2;
  for (Index i = 0; i < m; ++i) {
    const auto& t = taps[static_cast<size_t>(i)];
    const Index limit = n - 1 - t.first;
    for (Index p = 0; p < gsh[a1]; ++p) {
      const S* src_line = g + p * g_stride[a1] + i * g_stride[axis];
      S* dst_line = out + p * o_stride[a1] + t.first * o_stride[axis];
      for (Index q = 0; q < gsh[a2]; ++q) {
        const S v = src_line[q * g_stride[a2]];
        S* d = dst_line + q * o_stride[a2];
        for (int k = 0; k < t.count; ++k) {
          const Index off = std::min<Index>(k, limit);
          d[off * o_stride[axis]] += t.w[static_cast<size_t>(k)] * v;
        }
      }
    }
  }
}

}  // namespace detail

/// Per-channel trilinear (align-corners) resize to a target spatial shape.
template <class S>
Tensor<S> resize3_linear(const Tensor<S>& t, const Shape3& target) {
  Tensor<S> out({t.c(), target[0], target[1], target[2]});
  std::vector<S> bufa, bufb;
  for (Index c = 0; c < t.c(); ++c) {
    Shape3 cur = t.spatial_shape();
    bufa.assign(t.data.data() + c * t.spatial_size(), t.data.data() + (c + 1) * t.spatial_size());
    for (int ax = 0; ax < 3; ++ax) {
      if (cur[ax] == target[ax]) continue;
      Shape3 nxt = cur;
      nxt[ax] = target[ax];
      bufb.resize(static_cast<size_t>(shape_size(nxt)));
      detail::resize_axis_fwd(bufa.data(), cur, ax, target[ax], bufb.data());
      bufa.swap(bufb);
      cur = nxt;
    }
    std::copy(bufa.begin(), bufa.end(), out.data.data() + c * out.spatial_size());
  }
  return out;
}

/// Adjoint of resize3_linear; source is the forward input's spatial shape.
template <class S>
Tensor<S> resize3_linear_adjoint(const Tensor<S>& g, const Shape3& source) {
  Tensor<S> out({g.c(), source[0], source[1], source[2]});
  std::vector<S> bufa, bufb;
  for (Index c = 0; c < g.c(); ++c) {
    // Reverse the forward axis order (x,y,z) with adjoint passes (z,y,x).
    Shape3 cur = g.spatial_shape();
    bufa.assign(g.data.data() + c * g.spatial_size(), g.data.data() + (c + 1) * g.spatial_size());
    for (int ax = 2; ax >= 0; --ax) {
      if (cur[ax] == source[ax]) continue;
      Shape3 nxt = cur;
      nxt[ax] = source[ax];
      bufb.resize(static_cast<size_t>(shape_size(nxt)));
      detail::resize_axis_adj(bufa.data(), cur, ax, source[ax], bufb.data());
      bufa.swap(bufb);
      cur = nxt;
    }
    std::copy(bufa.begin(), bufa.end(), out.data.data() + c * out.spatial_size());
  }
  return out;
}

}  // namespace aslsr::ad
