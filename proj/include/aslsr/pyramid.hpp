#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "aslsr/resample.hpp"
#include "aslsr/volume.hpp"

namespace aslsr {

/// Multi-scale plan: per-level zoom factor r and either an explicit number of
/// scales (N+1) or the smallest allowed coarse-scale extent from which N is
/// derived automatically.
struct PyramidConfig {
  double r = 4.0 / 3.0;
  std::optional<int> num_scales;  // N+1 when set; otherwise derived from min_extent
  Index min_extent = 12;

  void validate() const {
    if (!(r > 1.0)) throw ConfigError("pyramid: scale factor r must be > 1");
    if (num_scales && *num_scales < 2) throw ConfigError("pyramid: num_scales must be >= 2");
    if (min_extent < 4) throw ConfigError("pyramid: min_extent must be >= 4");
  }
};

/// Shapes for scales 0..N: shape_n = round(base / r^(N-n)) per axis.
inline std::vector<Shape3> plan_scales(Shape3 base_shape, const PyramidConfig& config) {
  config.validate();
  for (int ax = 0; ax < 3; ++ax)
    if (base_shape[ax] < config.min_extent && !config.num_scales)
      throw ConfigError("pyramid: base axis " + std::to_string(ax) + " (" +
                        std::to_string(base_shape[ax]) + ") is below min_extent " +
                        std::to_string(config.min_extent));

  const auto shape_at = [&](int steps_down) {
    Shape3 s;
    const double f = std::pow(config.r, steps_down);
    for (int ax = 0; ax < 3; ++ax)
      s[ax] = static_cast<Index>(std::llround(static_cast<double>(base_shape[ax]) / f));
    return s;
  };

  int levels;  // N+1
  if (config.num_scales) {
    levels = *config.num_scales;
  } else {
    // Largest N with every scale-0 axis still >= min_extent.
    int n = 1;
    while (true) {
      const Shape3 s = shape_at(n + 1);
      if (s[0] < config.min_extent || s[1] < config.min_extent || s[2] < config.min_extent) break;
      ++n;
    }
    levels = n + 1;
  }

  std::vector<Shape3> shapes(static_cast<size_t>(levels));
  for (int n = 0; n < levels; ++n) shapes[static_cast<size_t>(n)] = shape_at(levels - 1 - n);
  for (int ax = 0; ax < 3; ++ax)
    if (shapes.front()[ax] < 4)
      throw ConfigError("pyramid: scale-0 axis " + std::to_string(ax) + " would be " +
                        std::to_string(shapes.front()[ax]) + " voxels (< 4); reduce num_scales");
  return shapes;
}

/// Aligned per-scale training pairs (x_n, a_n), n = 0..N, built with the
/// anti-aliased downsampler; x_N is the base volume itself.
template <class S>
struct ScalePyramid {
  struct Level {
    Volume3<S> x;
    Volume3<S> a;
    Shape3 shape;
  };
  std::vector<Level> levels;
  Volume3<S> base_x;
  Volume3<S> base_a;  // the prior on x's grid at scale N
  PyramidConfig config;

  int num_scales() const { return static_cast<int>(levels.size()); }          // N+1
  int finest() const { return static_cast<int>(levels.size()) - 1; }          // N
  const Level& level(int n) const { return levels[static_cast<size_t>(n)]; }
};

/// Build the training pyramid. The prior a is slaved to x's grid at scale N
/// first (it may arrive on a finer grid); each coarser level is an
/// anti-aliased downsample of the scale-N pair.
template <class S>
ScalePyramid<S> build_pyramid(const Volume3<S>& x, const Volume3<S>& a,
                              const PyramidConfig& config) {
  x.require_finite("build_pyramid: x");
  a.require_finite("build_pyramid: a");
  // Pre-registration check: a shared frame means matching origins.
  const double tol = 0.5 * x.spacing.minCoeff();
  if ((a.origin - x.origin).cwiseAbs().maxCoeff() > tol)
    throw GeometryError("build_pyramid: x and a origins disagree (" +
                        std::to_string((a.origin - x.origin).cwiseAbs().maxCoeff()) +
                        " mm); inputs must be pre-registered");

  Volume3<S> a_base = a.shape == x.shape ? a : downsample_antialiased(a, x.shape);
  a_base.spacing = x.spacing;
  a_base.origin = x.origin;
  if (!(a_base.shape == x.shape))
    throw GeometryError("build_pyramid: prior could not be resampled to the ASL grid");

  const std::vector<Shape3> shapes = plan_scales(x.shape, config);
  ScalePyramid<S> pyr;
  pyr.config = config;
  pyr.base_x = x;
  pyr.base_a = a_base;
  pyr.levels.reserve(shapes.size());
  for (size_t n = 0; n < shapes.size(); ++n) {
    typename ScalePyramid<S>::Level lv;
    lv.shape = shapes[n];
    if (shapes[n] == x.shape) {
      lv.x = x;
      lv.a = a_base;
    } else {
      lv.x = downsample_antialiased(x, shapes[n]);
      lv.a = downsample_antialiased(a_base, shapes[n]);
    }
    pyr.levels.push_back(std::move(lv));
  }
  return pyr;
}

}  // namespace aslsr
