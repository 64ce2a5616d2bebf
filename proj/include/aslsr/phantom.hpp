#pragma once

// Synthetic paired volumes: a soft-edged ellipsoid composition rendered twice
// with different per-region intensities ("ASL" signal and "T1" anatomy), plus
// the degradation operator that produces the LR noisy input.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "aslsr/errors.hpp"
#include "aslsr/resample.hpp"
#include "aslsr/volume.hpp"

namespace aslsr {

enum class ContrastMode { shared_structure, partial_overlap };
enum class NoiseModel { gaussian, rician };

inline const char* to_string(ContrastMode m) {
  return m == ContrastMode::shared_structure ? "shared_structure" : "partial_overlap";
}
inline const char* to_string(NoiseModel m) {
  return m == NoiseModel::gaussian ? "gaussian" : "rician";
}

struct PhantomSpec {
  Shape3 shape{64, 48, 48};
  uint64_t seed = 0;
  int n_ellipsoids = 6;
  ContrastMode contrast = ContrastMode::shared_structure;
  NoiseModel noise_model = NoiseModel::gaussian;
  double noise_sigma = 0.1;                       // applied by degrade
  std::array<double, 3> downsample_factor{2, 2, 1};
  double overlap_fraction = 0.3;                  // structures absent from ASL
  std::array<double, 3> spacing{1.875, 1.875, 2.5};

  void validate() const {
    for (int ax = 0; ax < 3; ++ax) {
      if (shape[ax] < 16)
        throw ConfigError("phantom: shape must be at least 16 per axis, got " + shape_str(shape));
      if (downsample_factor[static_cast<size_t>(ax)] < 1.0)
        throw ConfigError("phantom: downsample_factor must be >= 1 per axis");
      if (spacing[static_cast<size_t>(ax)] <= 0.0)
        throw ConfigError("phantom: spacing must be positive");
    }
    if (n_ellipsoids < 0) throw ConfigError("phantom: n_ellipsoids must be >= 0");
    if (noise_sigma < 0) throw ConfigError("phantom: noise_sigma must be >= 0");
    if (overlap_fraction < 0 || overlap_fraction > 1)
      throw ConfigError("phantom: overlap_fraction must be in [0, 1]");
  }
};

namespace detail {

struct Ellipsoid {
  std::array<double, 3> center;   // voxel units
  std::array<double, 3> semi;     // voxel units
  double asl_intensity;
  double t1_intensity;
  bool t1_only;                   // absent from the ASL rendering
};

/// Paint a soft-edged ellipsoid: alpha is 1 deep inside, 0 outside, with a
/// smoothstep shell of relative width `edge` around the boundary.
template <class S>
void paint(Volume3<S>& v, const Ellipsoid& e, double intensity, double edge) {
  const Shape3 sh = v.shape;
  for (Index i = 0; i < sh[0]; ++i) {
    for (Index j = 0; j < sh[1]; ++j) {
      for (Index k = 0; k < sh[2]; ++k) {
        const double dx = (static_cast<double>(i) - e.center[0]) / e.semi[0];
        const double dy = (static_cast<double>(j) - e.center[1]) / e.semi[1];
        const double dz = (static_cast<double>(k) - e.center[2]) / e.semi[2];
        const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
        // alpha = smoothstep across [1 - edge, 1 + edge] in normalized radius
        double t = (1.0 + edge - d) / (2.0 * edge);
        t = std::clamp(t, 0.0, 1.0);
        const double alpha = t * t * (3.0 - 2.0 * t);
        if (alpha <= 0.0) continue;
        S& cell = v.at(i, j, k);
        cell = static_cast<S>((1.0 - alpha) * static_cast<double>(cell) + alpha * intensity);
      }
    }
  }
}

}  // namespace detail

/// Deterministic paired phantom: (hr_asl, t1). Both volumes share ellipsoid
/// geometry; intensities differ per region. In partial_overlap mode a
/// fraction of the structures appears only in t1. Intensities lie in [0, 1].
template <class S = float>
std::pair<Volume3<S>, Volume3<S>> make_phantom(const PhantomSpec& spec) {
  spec.validate();
  const Eigen::Vector3d spacing(spec.spacing[0], spec.spacing[1], spec.spacing[2]);
  const Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Volume3<S> asl(spec.shape, spacing, origin);
  Volume3<S> t1(spec.shape, spacing, origin);
  asl.data.setConstant(S(0.02));
  t1.data.setConstant(S(0.05));

  std::mt19937_64 rng(spec.seed ^ 0xda3e39cb94b95bdbull);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  // Draw all geometry/intensity before rendering so the layout is a pure
  // function of (seed, n): the same seed yields the same structures in both
  // contrast modes.
  std::vector<detail::Ellipsoid> shapes;
  for (int n = 0; n < spec.n_ellipsoids; ++n) {
    detail::Ellipsoid e;
    for (int ax = 0; ax < 3; ++ax) {
      const double extent = static_cast<double>(spec.shape[ax]);
      e.center[static_cast<size_t>(ax)] = (0.2 + 0.6 * u01(rng)) * extent;
      e.semi[static_cast<size_t>(ax)] = (0.08 + 0.17 * u01(rng)) * extent;
    }
    e.asl_intensity = 0.25 + 0.65 * u01(rng);
    e.t1_intensity = 0.30 + 0.65 * u01(rng);
    e.t1_only = false;
    shapes.push_back(e);
  }
  if (spec.contrast == ContrastMode::partial_overlap && !shapes.empty()) {
    const int missing = static_cast<int>(
        std::llround(spec.overlap_fraction * static_cast<double>(shapes.size())));
    for (int n = 0; n < std::min<int>(missing, static_cast<int>(shapes.size())); ++n)
      shapes[static_cast<size_t>(n)].t1_only = true;
  }

  const double edge = 0.15;
  for (const auto& e : shapes) {
    detail::paint(t1, e, e.t1_intensity, edge);
    if (!e.t1_only) detail::paint(asl, e, e.asl_intensity, edge);
  }
  return {std::move(asl), std::move(t1)};
}

/// Anti-aliased downsample by `factor` per axis, then additive noise of
/// standard deviation `noise_sigma` (normalized units). factor = 1 and
/// sigma = 0 returns the input exactly.
template <class S>
Volume3<S> degrade(const Volume3<S>& hr, std::array<double, 3> factor, double noise_sigma,
                   std::mt19937_64& rng, NoiseModel model = NoiseModel::gaussian) {
  for (double f : factor)
    if (f < 1.0) throw ConfigError("degrade: downsample factor must be >= 1 per axis");
  if (noise_sigma < 0) throw ConfigError("degrade: noise_sigma must be >= 0");
  Shape3 target;
  for (int ax = 0; ax < 3; ++ax) {
    target[ax] = std::max<Index>(
        1, static_cast<Index>(std::llround(static_cast<double>(hr.shape[ax]) /
                                           factor[static_cast<size_t>(ax)])));
  }
  Volume3<S> lr = hr.shape == target ? hr : downsample_antialiased(hr, target);
  if (noise_sigma > 0) {
    std::normal_distribution<double> nd(0.0, noise_sigma);
    if (model == NoiseModel::gaussian) {
      for (Index i = 0; i < lr.size(); ++i)
        lr.data[i] = static_cast<S>(static_cast<double>(lr.data[i]) + nd(rng));
    } else {
      // Rician: magnitude of the signal plus complex Gaussian noise.
      for (Index i = 0; i < lr.size(); ++i) {
        const double re = static_cast<double>(lr.data[i]) + nd(rng);
        const double im = nd(rng);
        lr.data[i] = static_cast<S>(std::sqrt(re * re + im * im));
      }
    }
  }
  return lr;
}

}  // namespace aslsr
