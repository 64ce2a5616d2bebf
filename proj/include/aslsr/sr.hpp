#pragma once

// Super-resolution generation: upsample the LR ASL volume to the requested
// grid and refine it with the finest-scale generator conditioned on the
// anatomical prior. A single forward pass of G_N; no noise, no cascade.

#include <cmath>
#include <optional>
#include <ostream>
#include <string>

#include "aslsr/checkpoint.hpp"
#include "aslsr/errors.hpp"
#include "aslsr/resample.hpp"
#include "aslsr/volume.hpp"

namespace aslsr {

template <class S>
struct SRRequest {
  const TrainedPyramid<S>* trained = nullptr;
  Volume3<S> x;     // LR ASL input
  Volume3<S> a_hr;  // anatomical prior, typically on a finer grid
  // Target grid: explicit shape, or (when unset) "match the prior's grid".
  std::optional<Shape3> target;
};

namespace detail {

/// Resample to `target`, anti-aliasing axes that shrink. Mixed zoom factors
/// are handled per call: downsample_antialiased already blurs only axes with
/// zoom > 1 and interpolates the rest linearly.
template <class S>
Volume3<S> resample_to_grid(const Volume3<S>& v, Shape3 target) {
  if (v.shape == target) return v;
  bool any_shrink = false;
  for (int ax = 0; ax < 3; ++ax) any_shrink |= target[ax] < v.shape[ax];
  return any_shrink ? downsample_antialiased(v, target)
                    : resample(v, target, ResampleMethod::linear);
}

}  // namespace detail

/// Single forward pass: x_sup = G_N(x_up, a_up). Deterministic (consumes no
/// random stream); repeated calls are bit-identical. `warn` receives
/// human-readable notes about soft geometry mismatches.
template <class S>
Volume3<S> super_resolve(const SRRequest<S>& req, std::ostream* warn = nullptr) {
  if (req.trained == nullptr || req.trained->generators.empty())
    throw ConfigError("super_resolve: trained pyramid is empty");
  const TrainedPyramid<S>& tp = *req.trained;
  req.x.require_finite("super_resolve: x");
  req.a_hr.require_finite("super_resolve: a_hr");

  const bool match_prior = !req.target.has_value();
  const Shape3 target = match_prior ? req.a_hr.shape : *req.target;
  for (int ax = 0; ax < 3; ++ax) {
    if (target[ax] < req.x.shape[ax])
      throw ConfigError("super_resolve: target shape " + shape_str(target) +
                        " is smaller than the input " + shape_str(req.x.shape) +
                        " along axis " + std::to_string(ax));
  }

  // The prior must sit on the same physical frame as x (pre-registered).
  const double tol = 0.5 * req.x.spacing.minCoeff();
  const double origin_gap = (req.a_hr.origin - req.x.origin).cwiseAbs().maxCoeff();
  if (origin_gap > tol)
    throw GeometryError("super_resolve: grid mismatch, prior origin is " +
                        std::to_string(origin_gap) + " mm from the input origin");
  if (warn) {
    for (int ax = 0; ax < 3; ++ax) {
      const double ext_x = static_cast<double>(req.x.shape[ax]) * req.x.spacing[ax];
      const double ext_a = static_cast<double>(req.a_hr.shape[ax]) * req.a_hr.spacing[ax];
      if (std::abs(ext_x - ext_a) > req.x.spacing[ax])
        *warn << "super_resolve: prior extent " << ext_a << " mm differs from input extent "
              << ext_x << " mm on axis " << ax << "; fields of view are assumed aligned\n";
    }
    double max_zoom = 0.0;
    for (int ax = 0; ax < 3; ++ax)
      max_zoom = std::max(max_zoom,
                          static_cast<double>(target[ax]) / static_cast<double>(req.x.shape[ax]));
    const double r2 = tp.pyramid.r * tp.pyramid.r;
    if (max_zoom > r2)
      *warn << "super_resolve: requested zoom " << max_zoom
            << " exceeds the trained refinement ratio squared (" << r2
            << "); a single refinement pass is still used\n";
  }

  // Upsample in normalized intensity space with the training-time transforms.
  Volume3<S> x_up = resample(apply_norm(req.x, tp.norm_x), target, ResampleMethod::linear);
  Volume3<S> a_up = detail::resample_to_grid(apply_norm(req.a_hr, tp.norm_a), target);

  // Output geometry: adopt the prior's grid when matching it; otherwise keep
  // x's physical extent (spacing scales with the shape ratio).
  if (match_prior) {
    x_up.spacing = req.a_hr.spacing;
    x_up.origin = req.a_hr.origin;
  } else {
    for (int ax = 0; ax < 3; ++ax)
      x_up.spacing[ax] = req.x.spacing[ax] * static_cast<double>(req.x.shape[ax]) /
                         static_cast<double>(target[ax]);
    x_up.origin = req.x.origin;
  }
  a_up.spacing = x_up.spacing;
  a_up.origin = x_up.origin;

  nn::Generator<S>& gn = *tp.generators.back();
  Volume3<S> out = gn.apply(x_up, a_up);
  return denormalize(out, tp.norm_x);
}

}  // namespace aslsr
