#pragma once

// PSNR and 3D SSIM, interpolation baselines, and the comparison report
// (method x reference grid of both metrics).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "aslsr/errors.hpp"
#include "aslsr/resample.hpp"
#include "aslsr/volume.hpp"

namespace aslsr {

struct MetricsOptions {
  int ssim_window = 7;
  double k1 = 0.01;
  double k2 = 0.03;
  // Dynamic range; when unset, each reference supplies max(ref) - min(ref).
  std::optional<double> data_range;
  // Restrict both metrics to voxels where reference > threshold * max(ref).
  bool foreground_mask = false;
  double foreground_threshold = 0.05;

  void validate() const {
    if (ssim_window < 1 || ssim_window % 2 == 0)
      throw ConfigError("metrics: ssim_window must be odd and positive, got " +
                        std::to_string(ssim_window));
    if (k1 <= 0 || k2 <= 0) throw ConfigError("metrics: k1 and k2 must be positive");
    if (data_range && *data_range <= 0)
      throw ConfigError("metrics: data_range must be positive");
    if (foreground_threshold < 0 || foreground_threshold >= 1)
      throw ConfigError("metrics: foreground_threshold must be in [0, 1)");
  }
};

namespace detail {

template <class S>
double resolve_data_range(const Volume3<S>& ref, std::optional<double> requested) {
  if (requested) return *requested;
  const double lo = static_cast<double>(ref.data.minCoeff());
  const double hi = static_cast<double>(ref.data.maxCoeff());
  return hi > lo ? hi - lo : 1.0;
}

/// Sliding-window sums of length `window` along one axis. Output index i
/// holds the sum over [i, i+window); entries past n-window are unspecified
/// and must not be read (later axis passes never mix different positions of
/// an already-summed axis, so the garbage stays confined).
inline void box_sum_axis(const std::vector<double>& in, std::vector<double>& out, Shape3 sh,
                         int axis, int window) {
  const Index nx = sh[0], ny = sh[1], nz = sh[2];
  const Index n = sh[axis];
  const Index stride = axis == 0 ? ny * nz : (axis == 1 ? nz : 1);
  const Index w = window;
  // Iterate over all lines along `axis`.
  const Index outer0 = axis == 0 ? ny : nx;
  const Index outer1 = axis == 2 ? ny : nz;
  const Index stride0 = axis == 0 ? nz : ny * nz;
  const Index stride1 = axis == 2 ? nz : 1;
  for (Index o0 = 0; o0 < outer0; ++o0) {
    for (Index o1 = 0; o1 < outer1; ++o1) {
      const Index base = o0 * stride0 + o1 * stride1;
      double acc = 0.0;
      for (Index i = 0; i < w; ++i) acc += in[static_cast<size_t>(base + i * stride)];
      out[static_cast<size_t>(base)] = acc;
      for (Index i = 1; i + w <= n; ++i) {
        acc += in[static_cast<size_t>(base + (i + w - 1) * stride)];
        acc -= in[static_cast<size_t>(base + (i - 1) * stride)];
        out[static_cast<size_t>(base + i * stride)] = acc;
      }
    }
  }
}

inline void box_sum_3d(std::vector<double>& buf, std::vector<double>& tmp, Shape3 sh, int window) {
  box_sum_axis(buf, tmp, sh, 0, window);
  box_sum_axis(tmp, buf, sh, 1, window);
  box_sum_axis(buf, tmp, sh, 2, window);
  buf.swap(tmp);
}

}  // namespace detail

/// Mask of voxels where the reference exceeds `threshold` * max(ref).
template <class S>
std::vector<uint8_t> foreground_mask(const Volume3<S>& ref, double threshold = 0.05) {
  const double cutoff = threshold * static_cast<double>(ref.data.maxCoeff());
  std::vector<uint8_t> mask(static_cast<size_t>(ref.size()));
  for (Index i = 0; i < ref.size(); ++i)
    mask[static_cast<size_t>(i)] = static_cast<double>(ref.data[i]) > cutoff ? 1 : 0;
  return mask;
}

/// Peak signal-to-noise ratio in dB; +infinity when pred == ref exactly.
template <class S>
double psnr(const Volume3<S>& pred, const Volume3<S>& ref,
            std::optional<double> data_range = std::nullopt,
            const std::vector<uint8_t>* mask = nullptr) {
  if (!(pred.shape == ref.shape))
    throw GeometryError("psnr: shape mismatch " + shape_str(pred.shape) + " vs " +
                        shape_str(ref.shape));
  const double range = detail::resolve_data_range(ref, data_range);
  double se = 0.0;
  Index count = 0;
  for (Index i = 0; i < ref.size(); ++i) {
    if (mask && !(*mask)[static_cast<size_t>(i)]) continue;
    const double d = static_cast<double>(pred.data[i]) - static_cast<double>(ref.data[i]);
    se += d * d;
    ++count;
  }
  if (count == 0) throw ConfigError("psnr: foreground mask excludes every voxel");
  const double mse = se / static_cast<double>(count);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(range * range / mse);
}

/// Mean structural similarity over all full 3D windows (uniform weighting).
/// Identical volumes score exactly 1.
template <class S>
double ssim3d(const Volume3<S>& pred, const Volume3<S>& ref, int window = 7, double k1 = 0.01,
              double k2 = 0.03, std::optional<double> data_range = std::nullopt,
              const std::vector<uint8_t>* mask = nullptr) {
  if (!(pred.shape == ref.shape))
    throw GeometryError("ssim3d: shape mismatch " + shape_str(pred.shape) + " vs " +
                        shape_str(ref.shape));
  if (window < 1 || window % 2 == 0)
    throw ConfigError("ssim3d: window must be odd and positive, got " + std::to_string(window));
  for (int ax = 0; ax < 3; ++ax)
    if (window > ref.shape[ax])
      throw ConfigError("ssim3d: window " + std::to_string(window) + " exceeds volume extent " +
                        shape_str(ref.shape));
  if (k1 <= 0 || k2 <= 0) throw ConfigError("ssim3d: k1 and k2 must be positive");

  const double range = detail::resolve_data_range(ref, data_range);
  const double c1 = (k1 * range) * (k1 * range);
  const double c2 = (k2 * range) * (k2 * range);
  const Shape3 sh = ref.shape;
  const size_t total = static_cast<size_t>(ref.size());

  // Window sums of p, r, p^2, r^2 and p*r via separable sliding sums.
  std::vector<double> sp(total), sr(total), spp(total), srr(total), spr(total), tmp(total);
  for (Index i = 0; i < ref.size(); ++i) {
    const double p = static_cast<double>(pred.data[i]);
    const double r = static_cast<double>(ref.data[i]);
    const size_t u = static_cast<size_t>(i);
    sp[u] = p;
    sr[u] = r;
    spp[u] = p * p;
    srr[u] = r * r;
    spr[u] = p * r;
  }
  detail::box_sum_3d(sp, tmp, sh, window);
  detail::box_sum_3d(sr, tmp, sh, window);
  detail::box_sum_3d(spp, tmp, sh, window);
  detail::box_sum_3d(srr, tmp, sh, window);
  detail::box_sum_3d(spr, tmp, sh, window);

  const double nw = static_cast<double>(window) * window * window;
  const Index half = window / 2;
  double acc = 0.0;
  Index count = 0;
  for (Index i = 0; i + window <= sh[0]; ++i) {
    for (Index j = 0; j + window <= sh[1]; ++j) {
      for (Index k = 0; k + window <= sh[2]; ++k) {
        const size_t u = static_cast<size_t>((i * sh[1] + j) * sh[2] + k);
        if (mask) {
          const size_t center =
              static_cast<size_t>(((i + half) * sh[1] + (j + half)) * sh[2] + (k + half));
          if (!(*mask)[center]) continue;
        }
        const double mu_p = sp[u] / nw;
        const double mu_r = sr[u] / nw;
        const double var_p = spp[u] / nw - mu_p * mu_p;
        const double var_r = srr[u] / nw - mu_r * mu_r;
        const double cov = spr[u] / nw - mu_p * mu_r;
        const double num = (2.0 * mu_p * mu_r + c1) * (2.0 * cov + c2);
        const double den = (mu_p * mu_p + mu_r * mu_r + c1) * (var_p + var_r + c2);
        acc += num / den;
        ++count;
      }
    }
  }
  if (count == 0) throw ConfigError("ssim3d: foreground mask excludes every window");
  return acc / static_cast<double>(count);
}

/// Named interpolation baseline (nearest / linear / spline upsampling).
template <class S>
Volume3<S> baseline_upsample(const Volume3<S>& x, Shape3 target_shape, ResampleMethod method) {
  return resample(x, target_shape, method);
}

struct MetricRow {
  std::string method;
  std::string reference;
  double psnr_db = 0.0;
  double ssim = 0.0;
  bool resampled = false;  // prediction was moved to the reference grid first
};

struct MetricsReport {
  MetricsOptions options;
  std::vector<MetricRow> rows;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["format"] = "aslsr-report-1";
    j["ssim_window"] = options.ssim_window;
    j["k1"] = options.k1;
    j["k2"] = options.k2;
    if (options.data_range)
      j["data_range"] = *options.data_range;
    else
      j["data_range"] = "per-reference";
    j["foreground_mask"] = options.foreground_mask;
    j["foreground_threshold"] = options.foreground_threshold;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows) {
      nlohmann::json row;
      row["method"] = r.method;
      row["reference"] = r.reference;
      // JSON has no infinity literal; use a string sentinel for exact PSNR.
      if (std::isinf(r.psnr_db))
        row["psnr_db"] = "inf";
      else
        row["psnr_db"] = r.psnr_db;
      row["ssim"] = r.ssim;
      row["resampled"] = r.resampled;
      j["rows"].push_back(std::move(row));
    }
    return j;
  }

  static MetricsReport from_json(const nlohmann::json& j) {
    MetricsReport rep;
    if (j.value("format", "") != std::string("aslsr-report-1"))
      throw FormatError("report: unrecognized format tag");
    rep.options.ssim_window = j.at("ssim_window").get<int>();
    rep.options.k1 = j.at("k1").get<double>();
    rep.options.k2 = j.at("k2").get<double>();
    if (j.at("data_range").is_number()) rep.options.data_range = j.at("data_range").get<double>();
    rep.options.foreground_mask = j.at("foreground_mask").get<bool>();
    rep.options.foreground_threshold = j.at("foreground_threshold").get<double>();
    for (const auto& row : j.at("rows")) {
      MetricRow r;
      r.method = row.at("method").get<std::string>();
      r.reference = row.at("reference").get<std::string>();
      if (row.at("psnr_db").is_string()) {
        if (row.at("psnr_db").get<std::string>() != "inf")
          throw FormatError("report: bad psnr_db sentinel");
        r.psnr_db = std::numeric_limits<double>::infinity();
      } else {
        r.psnr_db = row.at("psnr_db").get<double>();
      }
      r.ssim = row.at("ssim").get<double>();
      r.resampled = row.value("resampled", false);
      rep.rows.push_back(std::move(r));
    }
    return rep;
  }

  /// Human-readable aligned table with the canonical column names.
  std::string to_table() const {
    size_t wm = 6, wr = 9;
    for (const auto& r : rows) {
      wm = std::max(wm, r.method.size());
      wr = std::max(wr, r.reference.size());
    }
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(wm) + 2) << "method"
       << std::setw(static_cast<int>(wr) + 2) << "reference" << std::right << std::setw(10)
       << "psnr_db" << std::setw(10) << "ssim" << "\n";
    for (const auto& r : rows) {
      os << std::left << std::setw(static_cast<int>(wm) + 2) << r.method
         << std::setw(static_cast<int>(wr) + 2) << r.reference << std::right << std::setw(10);
      if (std::isinf(r.psnr_db))
        os << "inf";
      else
        os << std::fixed << std::setprecision(4) << r.psnr_db;
      os << std::setw(10) << std::fixed << std::setprecision(4) << r.ssim;
      if (r.resampled) os << "  (resampled)";
      os << "\n";
      os.unsetf(std::ios::fixed);
    }
    return os.str();
  }
};

/// Score interpolation baselines (from x_lr) and named method outputs against
/// every reference. Method outputs on a different grid are moved to the
/// reference grid by linear resampling and flagged as such.
template <class S>
MetricsReport run_comparison(const Volume3<S>& x_lr,
                             const std::vector<std::pair<std::string, Volume3<S>>>& references,
                             const std::vector<std::pair<std::string, Volume3<S>>>& method_outputs,
                             const MetricsOptions& opt = {}, bool include_baselines = true) {
  opt.validate();
  if (references.empty()) throw ConfigError("run_comparison: no reference volumes given");

  MetricsReport rep;
  rep.options = opt;
  auto score = [&](const std::string& name, const Volume3<S>& out, const std::string& ref_name,
                   const Volume3<S>& ref) {
    const Volume3<S>* pred = &out;
    Volume3<S> moved;
    bool resampled = false;
    if (!(out.shape == ref.shape)) {
      moved = resample(out, ref.shape, ResampleMethod::linear);
      pred = &moved;
      resampled = true;
    }
    std::vector<uint8_t> mask;
    const std::vector<uint8_t>* mask_ptr = nullptr;
    if (opt.foreground_mask) {
      mask = foreground_mask(ref, opt.foreground_threshold);
      mask_ptr = &mask;
    }
    MetricRow row;
    row.method = name;
    row.reference = ref_name;
    row.psnr_db = psnr(*pred, ref, opt.data_range, mask_ptr);
    row.ssim = ssim3d(*pred, ref, opt.ssim_window, opt.k1, opt.k2, opt.data_range, mask_ptr);
    row.resampled = resampled;
    rep.rows.push_back(std::move(row));
  };

  for (const auto& [ref_name, ref] : references) {
    if (include_baselines) {
      for (ResampleMethod m :
           {ResampleMethod::nearest, ResampleMethod::linear, ResampleMethod::spline}) {
        score(to_string(m), baseline_upsample(x_lr, ref.shape, m), ref_name, ref);
      }
    }
    for (const auto& [name, out] : method_outputs) score(name, out, ref_name, ref);
  }
  return rep;
}

}  // namespace aslsr
