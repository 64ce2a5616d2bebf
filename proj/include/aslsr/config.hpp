#pragma once

// Run configuration: one JSON tree covering every module's options, with
// strict unknown-key rejection and a resolved-defaults echo for
// reproducibility.

#include <array>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aslsr/errors.hpp"
#include "aslsr/losses.hpp"
#include "aslsr/metrics.hpp"
#include "aslsr/networks.hpp"
#include "aslsr/phantom.hpp"
#include "aslsr/pyramid.hpp"
#include "aslsr/trainer.hpp"

namespace aslsr {

struct RunConfig {
  // paths
  std::string asl_lr;
  std::string t1;
  std::string out_dir = "out";
  std::string checkpoint_dir;  // defaults to <out_dir>/checkpoints

  PyramidConfig pyramid;
  GeneratorSpec generator;
  DiscriminatorSpec discriminator;
  LossWeights loss;
  GaussianFilterSpec filter;
  TrainConfig train;

  // SR target: explicit shape, or empty = match the prior's grid.
  std::optional<Shape3> sr_target;

  MetricsOptions metrics;
  PhantomSpec phantom;

  std::string resolved_checkpoint_dir() const {
    return checkpoint_dir.empty() ? out_dir + "/checkpoints" : checkpoint_dir;
  }
};

namespace detail {

using json = nlohmann::json;

inline void reject_unknown_keys(const json& j, const std::string& section,
                                std::initializer_list<const char*> allowed) {
  if (!j.is_object())
    throw ConfigError("config: section '" + section + "' must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items()) {
    if (!ok.count(key))
      throw ConfigError("config: unknown key '" + section + (section.empty() ? "" : ".") + key +
                        "'");
  }
}

template <class T>
void fetch(const json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config: bad value for '" + section + "." + key + "': " + e.what());
  }
}

inline Shape3 parse_shape(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3)
    throw ConfigError("config: '" + where + "' must be an array of 3 integers");
  Shape3 s;
  for (int ax = 0; ax < 3; ++ax) {
    if (!j[static_cast<size_t>(ax)].is_number_integer())
      throw ConfigError("config: '" + where + "' must be an array of 3 integers");
    s[ax] = j[static_cast<size_t>(ax)].get<Index>();
  }
  return s;
}

inline ad::PadMode parse_pad_mode(const std::string& s, const std::string& where) {
  if (s == "zero") return ad::PadMode::zero;
  if (s == "replicate") return ad::PadMode::replicate;
  if (s == "periodic") return ad::PadMode::periodic;
  throw ConfigError("config: '" + where + "' must be zero|replicate|periodic, got '" + s + "'");
}
inline const char* pad_mode_name(ad::PadMode m) {
  switch (m) {
    case ad::PadMode::zero: return "zero";
    case ad::PadMode::replicate: return "replicate";
    default: return "periodic";
  }
}

inline ContrastMode parse_contrast(const std::string& s, const std::string& where) {
  if (s == "shared_structure") return ContrastMode::shared_structure;
  if (s == "partial_overlap") return ContrastMode::partial_overlap;
  throw ConfigError("config: '" + where + "' must be shared_structure|partial_overlap, got '" +
                    s + "'");
}
inline NoiseModel parse_noise_model(const std::string& s, const std::string& where) {
  if (s == "gaussian") return NoiseModel::gaussian;
  if (s == "rician") return NoiseModel::rician;
  throw ConfigError("config: '" + where + "' must be gaussian|rician, got '" + s + "'");
}

}  // namespace detail

/// Parse a config tree; every key is optional, unknown keys are rejected by
/// name. Validation of values happens in each section's validate().
inline RunConfig parse_run_config(const nlohmann::json& j) {
  using detail::fetch;
  using detail::reject_unknown_keys;
  RunConfig c;
  reject_unknown_keys(j, "", {"paths", "pyramid", "generator", "discriminator", "loss", "filter",
                              "train", "sr", "metrics", "phantom"});

  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    reject_unknown_keys(p, "paths", {"asl_lr", "t1", "out_dir", "checkpoint_dir"});
    fetch(p, "asl_lr", c.asl_lr, "paths");
    fetch(p, "t1", c.t1, "paths");
    fetch(p, "out_dir", c.out_dir, "paths");
    fetch(p, "checkpoint_dir", c.checkpoint_dir, "paths");
  }
  if (j.contains("pyramid")) {
    const auto& p = j.at("pyramid");
    reject_unknown_keys(p, "pyramid", {"r", "num_scales", "min_extent"});
    fetch(p, "r", c.pyramid.r, "pyramid");
    if (p.contains("num_scales")) c.pyramid.num_scales = p.at("num_scales").get<int>();
    fetch(p, "min_extent", c.pyramid.min_extent, "pyramid");
  }
  if (j.contains("generator")) {
    const auto& p = j.at("generator");
    reject_unknown_keys(p, "generator",
                        {"levels", "base_width", "leaky_slope", "norm_eps", "residual"});
    fetch(p, "levels", c.generator.levels, "generator");
    fetch(p, "base_width", c.generator.base_width, "generator");
    fetch(p, "leaky_slope", c.generator.leaky_slope, "generator");
    fetch(p, "norm_eps", c.generator.norm_eps, "generator");
    fetch(p, "residual", c.generator.residual, "generator");
  }
  if (j.contains("discriminator")) {
    const auto& p = j.at("discriminator");
    reject_unknown_keys(p, "discriminator", {"base_width", "strides", "leaky_slope", "pad_mode"});
    fetch(p, "base_width", c.discriminator.base_width, "discriminator");
    if (p.contains("strides"))
      c.discriminator.strides = p.at("strides").get<std::vector<Index>>();
    fetch(p, "leaky_slope", c.discriminator.leaky_slope, "discriminator");
    if (p.contains("pad_mode"))
      c.discriminator.pad_mode =
          detail::parse_pad_mode(p.at("pad_mode").get<std::string>(), "discriminator.pad_mode");
  }
  if (j.contains("loss")) {
    const auto& p = j.at("loss");
    reject_unknown_keys(p, "loss", {"alpha", "beta", "lambda_gp", "d_steps_per_g"});
    fetch(p, "alpha", c.loss.alpha, "loss");
    fetch(p, "beta", c.loss.beta, "loss");
    fetch(p, "lambda_gp", c.loss.lambda_gp, "loss");
    fetch(p, "d_steps_per_g", c.loss.d_steps_per_g, "loss");
  }
  if (j.contains("filter")) {
    const auto& p = j.at("filter");
    reject_unknown_keys(p, "filter", {"sigma", "radius"});
    fetch(p, "sigma", c.filter.sigma, "filter");
    fetch(p, "radius", c.filter.radius, "filter");
  }
  if (j.contains("train")) {
    const auto& p = j.at("train");
    reject_unknown_keys(p, "train",
                        {"lr", "epochs_per_scale", "adam_beta1", "adam_beta2", "seed",
                         "noise_sigma0", "checkpoint_every", "device", "inherit_discriminator",
                         "progress_every"});
    fetch(p, "lr", c.train.lr, "train");
    fetch(p, "epochs_per_scale", c.train.epochs_per_scale, "train");
    fetch(p, "adam_beta1", c.train.adam_beta1, "train");
    fetch(p, "adam_beta2", c.train.adam_beta2, "train");
    fetch(p, "seed", c.train.seed, "train");
    fetch(p, "noise_sigma0", c.train.noise_sigma0, "train");
    fetch(p, "checkpoint_every", c.train.checkpoint_every, "train");
    fetch(p, "device", c.train.device, "train");
    fetch(p, "inherit_discriminator", c.train.inherit_discriminator, "train");
    fetch(p, "progress_every", c.train.progress_every, "train");
  }
  if (j.contains("sr")) {
    const auto& p = j.at("sr");
    reject_unknown_keys(p, "sr", {"target"});
    if (p.contains("target")) {
      const auto& t = p.at("target");
      if (t.is_string()) {
        if (t.get<std::string>() != "match-t1")
          throw ConfigError("config: sr.target must be \"match-t1\" or [nx, ny, nz]");
        c.sr_target.reset();
      } else {
        c.sr_target = detail::parse_shape(t, "sr.target");
      }
    }
  }
  if (j.contains("metrics")) {
    const auto& p = j.at("metrics");
    reject_unknown_keys(p, "metrics",
                        {"ssim_window", "k1", "k2", "data_range", "foreground_mask",
                         "foreground_threshold"});
    fetch(p, "ssim_window", c.metrics.ssim_window, "metrics");
    fetch(p, "k1", c.metrics.k1, "metrics");
    fetch(p, "k2", c.metrics.k2, "metrics");
    if (p.contains("data_range")) c.metrics.data_range = p.at("data_range").get<double>();
    fetch(p, "foreground_mask", c.metrics.foreground_mask, "metrics");
    fetch(p, "foreground_threshold", c.metrics.foreground_threshold, "metrics");
  }
  if (j.contains("phantom")) {
    const auto& p = j.at("phantom");
    reject_unknown_keys(p, "phantom",
                        {"shape", "seed", "n_ellipsoids", "contrast", "noise_model", "noise_sigma",
                         "downsample_factor", "overlap_fraction", "spacing"});
    if (p.contains("shape")) c.phantom.shape = detail::parse_shape(p.at("shape"), "phantom.shape");
    fetch(p, "seed", c.phantom.seed, "phantom");
    fetch(p, "n_ellipsoids", c.phantom.n_ellipsoids, "phantom");
    if (p.contains("contrast"))
      c.phantom.contrast =
          detail::parse_contrast(p.at("contrast").get<std::string>(), "phantom.contrast");
    if (p.contains("noise_model"))
      c.phantom.noise_model =
          detail::parse_noise_model(p.at("noise_model").get<std::string>(), "phantom.noise_model");
    fetch(p, "noise_sigma", c.phantom.noise_sigma, "phantom");
    fetch(p, "downsample_factor", c.phantom.downsample_factor, "phantom");
    fetch(p, "overlap_fraction", c.phantom.overlap_fraction, "phantom");
    fetch(p, "spacing", c.phantom.spacing, "phantom");
  }
  return c;
}

/// Full config with every default resolved; writing this next to a run's
/// outputs makes the run reproducible from the output directory alone.
inline nlohmann::json effective_config(const RunConfig& c) {
  nlohmann::json j;
  j["paths"] = {{"asl_lr", c.asl_lr},
                {"t1", c.t1},
                {"out_dir", c.out_dir},
                {"checkpoint_dir", c.resolved_checkpoint_dir()}};
  j["pyramid"]["r"] = c.pyramid.r;
  if (c.pyramid.num_scales) j["pyramid"]["num_scales"] = *c.pyramid.num_scales;
  j["pyramid"]["min_extent"] = c.pyramid.min_extent;
  j["generator"] = {{"levels", c.generator.levels},
                    {"base_width", c.generator.base_width},
                    {"leaky_slope", c.generator.leaky_slope},
                    {"norm_eps", c.generator.norm_eps},
                    {"residual", c.generator.residual}};
  j["discriminator"] = {{"base_width", c.discriminator.base_width},
                        {"strides", c.discriminator.strides},
                        {"leaky_slope", c.discriminator.leaky_slope},
                        {"pad_mode", detail::pad_mode_name(c.discriminator.pad_mode)}};
  j["loss"] = {{"alpha", c.loss.alpha},
               {"beta", c.loss.beta},
               {"lambda_gp", c.loss.lambda_gp},
               {"d_steps_per_g", c.loss.d_steps_per_g}};
  j["filter"] = {{"sigma", c.filter.sigma}, {"radius", c.filter.radius}};
  j["train"] = {{"lr", c.train.lr},
                {"epochs_per_scale", c.train.epochs_per_scale},
                {"adam_beta1", c.train.adam_beta1},
                {"adam_beta2", c.train.adam_beta2},
                {"seed", c.train.seed},
                {"noise_sigma0", c.train.noise_sigma0},
                {"checkpoint_every", c.train.checkpoint_every},
                {"device", c.train.device},
                {"inherit_discriminator", c.train.inherit_discriminator},
                {"progress_every", c.train.progress_every}};
  if (c.sr_target)
    j["sr"]["target"] = {(*c.sr_target)[0], (*c.sr_target)[1], (*c.sr_target)[2]};
  else
    j["sr"]["target"] = "match-t1";
  j["metrics"] = {{"ssim_window", c.metrics.ssim_window},
                  {"k1", c.metrics.k1},
                  {"k2", c.metrics.k2},
                  {"foreground_mask", c.metrics.foreground_mask},
                  {"foreground_threshold", c.metrics.foreground_threshold}};
  if (c.metrics.data_range) j["metrics"]["data_range"] = *c.metrics.data_range;
  j["phantom"] = {{"shape", {c.phantom.shape[0], c.phantom.shape[1], c.phantom.shape[2]}},
                  {"seed", c.phantom.seed},
                  {"n_ellipsoids", c.phantom.n_ellipsoids},
                  {"contrast", to_string(c.phantom.contrast)},
                  {"noise_model", to_string(c.phantom.noise_model)},
                  {"noise_sigma", c.phantom.noise_sigma},
                  {"downsample_factor", c.phantom.downsample_factor},
                  {"overlap_fraction", c.phantom.overlap_fraction},
                  {"spacing", c.phantom.spacing}};
  return j;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: parse error in " + path + ": " + e.what());
  }
  return parse_run_config(j);
}

}  // namespace aslsr
