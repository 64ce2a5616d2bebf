// Command-line surface for the two-step workflow: multi-scale training and
// super-resolution generation, plus evaluation, baselines, and synthetic
// phantom data.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aslsr/config.hpp"
#include "aslsr/metrics.hpp"
#include "aslsr/phantom.hpp"
#include "aslsr/sr.hpp"
#include "aslsr/trainer.hpp"
#include "aslsr/volume_io.hpp"

namespace fs = std::filesystem;
using aslsr::ConfigError;
using aslsr::IoError;
using aslsr::RunConfig;
using aslsr::Shape3;

namespace {

Shape3 parse_shape_flag(const std::string& s, const std::string& flag) {
  Shape3 out;
  std::istringstream ss(s);
  char sep = 0;
  if (!(ss >> out[0] >> sep >> out[1] >> sep >> out[2]) || (ss >> sep))
    throw ConfigError(flag + ": expected NX,NY,NZ, got '" + s + "'");
  for (int ax = 0; ax < 3; ++ax)
    if (out[ax] < 1) throw ConfigError(flag + ": extents must be positive, got '" + s + "'");
  return out;
}

std::array<double, 3> parse_factor_flag(const std::string& s, const std::string& flag) {
  std::array<double, 3> out;
  std::istringstream ss(s);
  char sep = 0;
  if (!(ss >> out[0] >> sep >> out[1] >> sep >> out[2]) || (ss >> sep))
    throw ConfigError(flag + ": expected FX,FY,FZ, got '" + s + "'");
  return out;
}

std::pair<std::string, std::string> parse_named_path(const std::string& s,
                                                     const std::string& flag) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == s.size())
    throw ConfigError(flag + ": expected NAME=PATH, got '" + s + "'");
  return {s.substr(0, eq), s.substr(eq + 1)};
}

void write_effective_config(const RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const fs::path p = fs::path(cfg.out_dir) / "effective_config.json";
  std::ofstream f(p);
  if (!f) throw IoError("cannot write " + p.string());
  f << aslsr::effective_config(cfg).dump(2) << "\n";
}

void apply_device_env(RunConfig& cfg) {
  if (const char* dev = std::getenv("ASLSR_DEVICE")) cfg.train.device = dev;
  if (cfg.train.device != "cpu") {
    std::cerr << "warning: device '" << cfg.train.device
              << "' is not available in this build; using cpu\n";
    cfg.train.device = "cpu";
  }
}

// Shared flag state; only flags the user actually passed override the file.
struct CommonFlags {
  std::string config_path;
  std::string input, prior, out_dir, checkpoint_dir;
  std::optional<std::uint64_t> seed;

  RunConfig resolve() const {
    RunConfig cfg = config_path.empty() ? RunConfig{} : aslsr::load_run_config(config_path);
    if (!input.empty()) cfg.asl_lr = input;
    if (!prior.empty()) cfg.t1 = prior;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (!checkpoint_dir.empty()) cfg.checkpoint_dir = checkpoint_dir;
    if (seed) {
      cfg.train.seed = *seed;
      cfg.phantom.seed = *seed;
    }
    return cfg;
  }
};

void add_common(CLI::App* cmd, CommonFlags& f, bool io_flags = true) {
  cmd->add_option("--config", f.config_path, "JSON config file");
  cmd->add_option("--out", f.out_dir, "output directory");
  cmd->add_option("--seed", f.seed, "random seed (overrides config)");
  if (io_flags) {
    cmd->add_option("--input", f.input, "LR ASL volume (.nii/.nii.gz/.f32)");
    cmd->add_option("--prior", f.prior, "anatomical prior volume");
    cmd->add_option("--checkpoints", f.checkpoint_dir, "checkpoint directory");
  }
}

int cmd_train(RunConfig cfg, std::optional<int> epochs, std::optional<int> scales) {
  if (epochs) cfg.train.epochs_per_scale = *epochs;
  if (scales) cfg.pyramid.num_scales = *scales;
  if (cfg.asl_lr.empty()) throw ConfigError("train: paths.asl_lr (--input) is required");
  if (cfg.t1.empty()) throw ConfigError("train: paths.t1 (--prior) is required");
  apply_device_env(cfg);
  write_effective_config(cfg);

  auto x = aslsr::load_volume<float>(cfg.asl_lr);
  auto a = aslsr::load_volume<float>(cfg.t1);
  const std::string ckpt = cfg.resolved_checkpoint_dir();
  auto [tp, log] = aslsr::train_pyramid(x, a, cfg.pyramid, cfg.train, cfg.loss, cfg.filter,
                                        cfg.generator, cfg.discriminator, ckpt, &std::cerr);
  std::cout << "trained " << tp.num_scales() << " scales; checkpoints in " << ckpt << "\n";
  if (!log.records.empty()) {
    const auto& last = log.records.back();
    std::cout << "final scale " << last.scale << " epoch " << last.epoch << ": total "
              << last.total << " (adv " << last.adv << ", mse " << last.mse << ", lowpass "
              << last.lowpass << ")\n";
  }
  return 0;
}

int cmd_superres(RunConfig cfg, const std::string& target_flag, std::string output) {
  if (cfg.asl_lr.empty()) throw ConfigError("superres: paths.asl_lr (--input) is required");
  if (cfg.t1.empty()) throw ConfigError("superres: paths.t1 (--prior) is required");
  if (!target_flag.empty()) {
    if (target_flag == "match-t1")
      cfg.sr_target.reset();
    else
      cfg.sr_target = parse_shape_flag(target_flag, "--target");
  }
  write_effective_config(cfg);

  auto tp = aslsr::load_pyramid<float>(cfg.resolved_checkpoint_dir());
  aslsr::SRRequest<float> req;
  req.trained = &tp;
  req.x = aslsr::load_volume<float>(cfg.asl_lr);
  req.a_hr = aslsr::load_volume<float>(cfg.t1);
  req.target = cfg.sr_target;
  auto sr = aslsr::super_resolve(req, &std::cerr);

  if (output.empty()) output = (fs::path(cfg.out_dir) / "sr.f32").string();
  aslsr::save_volume(sr, output);
  std::cout << "wrote " << output << " shape " << aslsr::shape_str(sr.shape) << " spacing ("
            << sr.spacing[0] << ", " << sr.spacing[1] << ", " << sr.spacing[2] << ") mm\n";
  return 0;
}

int cmd_evaluate(RunConfig cfg, const std::vector<std::string>& ref_flags,
                 const std::vector<std::string>& method_flags, bool no_baselines) {
  if (cfg.asl_lr.empty())
    throw ConfigError("evaluate: paths.asl_lr (--input) is required for the baselines");
  if (ref_flags.empty()) throw ConfigError("evaluate: at least one --ref NAME=PATH is required");
  write_effective_config(cfg);

  auto x_lr = aslsr::load_volume<float>(cfg.asl_lr);
  std::vector<std::pair<std::string, aslsr::Volume3<float>>> refs, methods;
  for (const auto& s : ref_flags) {
    auto [name, path] = parse_named_path(s, "--ref");
    refs.emplace_back(name, aslsr::load_volume<float>(path));
  }
  for (const auto& s : method_flags) {
    auto [name, path] = parse_named_path(s, "--method");
    methods.emplace_back(name, aslsr::load_volume<float>(path));
  }

  auto report = aslsr::run_comparison(x_lr, refs, methods, cfg.metrics, !no_baselines);
  const fs::path dir(cfg.out_dir);
  {
    std::ofstream f(dir / "report.json");
    if (!f) throw IoError("cannot write " + (dir / "report.json").string());
    f << report.to_json().dump(2) << "\n";
  }
  {
    std::ofstream f(dir / "report.txt");
    if (!f) throw IoError("cannot write " + (dir / "report.txt").string());
    f << report.to_table();
  }
  std::cout << report.to_table();
  return 0;
}

int cmd_phantom(RunConfig cfg, const std::string& format) {
  if (format != "f32" && format != "nii" && format != "nii.gz")
    throw ConfigError("phantom: --format must be f32, nii, or nii.gz");
  cfg.phantom.validate();
  write_effective_config(cfg);

  auto [hr_asl, t1] = aslsr::make_phantom<float>(cfg.phantom);
  std::mt19937_64 rng(cfg.phantom.seed ^ 0x51b5c1f0aa2c7e93ull);
  auto lr_asl = aslsr::degrade(hr_asl, cfg.phantom.downsample_factor, cfg.phantom.noise_sigma,
                               rng, cfg.phantom.noise_model);

  const std::string ext = "." + format;
  const fs::path dir(cfg.out_dir);
  aslsr::save_volume(hr_asl, dir / ("hr_asl" + ext));
  aslsr::save_volume(t1, dir / ("t1" + ext));
  aslsr::save_volume(lr_asl, dir / ("lr_asl" + ext));

  nlohmann::json manifest;
  manifest["format"] = format;
  manifest["files"] = {{"hr_asl", "hr_asl" + ext}, {"t1", "t1" + ext}, {"lr_asl", "lr_asl" + ext}};
  manifest["params"] = aslsr::effective_config(cfg)["phantom"];
  manifest["lr_shape"] = {lr_asl.shape[0], lr_asl.shape[1], lr_asl.shape[2]};
  std::ofstream f(dir / "manifest.json");
  if (!f) throw IoError("cannot write " + (dir / "manifest.json").string());
  f << manifest.dump(2) << "\n";

  std::cout << "wrote phantom triple to " << dir.string() << " (hr " << aslsr::shape_str(hr_asl.shape)
            << ", lr " << aslsr::shape_str(lr_asl.shape) << ")\n";
  return 0;
}

int cmd_baseline(const std::string& input, const std::string& method_name,
                 const std::string& target_flag, const std::string& like,
                 const std::string& output) {
  if (input.empty()) throw ConfigError("baseline: --input is required");
  if (output.empty()) throw ConfigError("baseline: --output is required");
  aslsr::ResampleMethod method;
  if (method_name == "nearest")
    method = aslsr::ResampleMethod::nearest;
  else if (method_name == "linear")
    method = aslsr::ResampleMethod::linear;
  else if (method_name == "spline")
    method = aslsr::ResampleMethod::spline;
  else
    throw ConfigError("baseline: --method must be nearest, linear, or spline");

  auto x = aslsr::load_volume<float>(input);
  Shape3 target;
  if (!target_flag.empty())
    target = parse_shape_flag(target_flag, "--target");
  else if (!like.empty())
    target = aslsr::load_volume<float>(like).shape;
  else
    throw ConfigError("baseline: either --target NX,NY,NZ or --like PATH is required");

  auto out = aslsr::baseline_upsample(x, target, method);
  aslsr::save_volume(out, output);
  std::cout << "wrote " << output << " shape " << aslsr::shape_str(out.shape) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised multi-scale super-resolution for 3D ASL volumes"};
  app.require_subcommand(1);

  CommonFlags tf, sf, ef, pf;
  std::optional<int> train_epochs, train_scales;
  std::string sr_target, sr_output;
  std::vector<std::string> eval_refs, eval_methods;
  bool eval_no_baselines = false;
  std::string phantom_format = "f32";
  std::string ph_shape, ph_factor, ph_contrast, ph_noise_model;
  std::optional<int> ph_n;
  std::optional<double> ph_noise_sigma;
  std::string bl_input, bl_method = "linear", bl_target, bl_like, bl_output;

  auto* train = app.add_subcommand("train", "multi-scale training on one LR/prior pair");
  add_common(train, tf);
  train->add_option("--epochs", train_epochs, "epochs per scale");
  train->add_option("--scales", train_scales, "number of scales (N+1)");

  auto* superres = app.add_subcommand("superres", "generate the SR volume from checkpoints");
  add_common(superres, sf);
  superres->add_option("--target", sr_target, "target grid: match-t1 or NX,NY,NZ");
  superres->add_option("--output", sr_output, "output volume path (default <out>/sr.f32)");

  auto* evaluate = app.add_subcommand("evaluate", "score methods against reference volumes");
  add_common(evaluate, ef);
  evaluate->add_option("--ref", eval_refs, "reference volume as NAME=PATH (repeatable)");
  evaluate->add_option("--method", eval_methods, "method output as NAME=PATH (repeatable)");
  evaluate->add_flag("--no-baselines", eval_no_baselines,
                     "skip the nearest/linear/spline baselines");

  auto* phantom = app.add_subcommand("phantom", "emit a synthetic HR/T1/LR triple");
  add_common(phantom, pf, /*io_flags=*/false);
  phantom->add_option("--shape", ph_shape, "HR shape NX,NY,NZ");
  phantom->add_option("--n-ellipsoids", ph_n, "number of structures");
  phantom->add_option("--contrast", ph_contrast, "shared_structure | partial_overlap");
  phantom->add_option("--noise-model", ph_noise_model, "gaussian | rician");
  phantom->add_option("--noise-sigma", ph_noise_sigma, "LR noise standard deviation");
  phantom->add_option("--factor", ph_factor, "downsample factor FX,FY,FZ");
  phantom->add_option("--format", phantom_format, "volume format: f32 (default), nii, nii.gz");

  auto* baseline = app.add_subcommand("baseline", "interpolation upsampling baseline");
  baseline->add_option("--input", bl_input, "input volume");
  baseline->add_option("--method", bl_method, "nearest | linear | spline");
  baseline->add_option("--target", bl_target, "target shape NX,NY,NZ");
  baseline->add_option("--like", bl_like, "take the target shape from this volume");
  baseline->add_option("--output", bl_output, "output volume path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (train->parsed()) return cmd_train(tf.resolve(), train_epochs, train_scales);
    if (superres->parsed()) return cmd_superres(sf.resolve(), sr_target, sr_output);
    if (evaluate->parsed())
      return cmd_evaluate(ef.resolve(), eval_refs, eval_methods, eval_no_baselines);
    if (phantom->parsed()) {
      RunConfig cfg = pf.resolve();
      if (!ph_shape.empty()) cfg.phantom.shape = parse_shape_flag(ph_shape, "--shape");
      if (!ph_factor.empty())
        cfg.phantom.downsample_factor = parse_factor_flag(ph_factor, "--factor");
      if (ph_n) cfg.phantom.n_ellipsoids = *ph_n;
      if (ph_noise_sigma) cfg.phantom.noise_sigma = *ph_noise_sigma;
      if (!ph_contrast.empty())
        cfg.phantom.contrast = aslsr::detail::parse_contrast(ph_contrast, "--contrast");
      if (!ph_noise_model.empty())
        cfg.phantom.noise_model = aslsr::detail::parse_noise_model(ph_noise_model, "--noise-model");
      return cmd_phantom(std::move(cfg), phantom_format);
    }
    if (baseline->parsed()) return cmd_baseline(bl_input, bl_method, bl_target, bl_like, bl_output);
  } catch (const aslsr::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
