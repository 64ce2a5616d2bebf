#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "aslsr/checkpoint.hpp"
#include "aslsr/losses.hpp"
#include "aslsr/optim.hpp"

namespace aslsr {

struct TrainConfig {
  double lr = 1e-3;
  int epochs_per_scale = 2000;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  std::uint64_t seed = 0;
  double noise_sigma0 = 1.0;  // std of z0 in normalized units
  int checkpoint_every = 0;   // extra mid-scale checkpoints; 0 = scale end only
  std::string device = "cpu";
  bool inherit_discriminator = true;
  int progress_every = 50;  // stderr progress cadence; log records every epoch

  void validate() const {
    if (!(lr > 0)) throw ConfigError("train: lr must be > 0");
    if (epochs_per_scale < 1) throw ConfigError("train: epochs_per_scale must be >= 1");
    if (!(noise_sigma0 > 0)) throw ConfigError("train: noise_sigma0 must be > 0");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1))
      throw ConfigError("train: adam betas must lie in [0,1)");
    if (checkpoint_every < 0) throw ConfigError("train: checkpoint_every must be >= 0");
  }
};

struct TrainRecord {
  int scale = 0;
  int epoch = 0;  // 1-based
  double d_loss = 0;
  double adv = 0;
  double mse = 0;
  double lowpass = 0;
  double total = 0;
  double seconds = 0;  // wall clock since scale start
};

/// Line-delimited training log: a header object echoing the configuration
/// followed by one record per (scale, epoch).
struct TrainLog {
  json header;
  std::vector<TrainRecord> records;

  void write_jsonl(std::ostream& out) const {
    json h = header;
    h["type"] = "header";
    out << h.dump() << "\n";
    for (const auto& r : records) {
      json j{{"type", "epoch"},   {"scale", r.scale}, {"epoch", r.epoch},
             {"d_loss", r.d_loss}, {"adv", r.adv},     {"mse", r.mse},
             {"lowpass", r.lowpass}, {"total", r.total}, {"seconds", r.seconds}};
      out << j.dump() << "\n";
    }
  }
  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write train log: " + path.string());
    write_jsonl(out);
  }
  static TrainLog load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open train log: " + path.string());
    TrainLog log;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception& e) {
        throw FormatError("corrupt train log line: " + std::string(e.what()));
      }
      if (j.value("type", "") == "header") {
        log.header = j;
      } else {
        TrainRecord r;
        r.scale = j.at("scale").get<int>();
        r.epoch = j.at("epoch").get<int>();
        r.d_loss = j.at("d_loss").get<double>();
        r.adv = j.at("adv").get<double>();
        r.mse = j.at("mse").get<double>();
        r.lowpass = j.at("lowpass").get<double>();
        r.total = j.at("total").get<double>();
        r.seconds = j.at("seconds").get<double>();
        log.records.push_back(r);
      }
    }
    return log;
  }
};

/// i.i.d. Gaussian volume, mean 0, std sigma.
template <class S>
Volume3<S> sample_noise(Shape3 shape, double sigma, std::mt19937_64& rng,
                        Eigen::Vector3d spacing = {1, 1, 1}, Eigen::Vector3d origin = {0, 0, 0}) {
  if (!(sigma > 0)) throw ConfigError("sample_noise: sigma must be > 0");
  Volume3<S> v(shape, std::move(spacing), std::move(origin));
  std::normal_distribution<double> dist(0.0, sigma);
  for (Index i = 0; i < v.size(); ++i) v.data[i] = S(dist(rng));
  return v;
}

namespace detail {

template <class S>
ad::Var<S> volume_const(const Volume3<S>& v) {
  return ad::constant(ad::Tensor<S>::from_volume(v));
}

inline void check_finite_loss(double v, const char* term, Index scale, int epoch) {
  if (!std::isfinite(v))
    throw NumericError(std::string("non-finite ") + term + " loss at scale " +
                       std::to_string(scale) + ", epoch " + std::to_string(epoch));
}

}  // namespace detail

/// Generator cascade in normalized units: x0 = G0(z0, a0), then
/// xk = Gk(upsample(x(k-1)), ak) with linear upsampling, up to level `upto`.
template <class S>
Volume3<S> forward_cascade(const std::vector<std::shared_ptr<nn::Generator<S>>>& gens,
                           const ScalePyramid<S>& pyr, Index upto, double noise_sigma0,
                           std::mt19937_64& rng) {
  if (upto < 0 || upto >= static_cast<Index>(gens.size()) || upto >= pyr.num_scales())
    throw GeometryError("forward_cascade: level " + std::to_string(upto) + " out of range");
  ad::NoGradGuard ng;
  const auto& lv0 = pyr.level(0);
  Volume3<S> z0 = sample_noise<S>(lv0.x.shape, noise_sigma0, rng, lv0.x.spacing, lv0.x.origin);
  Volume3<S> cur = gens[0]->apply(z0, lv0.a);
  for (Index k = 1; k <= upto; ++k) {
    const auto& lv = pyr.level(k);
    Volume3<S> up = resample(cur, lv.x.shape, ResampleMethod::linear);
    up.spacing = lv.x.spacing;
    up.origin = lv.x.origin;
    cur = gens[static_cast<size_t>(k)]->apply(up, lv.a);
  }
  return cur;
}

/// Train scale n in place: gens[n] and disc are updated, lower scales stay
/// frozen. Appends one record per epoch to the log.
template <class S>
void train_scale(Index n, const ScalePyramid<S>& pyr,
                 std::vector<std::shared_ptr<nn::Generator<S>>>& gens,
                 nn::Discriminator<S>& disc, const TrainConfig& tc, const LossWeights& lw,
                 const GaussianFilterSpec& fs, std::mt19937_64& rng, TrainLog& log,
                 std::ostream* progress = nullptr) {
  tc.validate();
  lw.validate();
  fs.validate();
  const auto& lv = pyr.level(n);
  nn::Generator<S>& G = *gens[static_cast<size_t>(n)];

  nn::AdamConfig ac;
  ac.lr = tc.lr;
  ac.beta1 = tc.adam_beta1;
  ac.beta2 = tc.adam_beta2;
  nn::Adam<S> opt_g(G.params().vars(), ac);
  nn::Adam<S> opt_d(disc.params().vars(), ac);

  auto real = detail::volume_const(lv.x);
  auto prior = detail::volume_const(lv.a);
  const auto t0 = std::chrono::steady_clock::now();

  for (int epoch = 1; epoch <= tc.epochs_per_scale; ++epoch) {
    // (i) cascade input for this scale, without gradients, fresh noise.
    Volume3<S> input_vol;
    {
      ad::NoGradGuard ng;
      if (n == 0) {
        input_vol =
            sample_noise<S>(lv.x.shape, tc.noise_sigma0, rng, lv.x.spacing, lv.x.origin);
      } else {
        Volume3<S> below = forward_cascade(gens, pyr, n - 1, tc.noise_sigma0, rng);
        input_vol = resample(below, lv.x.shape, ResampleMethod::linear);
      }
    }
    auto input = detail::volume_const(input_vol);

    // (ii) critic updates on the detached fake.
    ad::Var<S> fake_detached;
    {
      ad::NoGradGuard ng;
      fake_detached = G.forward(input, prior);
    }
    double d_loss_value = 0;
    for (int s = 0; s < lw.d_steps_per_g; ++s) {
      auto d_loss = nn::critic_loss(disc, real, fake_detached, lw.lambda_gp, rng);
      d_loss_value = double(d_loss->value.scalar());
      detail::check_finite_loss(d_loss_value, "critic", n, epoch);
      opt_d.step(ad::gradient(d_loss, disc.params().vars()));
    }

    // (iii) one generator update against the scale label.
    auto fake = G.forward(input, prior);
    auto terms = nn::total_generator_loss(disc, fake, real, lw, fs);
    TrainRecord r;
    r.scale = static_cast<int>(n);
    r.epoch = epoch;
    r.d_loss = d_loss_value;
    r.adv = double(terms.adv->value.scalar());
    r.mse = double(terms.mse->value.scalar());
    r.lowpass = double(terms.lowpass->value.scalar());
    r.total = double(terms.total->value.scalar());
    detail::check_finite_loss(r.adv, "adversarial", n, epoch);
    detail::check_finite_loss(r.mse, "mse", n, epoch);
    detail::check_finite_loss(r.lowpass, "low-pass", n, epoch);
    detail::check_finite_loss(r.total, "total generator", n, epoch);
    opt_g.step(ad::gradient(terms.total, G.params().vars()));

    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.records.push_back(r);
    if (progress && tc.progress_every > 0 &&
        (epoch % tc.progress_every == 0 || epoch == 1 || epoch == tc.epochs_per_scale)) {
      *progress << "[scale " << n << "] epoch " << epoch << "/" << tc.epochs_per_scale
                << " d=" << r.d_loss << " adv=" << r.adv << " mse=" << r.mse
                << " lp=" << r.lowpass << "\n";
    }
  }
}

/// Full progressive training: scales 0..N, coarse to fine, with parameter
/// inheritance. Writes per-scale checkpoints (and the manifest) into
/// checkpoint_dir when given, keeping partial state if a later scale aborts.
template <class S>
std::pair<TrainedPyramid<S>, TrainLog> train_pyramid(
    const Volume3<S>& x, const Volume3<S>& a, const PyramidConfig& pc, const TrainConfig& tc,
    const LossWeights& lw, const GaussianFilterSpec& fs, const GeneratorSpec& gs,
    const DiscriminatorSpec& ds, const std::filesystem::path& checkpoint_dir = {},
    std::ostream* progress = nullptr) {
  tc.validate();
  lw.validate();
  fs.validate();
  gs.validate();
  ds.validate();

  TrainedPyramid<S> tp;
  tp.pyramid = pc;
  tp.gen_spec = gs;
  tp.disc_spec = ds;
  tp.seed = tc.seed;
  tp.noise_sigma0 = tc.noise_sigma0;
  tp.base_spacing = x.spacing;
  tp.base_origin = x.origin;

  auto [xn, norm_x] = normalize(x);
  auto [an, norm_a] = normalize(a);
  tp.norm_x = norm_x;
  tp.norm_a = norm_a;
  ScalePyramid<S> pyr = build_pyramid(xn, an, pc);
  const Index N = pyr.num_scales() - 1;
  for (Index k = 0; k <= N; ++k) tp.scale_shapes.push_back(pyr.level(k).x.shape);

  TrainLog log;
  log.header = json{{"lr", tc.lr},
                    {"epochs_per_scale", tc.epochs_per_scale},
                    {"adam_betas", {tc.adam_beta1, tc.adam_beta2}},
                    {"seed", tc.seed},
                    {"noise_sigma0", tc.noise_sigma0},
                    {"device", tc.device},
                    {"inherit_discriminator", tc.inherit_discriminator},
                    {"d_steps_per_g", lw.d_steps_per_g},
                    {"alpha", lw.alpha},
                    {"beta", lw.beta},
                    {"lambda_gp", lw.lambda_gp},
                    {"filter_sigma", fs.sigma},
                    {"filter_radius", fs.effective_radius()},
                    {"pyramid_r", pc.r},
                    {"num_scales", N + 1},
                    {"generator", detail::gen_spec_to_json(gs)},
                    {"discriminator", detail::disc_spec_to_json(ds)}};

  std::mt19937_64 rng(tc.seed);
  std::shared_ptr<nn::Discriminator<S>> disc, disc_prev;
  for (Index n = 0; n <= N; ++n) {
    GeneratorSpec gsn = gs;
    // Scale 0 consumes pure noise on the image channel; there is no identity
    // worth preserving, so the residual path is disabled there.
    if (n == 0) gsn.residual = false;
    auto G = std::make_shared<nn::Generator<S>>(gsn, tc.seed + std::uint64_t(n));
    if (n > 0) G->inherit_params(*tp.generators.back());
    disc = std::make_shared<nn::Discriminator<S>>(ds, tc.seed + std::uint64_t(n));
    if (n > 0 && tc.inherit_discriminator && disc_prev) disc->inherit_params(*disc_prev);

    tp.generators.push_back(G);
    try {
      train_scale(n, pyr, tp.generators, *disc, tc, lw, fs, rng, log, progress);
    } catch (...) {
      tp.generators.pop_back();  // scale n did not finish; keep prior scales on disk
      if (!checkpoint_dir.empty()) log.save(checkpoint_dir / "train_log.jsonl");
      throw;
    }
    disc_prev = disc;
    if (!checkpoint_dir.empty()) {
      save_pyramid(tp, checkpoint_dir, n + 1);
      save_params(disc->params(), disc->signature(), tc.seed,
                  checkpoint_dir / detail::disc_ckpt_name(n));
      log.save(checkpoint_dir / "train_log.jsonl");
    }
  }
  return {std::move(tp), std::move(log)};
}

}  // namespace aslsr
