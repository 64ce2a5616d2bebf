#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aslsr/networks.hpp"
#include "aslsr/pyramid.hpp"

namespace aslsr {

using json = nlohmann::json;

/// Frozen result of multi-scale training: one generator per scale plus the
/// normalization and geometry needed to run generation later.
template <class S>
struct TrainedPyramid {
  PyramidConfig pyramid;
  GeneratorSpec gen_spec;  // finest-scale spec (scale 0 runs with residual off)
  DiscriminatorSpec disc_spec;
  std::vector<std::shared_ptr<nn::Generator<S>>> generators;  // coarse -> fine
  std::vector<Shape3> scale_shapes;
  Eigen::Vector3d base_spacing{1, 1, 1};
  Eigen::Vector3d base_origin{0, 0, 0};
  NormParams<S> norm_x, norm_a;
  std::uint64_t seed = 0;
  double noise_sigma0 = 1.0;

  Index num_scales() const { return static_cast<Index>(generators.size()); }
  const nn::Generator<S>& finest() const {
    if (generators.empty()) throw ConfigError("trained pyramid has no generators");
    return *generators.back();
  }
};

namespace detail {

inline constexpr char kParamMagic[8] = {'A', 'S', 'L', 'S', 'R', 'C', 'K', '1'};

inline std::uint64_t fnv1a64(const unsigned char* p, size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace detail

/// FNV-1a over the float32 image of all tensors, in parameter order. Used to
/// verify that frozen parameter sets stay untouched.
template <class S>
std::uint64_t params_checksum(const nn::ParamSet<S>& ps) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  std::vector<float> buf;
  for (const auto& [name, var] : ps.items) {
    h = detail::fnv1a64(reinterpret_cast<const unsigned char*>(name.data()), name.size(), h);
    buf.resize(static_cast<size_t>(var->value.size()));
    for (Index i = 0; i < var->value.size(); ++i) buf[static_cast<size_t>(i)] = float(var->value.data[i]);
    h = detail::fnv1a64(reinterpret_cast<const unsigned char*>(buf.data()),
                        buf.size() * sizeof(float), h);
  }
  return h;
}

/// Write a parameter set as float32, preceded by a JSON header describing
/// names and shapes. Reload is bit-exact for float parameters.
template <class S>
void save_params(const nn::ParamSet<S>& ps, const std::string& signature, std::uint64_t seed,
                 const std::filesystem::path& path) {
  json header;
  header["format"] = "aslsr-params-1";
  header["signature"] = signature;
  header["seed"] = seed;
  header["dtype"] = "f32";
  json tensors = json::array();
  for (const auto& [name, var] : ps.items) {
    json t;
    t["name"] = name;
    t["dims"] = var->value.dims;
    tensors.push_back(std::move(t));
  }
  header["tensors"] = std::move(tensors);
  const std::string htext = header.dump();

  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  out.write(detail::kParamMagic, sizeof(detail::kParamMagic));
  const std::uint64_t hlen = htext.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  std::vector<float> buf;
  for (const auto& [name, var] : ps.items) {
    (void)name;
    buf.resize(static_cast<size_t>(var->value.size()));
    for (Index i = 0; i < var->value.size(); ++i) buf[static_cast<size_t>(i)] = float(var->value.data[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw IoError("short write on checkpoint: " + path.string());
}

/// Load parameters saved by save_params into an existing (architecturally
/// matching) parameter set.
template <class S>
void load_params(nn::ParamSet<S>& ps, const std::string& expected_signature,
                 const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, detail::kParamMagic, 8) != 0)
    throw FormatError("not a parameter checkpoint (bad magic): " + path.string());
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in || hlen > (std::uint64_t(1) << 24))
    throw FormatError("corrupt checkpoint header length in " + path.string());
  std::string htext(hlen, '\0');
  in.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw FormatError("truncated checkpoint header in " + path.string());
  json header;
  try {
    header = json::parse(htext);
  } catch (const json::exception& e) {
    throw FormatError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  if (header.value("format", "") != "aslsr-params-1")
    throw FormatError("unsupported checkpoint format in " + path.string());
  if (header.value("signature", "") != expected_signature)
    throw ConfigError("checkpoint architecture mismatch in " + path.string() + ": file has '" +
                      header.value("signature", "") + "', expected '" + expected_signature + "'");
  const auto& tensors = header.at("tensors");
  if (tensors.size() != ps.items.size())
    throw FormatError("checkpoint tensor count mismatch in " + path.string());
  std::vector<float> buf;
  for (size_t i = 0; i < ps.items.size(); ++i) {
    auto& [name, var] = ps.items[i];
    const auto& t = tensors[i];
    const auto dims = t.at("dims").get<std::vector<Index>>();
    if (t.at("name").get<std::string>() != name || dims != var->value.dims)
      throw FormatError("checkpoint tensor mismatch at '" + name + "' in " + path.string());
    buf.resize(static_cast<size_t>(var->value.size()));
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw FormatError("truncated tensor data at '" + name + "' in " + path.string());
    for (Index j = 0; j < var->value.size(); ++j) var->value.data[j] = S(buf[static_cast<size_t>(j)]);
    if (!var->value.data.isFinite().all())
      throw NumericError("checkpoint tensor '" + name + "' contains NaN/Inf");
  }
}

namespace detail {

inline std::string gen_ckpt_name(Index n) { return "gen_scale_" + std::to_string(n) + ".ckpt"; }
inline std::string disc_ckpt_name(Index n) { return "disc_scale_" + std::to_string(n) + ".ckpt"; }

inline const char* norm_mode_name(NormMode m) {
  return m == NormMode::min_max_to_unit ? "min_max" : "zscore";
}
inline NormMode norm_mode_from(const std::string& s) {
  if (s == "min_max") return NormMode::min_max_to_unit;
  if (s == "zscore") return NormMode::zscore;
  throw FormatError("unknown normalization mode '" + s + "'");
}

template <class S>
json norm_to_json(const NormParams<S>& p) {
  return json{{"shift", double(p.shift)}, {"scale", double(p.scale)}, {"mode", norm_mode_name(p.mode)}};
}

template <class S>
NormParams<S> norm_from_json(const json& j) {
  NormParams<S> p;
  p.shift = S(j.at("shift").get<double>());
  p.scale = S(j.at("scale").get<double>());
  p.mode = norm_mode_from(j.at("mode").get<std::string>());
  return p;
}

inline json gen_spec_to_json(const GeneratorSpec& g) {
  return json{{"in_channels", g.in_channels}, {"out_channels", g.out_channels},
              {"levels", g.levels},           {"base_width", g.base_width},
              {"leaky_slope", g.leaky_slope}, {"norm_eps", g.norm_eps},
              {"residual", g.residual}};
}

inline json disc_spec_to_json(const DiscriminatorSpec& d) {
  return json{{"in_channels", d.in_channels},
              {"base_width", d.base_width},
              {"strides", d.strides},
              {"leaky_slope", d.leaky_slope}};
}

}  // namespace detail

/// Persist a trained pyramid: one generator checkpoint per scale plus a
/// pyramid.json manifest. Safe to call after each scale; the manifest's
/// completed_scales field tracks progress so aborted runs keep partial state.
template <class S>
void save_pyramid(const TrainedPyramid<S>& tp, const std::filesystem::path& dir,
                  Index completed_scales = -1) {
  if (completed_scales < 0) completed_scales = tp.num_scales();
  std::filesystem::create_directories(dir);
  for (Index n = 0; n < completed_scales; ++n)
    save_params(tp.generators[static_cast<size_t>(n)]->params(),
                tp.generators[static_cast<size_t>(n)]->signature(), tp.seed,
                dir / detail::gen_ckpt_name(n));

  json j;
  j["format"] = "aslsr-pyramid-1";
  j["seed"] = tp.seed;
  j["noise_sigma0"] = tp.noise_sigma0;
  j["pyramid"] = {{"scale_factor", tp.pyramid.r},
                  {"num_scales", tp.num_scales()},
                  {"min_extent", tp.pyramid.min_extent}};
  j["generator_spec"] = detail::gen_spec_to_json(tp.gen_spec);
  j["discriminator_spec"] = detail::disc_spec_to_json(tp.disc_spec);
  j["normalization"] = {{"x", detail::norm_to_json(tp.norm_x)}, {"a", detail::norm_to_json(tp.norm_a)}};
  j["base_spacing"] = {tp.base_spacing[0], tp.base_spacing[1], tp.base_spacing[2]};
  j["base_origin"] = {tp.base_origin[0], tp.base_origin[1], tp.base_origin[2]};
  j["completed_scales"] = completed_scales;
  json scales = json::array();
  for (size_t n = 0; n < tp.scale_shapes.size(); ++n) {
    scales.push_back(json{{"shape", tp.scale_shapes[n]},
                          {"residual", tp.generators.size() > n
                                           ? tp.generators[n]->spec().residual
                                           : (n > 0 && tp.gen_spec.residual)},
                          {"generator", detail::gen_ckpt_name(static_cast<Index>(n))}});
  }
  j["scales"] = std::move(scales);

  std::ofstream out(dir / "pyramid.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "pyramid.json").string());
  out << j.dump(2) << "\n";
}

/// Load a trained pyramid saved by save_pyramid. Fails with the list of
/// missing scales when checkpoints are incomplete.
template <class S>
TrainedPyramid<S> load_pyramid(const std::filesystem::path& dir) {
  const auto manifest = dir / "pyramid.json";
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open " + manifest.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError("corrupt pyramid manifest " + manifest.string() + ": " + e.what());
  }
  if (j.value("format", "") != "aslsr-pyramid-1")
    throw FormatError("unsupported pyramid manifest format in " + manifest.string());

  TrainedPyramid<S> tp;
  tp.seed = j.at("seed").get<std::uint64_t>();
  tp.noise_sigma0 = j.at("noise_sigma0").get<double>();
  const auto& pj = j.at("pyramid");
  tp.pyramid.r = pj.at("scale_factor").get<double>();
  tp.pyramid.num_scales = pj.at("num_scales").get<int>();
  tp.pyramid.min_extent = pj.at("min_extent").get<Index>();
  const auto& gj = j.at("generator_spec");
  tp.gen_spec.in_channels = gj.at("in_channels").get<Index>();
  tp.gen_spec.out_channels = gj.at("out_channels").get<Index>();
  tp.gen_spec.levels = gj.at("levels").get<Index>();
  tp.gen_spec.base_width = gj.at("base_width").get<Index>();
  tp.gen_spec.leaky_slope = gj.at("leaky_slope").get<double>();
  tp.gen_spec.norm_eps = gj.at("norm_eps").get<double>();
  tp.gen_spec.residual = gj.at("residual").get<bool>();
  const auto& dj = j.at("discriminator_spec");
  tp.disc_spec.in_channels = dj.at("in_channels").get<Index>();
  tp.disc_spec.base_width = dj.at("base_width").get<Index>();
  tp.disc_spec.strides = dj.at("strides").get<std::vector<Index>>();
  tp.disc_spec.leaky_slope = dj.at("leaky_slope").get<double>();
  tp.norm_x = detail::norm_from_json<S>(j.at("normalization").at("x"));
  tp.norm_a = detail::norm_from_json<S>(j.at("normalization").at("a"));
  for (int ax = 0; ax < 3; ++ax) {
    tp.base_spacing[ax] = j.at("base_spacing").at(ax).get<double>();
    tp.base_origin[ax] = j.at("base_origin").at(ax).get<double>();
  }

  const auto& scales = j.at("scales");
  const Index total = static_cast<Index>(scales.size());
  const Index completed = j.value("completed_scales", total);
  if (completed < total) {
    std::string missing;
    for (Index n = completed; n < total; ++n)
      missing += (missing.empty() ? "" : ", ") + std::to_string(n);
    throw IoError("incomplete checkpoints in " + dir.string() + ": missing scale(s) " + missing);
  }
  for (Index n = 0; n < total; ++n) {
    const auto& sj = scales[static_cast<size_t>(n)];
    Shape3 sh{};
    for (int ax = 0; ax < 3; ++ax) sh[ax] = sj.at("shape").at(ax).get<Index>();
    tp.scale_shapes.push_back(sh);
    GeneratorSpec gs = tp.gen_spec;
    gs.residual = sj.at("residual").get<bool>();
    auto g = std::make_shared<nn::Generator<S>>(gs, tp.seed);
    const auto file = dir / sj.at("generator").get<std::string>();
    if (!std::filesystem::exists(file))
      throw IoError("incomplete checkpoints in " + dir.string() + ": missing " +
                    sj.at("generator").get<std::string>());
    load_params(g->params(), g->signature(), file);
    tp.generators.push_back(std::move(g));
  }
  return tp;
}

}  // namespace aslsr
