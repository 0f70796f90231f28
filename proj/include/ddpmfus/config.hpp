#pragma once

// JSON mappings of the configuration structs and the run-config file.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddpmfus/degrade.hpp"
#include "ddpmfus/denoiser.hpp"
#include "ddpmfus/errors.hpp"
#include "ddpmfus/optim.hpp"
#include "ddpmfus/sampler.hpp"

namespace ddpmfus {

inline void to_json(nlohmann::json& j, const DenoiserConfig& c) {
  j = nlohmann::json{{"bands", c.bands},
                     {"msi_bands", c.msi_bands},
                     {"scale", c.scale},
                     {"base_channels", c.base_channels},
                     {"channel_multipliers", c.channel_multipliers},
                     {"attention_levels", c.attention_levels},
                     {"mid_attention", c.mid_attention},
                     {"res_blocks", c.res_blocks},
                     {"time_embed_dim", c.time_embed_dim},
                     {"groups", c.groups},
                     {"timesteps", c.timesteps}};
}

inline void from_json(const nlohmann::json& j, DenoiserConfig& c) {
  DenoiserConfig d;
  c.bands = j.value("bands", d.bands);
  c.msi_bands = j.value("msi_bands", d.msi_bands);
  c.scale = j.value("scale", d.scale);
  c.base_channels = j.value("base_channels", d.base_channels);
  c.channel_multipliers = j.value("channel_multipliers", d.channel_multipliers);
  c.attention_levels = j.value("attention_levels", d.attention_levels);
  c.mid_attention = j.value("mid_attention", d.mid_attention);
  c.res_blocks = j.value("res_blocks", d.res_blocks);
  c.time_embed_dim = j.value("time_embed_dim", d.time_embed_dim);
  c.groups = j.value("groups", d.groups);
  c.timesteps = j.value("timesteps", d.timesteps);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"iterations", c.iterations}, {"batch_size", c.batch_size},
                     {"patch", c.patch},           {"lr_max", c.lr_max},
                     {"cycle", c.cycle},           {"loss_p", c.loss_p},
                     {"timesteps", c.timesteps},   {"beta_end", c.beta_end},
                     {"seed", c.seed},             {"checkpoint_every", c.checkpoint_every},
                     {"grad_clip", c.grad_clip}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.iterations = j.value("iterations", d.iterations);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.patch = j.value("patch", d.patch);
  c.lr_max = j.value("lr_max", d.lr_max);
  c.cycle = j.value("cycle", d.cycle);
  c.loss_p = j.value("loss_p", d.loss_p);
  c.timesteps = j.value("timesteps", d.timesteps);
  c.beta_end = j.value("beta_end", d.beta_end);
  c.seed = j.value("seed", d.seed);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.grad_clip = j.value("grad_clip", d.grad_clip);
}

struct SamplerConfig {
  int steps = 1;
  std::string sigma = "zero";
  std::uint64_t seed = 0;
  std::string tiling = "auto";  // auto | always | never
};

inline TileMode parse_tile_mode(const std::string& s) {
  if (s == "auto") return TileMode::kAuto;
  if (s == "always") return TileMode::kAlways;
  if (s == "never") return TileMode::kNever;
  throw ParameterError("unknown tiling mode '" + s + "' (expected auto, always or never)");
}

/// Everything `train` and `ablate` need: hyperparameters, architecture,
/// observation model and dataset splits. Relative paths resolve against the
/// config file's directory.
struct RunConfig {
  TrainConfig train;
  DenoiserConfig denoiser;
  std::size_t block = 32;
  std::string srf_path;           // empty: use srf_uniform_groups
  std::size_t srf_uniform_groups = 0;
  double noise_std_y = 0.0;
  double noise_std_z = 0.0;
  std::vector<std::string> train_cubes;  // ground-truth HrHSI cubes
  std::vector<std::string> test_cubes;
  SamplerConfig sampler;
  std::string out_dir = "run";
  std::string source_text;  // raw file contents, for manifests
};

namespace detail {

inline std::string resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path.string() : (base / path).lexically_normal().string();
}

}  // namespace detail

inline RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir, bool check_paths = true) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("run config is not valid JSON: ") + e.what());
  }
  RunConfig rc;
  rc.source_text = text;
  try {
    if (j.contains("train")) rc.train = j["train"].get<TrainConfig>();
    if (j.contains("denoiser")) rc.denoiser = j["denoiser"].get<DenoiserConfig>();
    if (j.contains("observation")) {
      const auto& o = j["observation"];
      rc.block = o.value("block", rc.block);
      if (o.contains("srf")) rc.srf_path = detail::resolve(base_dir, o["srf"].get<std::string>());
      rc.srf_uniform_groups = o.value("srf_uniform_groups", rc.srf_uniform_groups);
      rc.noise_std_y = o.value("noise_std_y", 0.0);
      rc.noise_std_z = o.value("noise_std_z", 0.0);
    }
    if (j.contains("data")) {
      for (const auto& p : j["data"].value("train", std::vector<std::string>{}))
        rc.train_cubes.push_back(detail::resolve(base_dir, p));
      for (const auto& p : j["data"].value("test", std::vector<std::string>{}))
        rc.test_cubes.push_back(detail::resolve(base_dir, p));
    }
    if (j.contains("sampler")) {
      const auto& s = j["sampler"];
      rc.sampler.steps = s.value("steps", rc.sampler.steps);
      rc.sampler.sigma = s.value("sigma", rc.sampler.sigma);
      rc.sampler.seed = s.value("seed", rc.sampler.seed);
      rc.sampler.tiling = s.value("tiling", rc.sampler.tiling);
    }
    rc.out_dir = detail::resolve(base_dir, j.value("out_dir", rc.out_dir));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("run config field has the wrong type: ") + e.what());
  }

  rc.denoiser.validate();
  rc.train.validate(rc.denoiser);
  if (rc.block != static_cast<std::size_t>(rc.denoiser.scale))
    throw ConfigError("observation block " + std::to_string(rc.block) + " differs from denoiser scale " +
                      std::to_string(rc.denoiser.scale));
  if (rc.srf_path.empty() && rc.srf_uniform_groups == 0)
    throw ConfigError("observation needs either 'srf' (table path) or 'srf_uniform_groups'");
  if (rc.srf_path.empty() && rc.srf_uniform_groups != static_cast<std::size_t>(rc.denoiser.msi_bands))
    throw ConfigError("srf_uniform_groups must equal denoiser msi_bands");
  parse_sigma_mode(rc.sampler.sigma);
  parse_tile_mode(rc.sampler.tiling);
  if (rc.sampler.steps < 1 || rc.sampler.steps > rc.denoiser.timesteps) throw ConfigError("sampler steps out of range");
  if (check_paths) {
    if (rc.train_cubes.empty()) throw ConfigError("run config lists no training cubes");
    std::vector<std::string> all = rc.train_cubes;
    all.insert(all.end(), rc.test_cubes.begin(), rc.test_cubes.end());
    if (!rc.srf_path.empty()) all.push_back(rc.srf_path);
    for (const auto& p : all)
      if (!std::filesystem::exists(p)) throw LoadError("run config references missing file '" + p + "'");
  }
  return rc;
}

inline RunConfig load_run_config(const std::string& path, bool check_paths = true) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open run config '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_run_config(text, std::filesystem::absolute(path).parent_path(), check_paths);
}

/// Observation model for cubes with the given band wavelengths.
inline ObservationModel make_observation_model(const RunConfig& rc, const std::vector<double>& wavelengths, std::size_t bands) {
  ObservationModel m;
  m.block = rc.block;
  m.noise_std_y = rc.noise_std_y;
  m.noise_std_z = rc.noise_std_z;
  m.srf = rc.srf_path.empty() ? uniform_group_srf(bands, rc.srf_uniform_groups) : load_srf(rc.srf_path, wavelengths);
  if (m.srf.cols != bands)
    throw ConfigError("SRF has " + std::to_string(m.srf.cols) + " columns for " + std::to_string(bands) + "-band cubes");
  return m;
}

}  // namespace ddpmfus
