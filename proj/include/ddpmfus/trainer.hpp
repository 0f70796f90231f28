#pragma once

// Training loop: random scale-aligned patches, uniform timesteps, the simple
// noise-prediction loss and Adam under cosine annealing with restarts.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ddpmfus/checkpoint.hpp"
#include "ddpmfus/cube.hpp"
#include "ddpmfus/degrade.hpp"
#include "ddpmfus/denoiser.hpp"
#include "ddpmfus/diffusion.hpp"
#include "ddpmfus/errors.hpp"
#include "ddpmfus/optim.hpp"
#include "ddpmfus/schedule.hpp"

namespace ddpmfus {

/// A ground-truth HrHSI with its simulated LrHSI and HrMSI.
struct TrainingTriple {
  std::string name;
  HsiCube x;
  HsiCube y;
  HsiCube z;
};

using Dataset = std::vector<TrainingTriple>;

inline Dataset build_dataset(const std::vector<HsiCube>& truths, const ObservationModel& model,
                             std::uint64_t noise_seed = 0, const std::vector<std::string>& names = {}) {
  Dataset ds;
  std::mt19937_64 rng(noise_seed);
  for (std::size_t i = 0; i < truths.size(); ++i) {
    TrainingTriple tr;
    tr.name = i < names.size() ? names[i] : "image_" + std::to_string(i);
    tr.x = truths[i];
    tr.y = spatial_degrade(truths[i], model, &rng);
    tr.z = spectral_degrade(truths[i], model, &rng);
    ds.push_back(std::move(tr));
  }
  return ds;
}

struct PatchTriple {
  HsiCube x0;
  HsiCube y;
  HsiCube z;
};

/// Crops an aligned (x0, y, z) triple; crop origins lie on the scale grid so
/// y is exactly the LrHSI footprint of x0.
inline PatchTriple sample_patch(const Dataset& data, int patch, int scale, std::mt19937_64& rng) {
  if (data.empty()) throw ParameterError("sample_patch: empty dataset");
  if (patch < 1 || scale < 1 || patch % scale)
    throw ParameterError("sample_patch: patch " + std::to_string(patch) + " not a multiple of scale " + std::to_string(scale));
  const auto& item = data[std::uniform_int_distribution<std::size_t>(0, data.size() - 1)(rng)];
  const std::size_t p = static_cast<std::size_t>(patch), s = static_cast<std::size_t>(scale);
  if (item.x.height < p || item.x.width < p)
    throw DimensionError("sample_patch: image " + item.name + " (" + item.x.shape_string() + ") smaller than patch " +
                         std::to_string(patch));
  const std::size_t r = s * std::uniform_int_distribution<std::size_t>(0, (item.x.height - p) / s)(rng);
  const std::size_t c = s * std::uniform_int_distribution<std::size_t>(0, (item.x.width - p) / s)(rng);
  return {item.x.crop(r, c, p, p), item.y.crop(r / s, c / s, p / s, p / s), item.z.crop(r, c, p, p)};
}

/// Loss of one training sample in model range; differentiable in params.
template <class T>
Tensor<T> sample_loss(const DenoiserParams<T>& params, const DenoiserConfig& cfg, const Tensor<T>& x0,
                      const Tensor<T>& y, const Tensor<T>& z, int t, const Tensor<T>& eps, const NoiseSchedule& sched,
                      int loss_p) {
  const auto xt = q_sample(x0, t, eps, sched);
  const auto pred = predict_noise(params, cfg, assemble_condition(xt, y, z), t);
  return simple_loss(eps, pred, loss_p);
}

/// One optimizer step over a batch: independent t and noise per item, mean
/// loss, Adam update. Returns the batch loss.
template <class T>
double train_step(DenoiserParams<T>& params, const DenoiserConfig& cfg, AdamState<T>& opt,
                  const std::vector<PatchTriple>& batch, const NoiseSchedule& sched, int loss_p, double lr,
                  std::mt19937_64& rng, long step_index = 0, double grad_clip = 0.0) {
  if (batch.empty()) throw ParameterError("train_step: empty batch");
  for (const auto& b : batch)
    if (!b.x0.same_shape(batch.front().x0) || !b.y.same_shape(batch.front().y) || !b.z.same_shape(batch.front().z))
      throw DimensionError("train_step: batch items differ in shape");
  std::uniform_int_distribution<int> pick_t(1, sched.steps());
  const T inv_b = T(1) / static_cast<T>(batch.size());
  double total = 0.0;
  for (const auto& item : batch) {
    const int t = pick_t(rng);
    const auto x0 = to_model_range<T>(item.x0);
    const auto eps = gaussian_like<T>(x0.shape(), rng);
    auto loss = sample_loss(params, cfg, x0, to_model_range<T>(item.y), to_model_range<T>(item.z), t, eps, sched, loss_p);
    total += static_cast<double>(loss.item()) / static_cast<double>(batch.size());
    backward(scale(loss, inv_b));
  }
  if (!std::isfinite(total)) {
    params.zero_grad();
    throw TrainingError("non-finite loss at step " + std::to_string(step_index));
  }
  if (grad_clip > 0.0) clip_grad_norm(params, grad_clip);
  opt.update(params, lr);
  params.zero_grad();
  return total;
}

/// Generator for one training step; depends only on (seed, step), which
/// makes resumed runs replay the uninterrupted random stream.
inline std::mt19937_64 step_rng(std::uint64_t seed, std::uint64_t step) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32), 0x5eedu};
  return std::mt19937_64(seq);
}

struct LossRecord {
  long step;
  double loss;
  double lr;
};

struct TrainResult {
  std::string final_checkpoint;
  std::vector<LossRecord> losses;  // this invocation only
};

using TrainProgress = std::function<void(const LossRecord&)>;

/// Runs the loop from scratch or from a resume checkpoint. Writes loss.tsv
/// (step, loss, lr), ckpt_<step>.bin every checkpoint_every steps and
/// final.ckpt at the end.
inline TrainResult train(const TrainConfig& config, const DenoiserConfig& net, const Dataset& data,
                         const std::string& out_dir, const std::optional<std::string>& resume_from = std::nullopt,
                         const TrainProgress& progress = {}) {
  net.validate();
  config.validate(net);
  if (data.empty()) throw ParameterError("train: dataset is empty");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw TrainingError("cannot create output directory '" + out_dir + "': " + ec.message());

  Checkpoint state;
  state.config = net;
  state.train = config;
  if (resume_from) {
    Checkpoint ck = load_checkpoint(*resume_from);
    if (!ck.optimizer)
      throw TrainingError("checkpoint '" + *resume_from + "' has no optimizer state; it supports inference only");
    if (!(ck.config == net)) throw TrainingError("checkpoint architecture differs from the run configuration");
    state.params = std::move(ck.params);
    state.optimizer = std::move(ck.optimizer);
    state.step = ck.step;
  } else {
    state.params = init_params<float>(net, config.seed ^ 0x9e3779b97f4a7c15ull);
    state.optimizer.emplace();
    state.optimizer->init(state.params);
  }

  const auto sched = linear_schedule(config.timesteps, config.beta_end);
  const fs::path dir(out_dir);
  std::string last_durable = resume_from.value_or("");
  auto save = [&](const fs::path& p) {
    try {
      save_checkpoint(p.string(), state);
    } catch (const Error& e) {
      throw TrainingError(std::string("checkpoint write failed (") + e.what() + "); last durable checkpoint: " +
                          (last_durable.empty() ? "none" : last_durable));
    }
    last_durable = p.string();
  };

  std::ofstream log((dir / "loss.tsv").string(), resume_from ? std::ios::app : std::ios::trunc);
  if (!log) throw TrainingError("cannot open loss log in '" + out_dir + "'");
  log.precision(9);

  TrainResult result;
  if (!resume_from) save(dir / "ckpt_0.bin");
  const auto iterations = static_cast<std::uint64_t>(config.iterations);
  for (std::uint64_t step = state.step; step < iterations; ++step) {
    auto rng = step_rng(config.seed, step);
    std::vector<PatchTriple> batch;
    for (int b = 0; b < config.batch_size; ++b) batch.push_back(sample_patch(data, config.patch, net.scale, rng));
    const double lr = cosine_lr(static_cast<long>(step), config.lr_max, config.cycle);
    const double loss = train_step(state.params, net, *state.optimizer, batch, sched, config.loss_p, lr, rng,
                                   static_cast<long>(step), config.grad_clip);
    state.step = step + 1;
    LossRecord rec{static_cast<long>(step), loss, lr};
    result.losses.push_back(rec);
    log << rec.step << '\t' << rec.loss << '\t' << rec.lr << '\n';
    if (progress) progress(rec);
    if (config.checkpoint_every > 0 && state.step % static_cast<std::uint64_t>(config.checkpoint_every) == 0) {
      log.flush();
      save(dir / ("ckpt_" + std::to_string(state.step) + ".bin"));
    }
  }
  log.flush();
  if (!log) throw TrainingError("loss log write failed; last durable checkpoint: " + last_durable);
  save(dir / "final.ckpt");
  result.final_checkpoint = (dir / "final.ckpt").string();
  return result;
}

}  // namespace ddpmfus
