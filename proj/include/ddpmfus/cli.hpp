#pragma once

// Command-line front end: simulate, train, fuse, eval, ablate and synth.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ddpmfus/checkpoint.hpp"
#include "ddpmfus/config.hpp"
#include "ddpmfus/cube_io.hpp"
#include "ddpmfus/degrade.hpp"
#include "ddpmfus/metrics.hpp"
#include "ddpmfus/sampler.hpp"
#include "ddpmfus/synthetic.hpp"
#include "ddpmfus/trainer.hpp"
#include "ddpmfus/version.hpp"

namespace ddpmfus {

namespace cli_detail {

namespace fs = std::filesystem;
using nlohmann::json;

inline std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline json score_json(const ImageScores& s) {
  json j;
  j["name"] = s.name;
  if (std::isinf(s.psnr))
    j["psnr_db"] = s.psnr > 0 ? "inf" : "-inf";
  else
    j["psnr_db"] = s.psnr;
  j["sam_rad"] = s.sam_rad;
  j["sam_deg"] = s.sam_deg;
  j["sam_skipped_fraction"] = s.sam_skipped_fraction;
  j["ergas"] = s.ergas;
  if (!s.ergas_excluded_bands.empty()) j["ergas_excluded_bands"] = s.ergas_excluded_bands;
  j["ssim"] = s.ssim;
  j["band_rmse"] = s.band_rmse;
  return j;
}

inline json report_json(const FusionReport& rep) {
  json j;
  j["units"] = "8-bit [0,255]";
  j["ergas_scale"] = rep.ergas_scale;
  j["per_image"] = json::array();
  for (const auto& s : rep.per_image) j["per_image"].push_back(score_json(s));
  j["averages"] = score_json(rep.average);
  return j;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw LoadError("cannot open '" + path + "' for writing");
  os << text;
  if (!os) throw LoadError("write to '" + path + "' failed");
}

/// Band index, then one RMSE column per image.
inline std::string band_rmse_table(const FusionReport& rep) {
  std::ostringstream os;
  os << "band";
  for (const auto& s : rep.per_image) os << '\t' << s.name;
  os << "\taverage\n";
  os << std::setprecision(9);
  for (std::size_t b = 0; b < rep.average.band_rmse.size(); ++b) {
    os << b;
    for (const auto& s : rep.per_image) os << '\t' << s.band_rmse[b];
    os << '\t' << rep.average.band_rmse[b] << '\n';
  }
  return os.str();
}

struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  std::string config_text;
  json seeds = json::object();
  json extra = json::object();

  void write(const std::string& path) const {
    json j;
    j["tool"] = "ddpmfus";
    j["version"] = kVersion;
    j["command"] = command;
    j["argv"] = argv;
    j["config_hash"] = "fnv1a64:" + fnv1a_hex(config_text);
    j["seeds"] = seeds;
    if (!extra.empty()) j["outputs"] = extra;
    write_text(path, j.dump(2) + "\n");
  }
};

inline std::vector<int> parse_int_list(const std::string& s, const char* what) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      int v = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ParameterError(std::string("bad ") + what + " entry '" + item + "'");
    }
  }
  if (out.empty()) throw ParameterError(std::string("empty ") + what + " list");
  return out;
}

inline std::vector<int> parse_losses(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "l1")
      out.push_back(1);
    else if (item == "l2")
      out.push_back(2);
    else
      throw ParameterError("unknown loss '" + item + "' (expected l1 or l2)");
  }
  if (out.empty()) throw ParameterError("empty loss list");
  return out;
}

inline std::vector<HsiCube> read_cubes(const std::vector<std::string>& paths) {
  std::vector<HsiCube> out;
  for (const auto& p : paths) out.push_back(read_cube(p));
  return out;
}

inline std::vector<std::string> stems(const std::vector<std::string>& paths) {
  std::vector<std::string> out;
  for (const auto& p : paths) out.push_back(fs::path(p).stem().string());
  return out;
}

inline Dataset dataset_from(const RunConfig& rc, const std::vector<std::string>& paths, std::uint64_t noise_seed) {
  auto cubes = read_cubes(paths);
  if (cubes.empty()) return {};
  const auto model = make_observation_model(rc, cubes.front().wavelengths_nm, cubes.front().bands);
  return build_dataset(cubes, model, noise_seed, stems(paths));
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string in, srf, out_lr, out_msi;
  std::size_t block = 32;
  std::size_t srf_groups = 0;
  double noise_y = 0.0, noise_z = 0.0;
  std::uint64_t seed = 0;
};

inline int run_simulate(const SimulateArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  if (a.srf.empty() == (a.srf_groups == 0)) throw ParameterError("simulate: give exactly one of --srf or --srf-groups");
  const auto x = read_cube(a.in);
  ObservationModel m;
  m.block = a.block;
  m.noise_std_y = a.noise_y;
  m.noise_std_z = a.noise_z;
  m.srf = a.srf.empty() ? uniform_group_srf(x.bands, a.srf_groups) : load_srf(a.srf, x.wavelengths_nm);
  std::mt19937_64 rng(a.seed);
  const auto y = spatial_degrade(x, m, &rng);
  const auto z = spectral_degrade(x, m, &rng);
  write_cube(a.out_lr, y);
  write_cube(a.out_msi, z);
  Manifest man{"simulate", argv, a.in + "|" + a.srf + "|" + std::to_string(a.block)};
  man.seeds["noise"] = a.seed;
  man.extra = {{"lr", a.out_lr}, {"msi", a.out_msi}};
  man.write(a.out_lr + ".manifest.json");
  out << "LrHSI " << y.shape_string() << " -> " << a.out_lr << "\nHrMSI " << z.shape_string() << " -> " << a.out_msi
      << "\n";
  return 0;
}

struct TrainArgs {
  std::string config, resume;
  long log_every = 100;
};

inline int run_train(const TrainArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  const auto rc = load_run_config(a.config);
  const auto data = dataset_from(rc, rc.train_cubes, rc.train.seed);
  std::optional<std::string> resume;
  if (!a.resume.empty()) resume = a.resume;
  out << "training " << parameter_count(rc.denoiser) << " parameters on " << data.size() << " images\n";
  const auto res = train(rc.train, rc.denoiser, data, rc.out_dir, resume, [&](const LossRecord& r) {
    if (a.log_every > 0 && r.step % a.log_every == 0)
      out << "step " << r.step << "\tloss " << r.loss << "\tlr " << r.lr << std::endl;
  });
  Manifest man{"train", argv, rc.source_text};
  man.seeds["train"] = rc.train.seed;
  man.extra = {{"checkpoint", res.final_checkpoint}};
  man.write((fs::path(rc.out_dir) / "manifest.json").string());
  out << "final checkpoint: " << res.final_checkpoint << "\n";
  return 0;
}

struct FuseArgs {
  std::string checkpoint, lr, msi, out, sigma = "zero", tiling = "auto";
  int steps = 1;
  std::uint64_t seed = 0;
  std::size_t tile = 64, stride = 48;
};

inline int run_fuse(const FuseArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  if (!fs::exists(a.checkpoint)) throw LoadError("checkpoint '" + a.checkpoint + "' not found");
  const auto ck = load_checkpoint(a.checkpoint);
  const auto y = read_cube(a.lr);
  const auto z = read_cube(a.msi);
  const double beta_end = ck.train ? ck.train->beta_end : 0.01;
  const auto sched = linear_schedule(ck.config.timesteps, beta_end);
  FuseOptions opt;
  opt.tiling = parse_tile_mode(a.tiling);
  opt.tile = a.tile;
  opt.stride = a.stride;
  const auto t0 = std::chrono::steady_clock::now();
  auto fused = fuse(ck.params, ck.config, sched, y, z, select_tau(ck.config.timesteps, a.steps),
                    parse_sigma_mode(a.sigma), a.seed, opt);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  fused.wavelengths_nm = y.wavelengths_nm;
  write_cube(a.out, fused);
  Manifest man{"fuse", argv, a.checkpoint};
  man.seeds["sampler"] = a.seed;
  man.extra = {{"fused", a.out}, {"seconds", secs}};
  man.write(a.out + ".manifest.json");
  out << "fused " << fused.shape_string() << " in " << secs << " s -> " << a.out << "\n";
  return 0;
}

struct EvalArgs {
  std::vector<std::string> ref, est;
  int scale = 32;
  std::string report, rmse_table;
};

inline int run_eval(const EvalArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  if (a.ref.size() != a.est.size()) throw ParameterError("eval: --ref and --est must be given the same number of times");
  std::vector<ImageScores> scores;
  for (std::size_t i = 0; i < a.ref.size(); ++i) {
    const auto r = read_cube(a.ref[i]);
    const auto e = read_cube(a.est[i]);
    scores.push_back(evaluate(fs::path(a.est[i]).stem().string(), r, e, a.scale));
  }
  const auto rep = make_report(std::move(scores), a.scale);
  write_text(a.report, report_json(rep).dump(2) + "\n");
  const std::string table = a.rmse_table.empty() ? a.report + ".band_rmse.tsv" : a.rmse_table;
  write_text(table, band_rmse_table(rep));
  Manifest man{"eval", argv, a.report};
  man.extra = {{"report", a.report}, {"band_rmse", table}};
  man.write(a.report + ".manifest.json");
  const auto& avg = rep.average;
  out << "PSNR " << (std::isinf(avg.psnr) ? std::string("inf") : std::to_string(avg.psnr)) << " dB  SAM " << avg.sam_deg
      << " deg  ERGAS " << avg.ergas << "  SSIM " << avg.ssim << "\n";
  for (const auto& s : rep.per_image)
    for (auto b : s.ergas_excluded_bands)
      out << "warning: " << s.name << " band " << b << " has zero reference mean; excluded from ERGAS\n";
  return 0;
}

struct AblateArgs {
  std::string config, report;
  std::string steps = "50,20,10,5,2,1";
  std::string losses = "l1,l2";
  long iterations = -1;  // override train.iterations when >= 0
  int repeats = 3;       // fusion timings take the fastest repeat
  bool reuse = false;    // reuse an existing final.ckpt per loss
};

inline int run_ablate(const AblateArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  const auto rc = load_run_config(a.config);
  if (rc.test_cubes.empty()) throw ConfigError("ablate: run config lists no test cubes");
  const auto steps = parse_int_list(a.steps, "steps");
  const auto losses = parse_losses(a.losses);
  if (a.repeats < 1) throw ParameterError("ablate: repeats must be >= 1");
  for (int d : steps)
    if (d < 1 || d > rc.denoiser.timesteps) throw ParameterError("ablate: step count " + std::to_string(d) + " out of range");
  const auto train_data = dataset_from(rc, rc.train_cubes, rc.train.seed);
  const auto test_data = dataset_from(rc, rc.test_cubes, rc.train.seed + 1);
  const auto sched = linear_schedule(rc.train.timesteps, rc.train.beta_end);
  FuseOptions opt;
  opt.tiling = parse_tile_mode(rc.sampler.tiling);
  const auto sigma = parse_sigma_mode(rc.sampler.sigma);

  std::map<int, std::vector<double>> psnr_rows;
  std::vector<double> time_sum(steps.size(), 0.0);
  json j;
  j["steps"] = steps;
  j["rows"] = json::object();
  for (int p : losses) {
    TrainConfig tc = rc.train;
    tc.loss_p = p;
    if (a.iterations >= 0) tc.iterations = a.iterations;
    const std::string dir = (fs::path(rc.out_dir) / ("ablate_l" + std::to_string(p))).string();
    std::string ckpt = (fs::path(dir) / "final.ckpt").string();
    if (!(a.reuse && fs::exists(ckpt))) {
      out << "training l" << p << " model (" << tc.iterations << " steps)" << std::endl;
      ckpt = train(tc, rc.denoiser, train_data, dir).final_checkpoint;
    }
    const auto ck = load_checkpoint(ckpt);
    auto& row = psnr_rows[p];
    for (std::size_t k = 0; k < steps.size(); ++k) {
      const auto tau = select_tau(rc.denoiser.timesteps, steps[k]);
      double psnr_sum = 0.0, secs = 0.0;
      for (const auto& item : test_data) {
        double best = std::numeric_limits<double>::infinity();
        HsiCube fused;
        for (int r = 0; r < a.repeats; ++r) {
          const auto t0 = std::chrono::steady_clock::now();
          fused = fuse(ck.params, ck.config, sched, item.y, item.z, tau, sigma, rc.sampler.seed, opt);
          best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        }
        psnr_sum += psnr(item.x, fused);
        secs += best;
      }
      const double n = static_cast<double>(test_data.size());
      row.push_back(psnr_sum / n);
      time_sum[k] += secs / n;
      out << "l" << p << " steps " << steps[k] << ": PSNR " << row.back() << " dB, " << secs / n << " s/image" << std::endl;
    }
    j["rows"]["l" + std::to_string(p)] = row;
  }
  std::vector<double> times;
  for (double t : time_sum) times.push_back(t / static_cast<double>(losses.size()));
  j["rows"]["test_time_s"] = times;

  std::ostringstream tsv;
  tsv << "Sampling steps";
  for (int d : steps) tsv << '\t' << d;
  tsv << '\n' << std::fixed;
  for (int p : losses) {
    tsv << "l" << p;
    for (double v : psnr_rows[p]) tsv << '\t' << std::setprecision(2) << v;
    tsv << '\n';
  }
  tsv << "Test time (s)";
  for (double t : times) tsv << '\t' << std::setprecision(4) << t;
  tsv << '\n';
  write_text(a.report, tsv.str());
  write_text(a.report + ".json", j.dump(2) + "\n");
  Manifest man{"ablate", argv, rc.source_text};
  man.seeds["train"] = rc.train.seed;
  man.seeds["sampler"] = rc.sampler.seed;
  man.extra = {{"report", a.report}};
  man.write(a.report + ".manifest.json");
  out << tsv.str();
  return 0;
}

struct SynthArgs {
  std::string out_dir;
  std::size_t count = 20, test = 4, bands = 8, size = 64, endmembers = 3, block = 8, msi_bands = 3;
  std::uint64_t seed = 7;
  long iterations = 3000;
};

/// Writes a synthetic dataset plus a ready-to-use run config.
inline int run_synth(const SynthArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  if (a.test >= a.count) throw ParameterError("synth: --test must be smaller than --count");
  fs::create_directories(a.out_dir);
  SyntheticSpec spec;
  spec.bands = a.bands;
  spec.height = spec.width = a.size;
  spec.endmembers = a.endmembers;
  const auto cubes = synthetic_dataset(spec, a.count, a.seed);
  json cfg;
  std::vector<std::string> train_list, test_list;
  for (std::size_t i = 0; i < cubes.size(); ++i) {
    std::ostringstream name;
    name << "scene_" << std::setw(3) << std::setfill('0') << i << ".cube";
    write_cube((fs::path(a.out_dir) / name.str()).string(), cubes[i]);
    (i + a.test < a.count ? train_list : test_list).push_back(name.str());
  }
  auto net = tiny_config(static_cast<int>(a.bands), static_cast<int>(a.msi_bands), static_cast<int>(a.block));
  TrainConfig tc;
  tc.iterations = a.iterations;
  tc.batch_size = 4;
  tc.patch = static_cast<int>(std::min<std::size_t>(32, a.size));
  tc.lr_max = 3e-3;
  tc.cycle = std::max<long>(a.iterations, 1);
  tc.loss_p = 1;
  tc.timesteps = net.timesteps;
  tc.beta_end = 0.01;
  tc.seed = a.seed;
  tc.checkpoint_every = 1000;
  cfg["train"] = tc;
  cfg["denoiser"] = net;
  cfg["observation"] = {{"block", a.block}, {"srf_uniform_groups", a.msi_bands}};
  cfg["data"] = {{"train", train_list}, {"test", test_list}};
  cfg["sampler"] = {{"steps", 1}, {"sigma", "zero"}, {"seed", 0}, {"tiling", "auto"}};
  cfg["out_dir"] = "run";
  const std::string cfg_path = (fs::path(a.out_dir) / "run_config.json").string();
  write_text(cfg_path, cfg.dump(2) + "\n");
  Manifest man{"synth", argv, cfg.dump()};
  man.seeds["data"] = a.seed;
  man.write((fs::path(a.out_dir) / "synth.manifest.json").string());
  out << "wrote " << cubes.size() << " cubes and " << cfg_path << "\n";
  return 0;
}

}  // namespace cli_detail

/// Entry point shared by the executable and the tests.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace cli_detail;
  std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Conditional diffusion HSI-MSI fusion toolkit", "ddpmfus"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Degrade a ground-truth HrHSI into LrHSI and HrMSI");
  s->add_option("--in", sim.in, "ground-truth cube")->required();
  s->add_option("--block", sim.block, "spatial block-average factor")->check(CLI::PositiveNumber);
  s->add_option("--srf", sim.srf, "SRF table (csv)");
  s->add_option("--srf-groups", sim.srf_groups, "use N uniform contiguous band groups instead of a table");
  s->add_option("--out-lr", sim.out_lr, "LrHSI output cube")->required();
  s->add_option("--out-msi", sim.out_msi, "HrMSI output cube")->required();
  s->add_option("--noise-y", sim.noise_y, "LrHSI noise std (normalized units)")->check(CLI::NonNegativeNumber);
  s->add_option("--noise-z", sim.noise_z, "HrMSI noise std (normalized units)")->check(CLI::NonNegativeNumber);
  s->add_option("--seed", sim.seed, "noise seed");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the conditional denoiser");
  t->add_option("--config", tr.config, "run config (json)")->required();
  t->add_option("--resume", tr.resume, "resume from a checkpoint with optimizer state");
  t->add_option("--log-every", tr.log_every, "print the loss every N steps (0 = quiet)");

  FuseArgs fu;
  auto* f = app.add_subcommand("fuse", "Fuse an LrHSI/HrMSI pair with the DDIM sampler");
  f->add_option("--checkpoint", fu.checkpoint, "trained checkpoint")->required();
  f->add_option("--lr", fu.lr, "LrHSI cube")->required();
  f->add_option("--msi", fu.msi, "HrMSI cube")->required();
  f->add_option("--steps", fu.steps, "number of sampling steps d")->check(CLI::PositiveNumber);
  f->add_option("--sigma", fu.sigma, "zero | posterior")->check(CLI::IsMember({"zero", "posterior"}));
  f->add_option("--seed", fu.seed, "sampler seed");
  f->add_option("--tiling", fu.tiling, "auto | always | never")->check(CLI::IsMember({"auto", "always", "never"}));
  f->add_option("--tile", fu.tile, "tile side");
  f->add_option("--stride", fu.stride, "tile stride");
  f->add_option("--out", fu.out, "fused output cube")->required();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score estimates against references");
  e->add_option("--ref", ev.ref, "reference cube (repeatable)")->required();
  e->add_option("--est", ev.est, "estimated cube (repeatable)")->required();
  e->add_option("--scale", ev.scale, "spatial ratio used by ERGAS")->check(CLI::PositiveNumber);
  e->add_option("--report", ev.report, "JSON report path")->required();
  e->add_option("--rmse-table", ev.rmse_table, "per-band RMSE table (default <report>.band_rmse.tsv)");

  AblateArgs ab;
  auto* b = app.add_subcommand("ablate", "Loss x sampling-step ablation grid");
  b->add_option("--config", ab.config, "run config (json)")->required();
  b->add_option("--steps", ab.steps, "comma-separated step counts");
  b->add_option("--losses", ab.losses, "comma-separated losses (l1,l2)");
  b->add_option("--report", ab.report, "grid table output")->required();
  b->add_option("--iterations", ab.iterations, "override training iterations");
  b->add_option("--repeats", ab.repeats, "timing repeats per fusion");
  b->add_flag("--reuse", ab.reuse, "reuse existing per-loss checkpoints");

  SynthArgs sy;
  auto* g = app.add_subcommand("synth", "Write a synthetic linear-mixing dataset and run config");
  g->add_option("--out-dir", sy.out_dir, "output directory")->required();
  g->add_option("--count", sy.count, "number of scenes");
  g->add_option("--test", sy.test, "scenes held out for testing");
  g->add_option("--bands", sy.bands, "hyperspectral bands");
  g->add_option("--msi-bands", sy.msi_bands, "multispectral bands");
  g->add_option("--size", sy.size, "scene side in pixels");
  g->add_option("--block", sy.block, "spatial ratio");
  g->add_option("--iterations", sy.iterations, "training iterations written to the config");
  g->add_option("--seed", sy.seed, "data seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    return app.exit(ex, out, err);
  }
  try {
    if (*s) return run_simulate(sim, args, out);
    if (*t) return run_train(tr, args, out);
    if (*f) return run_fuse(fu, args, out);
    if (*e) return run_eval(ev, args, out);
    if (*b) return run_ablate(ab, args, out);
    if (*g) return run_synth(sy, args, out);
  } catch (const std::exception& ex) {
    err << "ddpmfus: error: " << ex.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace ddpmfus
