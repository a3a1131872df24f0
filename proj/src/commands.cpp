#include "rvd/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rvd/crps.hpp"
#include "rvd/errors.hpp"
#include "rvd/tensor_file.hpp"
#include "rvd/video.hpp"

namespace rvd::cli {

namespace {

namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumeric = 2;

// Synthetic training pools: a handful of medium sequences is plenty for the
// overlapping-window sampler.
constexpr int kTrainSequences = 8;
constexpr int kTrainFrames = 40;

int fail_config(const std::string& msg) {
  std::cerr << "error: " << msg << "\n";
  return kExitConfig;
}

// Fields that fix what the checkpoint means as a model: architecture, mode,
// diffusion depth, scaling, window geometry, and the sampler's noise scaling.
// Optimizer-side fields (rates, batch, horizon, seed) are not part of this.
std::string model_gap(const train::Trainer& tr, const RunConfig& cfg) {
  const train::TrainConfig& a = tr.config();
  const train::TrainConfig want = cfg.train_config();
  if (a.mode != want.mode) return "mode";
  if (a.n_steps != want.n_steps) return "N";
  if (a.sigma != want.sigma) return "sigma";
  if (a.context_len != want.context_len) return "context_len";
  if (a.future_len != want.future_len) return "future_len";
  if (a.variance_mode != want.variance_mode) return "variance_mode";
  const model::ModelConfig& mc = tr.net().cfg;
  const model::ModelConfig want_mc = cfg.model_config();
  if (mc.channel_dim != want_mc.channel_dim ||
      mc.denoise_mults != want_mc.denoise_mults ||
      mc.transform_mults != want_mc.transform_mults ||
      mc.img_channels != want_mc.img_channels)
    return "profile";
  return "";
}

// Resuming additionally replays the optimizer trajectory, so everything but
// the horizon must match; max_steps may grow (or shrink) across restarts.
std::string resume_gap(const train::Trainer& tr, const RunConfig& cfg) {
  const std::string gap = model_gap(tr, cfg);
  if (!gap.empty()) return gap;
  const train::TrainConfig& a = tr.config();
  const train::TrainConfig want = cfg.train_config();
  if (a.batch_size != want.batch_size) return "batch_size";
  if (a.lr_initial != want.lr_initial) return "lr_initial";
  if (a.lr_final != want.lr_final) return "lr_final";
  if (a.seed != want.seed) return "seed";
  return "";
}

std::vector<video::Window> build_pool(const RunConfig& cfg) {
  const int hw = cfg.frame_size();
  std::vector<TensorF> vids = video::load_dataset(cfg.dataset, cfg.seed,
                                                  kTrainSequences, kTrainFrames,
                                                  hw, hw);
  std::vector<video::Window> pool;
  for (const TensorF& v : vids) {
    auto w = video::window_sequences(v, cfg.context_len, cfg.future_len, 1);
    pool.insert(pool.end(), w.begin(), w.end());
  }
  if (pool.empty())
    throw ConfigError("dataset yields no windows of " +
                      std::to_string(cfg.context_len) + "+" +
                      std::to_string(cfg.future_len) + " frames");
  return pool;
}

}  // namespace

// ===== train ==============================================================

int cmd_train(const std::string& config_path, const train::Hooks* hooks) {
  RunConfig cfg;
  try {
    cfg = load_run_config(config_path);
    if (cfg.out_dir.empty()) return fail_config("config: out_dir is required");
    fs::create_directories(cfg.out_dir);

    std::vector<video::Window> pool = build_pool(cfg);
    const std::string ckpt = (fs::path(cfg.out_dir) / "checkpoint.rvtf").string();

    std::optional<train::Trainer> trainer;
    if (fs::exists(ckpt)) {
      trainer.emplace(train::Trainer::load_checkpoint(ckpt));
      const std::string gap = resume_gap(*trainer, cfg);
      if (!gap.empty())
        return fail_config("checkpoint " + ckpt +
                           " disagrees with the config on " + gap);
      trainer->set_max_steps(cfg.max_steps);
      std::cerr << "resuming from step " << trainer->step() << "\n";
    } else {
      trainer.emplace(cfg.model_config(), cfg.train_config());
    }

    const std::string csv = (fs::path(cfg.out_dir) / "loss.csv").string();
    trainer->run(pool, csv, hooks);
    trainer->save_checkpoint(ckpt);
    return kExitOk;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    return fail_config(e.what());
  }
}

// ===== generate ===========================================================

int cmd_generate(const std::string& config_path, const std::string& checkpoint,
                 const std::string& context_source, int samples) {
  try {
    const RunConfig cfg = load_run_config(config_path);
    if (cfg.out_dir.empty()) return fail_config("config: out_dir is required");
    const int s_count = samples > 0 ? samples : cfg.ensemble_size;

    train::Trainer trainer = train::Trainer::load_checkpoint(checkpoint);
    const std::string gap = model_gap(trainer, cfg);
    if (!gap.empty())
      return fail_config("checkpoint " + checkpoint +
                         " disagrees with the config on " + gap);

    TensorF src = io::read_tensor(context_source);
    require(src.rank() == 4, "generate", "context source must be [T, C, H, W]");
    require(src.shape()[0] >= cfg.context_len, "generate",
            "context source has fewer than context_len frames");
    TensorF context = video::slice_frames(src, 0, cfg.context_len);

    fs::create_directories(cfg.out_dir);
    nlohmann::ordered_json manifest;
    manifest["context_file"] = context_source;
    manifest["context_frames"] = cfg.context_len;
    manifest["future_frames"] = cfg.future_len;
    manifest["mode"] = flow::mode_name(cfg.mode);
    manifest["profile"] = cfg.profile;
    manifest["samples"] = nlohmann::ordered_json::array();

    for (int s = 0; s < s_count; ++s) {
      const uint64_t sample_seed = cfg.seed + static_cast<uint64_t>(s);
      train::GenerateResult out = trainer.generate(context, sample_seed, nullptr);
      char name[32];
      std::snprintf(name, sizeof name, "sample_%03d.rvtf", s);
      io::write_tensor((fs::path(cfg.out_dir) / name).string(), out.frames);
      nlohmann::ordered_json entry;
      entry["file"] = name;
      entry["seed"] = sample_seed;
      entry["shape"] = out.frames.shape();
      manifest["samples"].push_back(entry);
    }

    std::ofstream mf(fs::path(cfg.out_dir) / "manifest.json",
                     std::ios::binary | std::ios::trunc);
    if (!mf)
      throw IoError(IoErrorCode::kOpenFailed, "cannot write manifest.json");
    mf << manifest.dump(2) << "\n";
    return kExitOk;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    return fail_config(e.what());
  }
}

// ===== eval-crps ==========================================================

int cmd_eval_crps(const std::string& ensemble_dir, const std::string& truth_path,
                  const std::string& out_dir, std::ostream* out) {
  std::ostream& os = out ? *out : std::cout;
  try {
    // Prefer the manifest's ordering; fall back to sorted *.rvtf.
    std::vector<std::string> files;
    const fs::path manifest_path = fs::path(ensemble_dir) / "manifest.json";
    if (fs::exists(manifest_path)) {
      std::ifstream mf(manifest_path, std::ios::binary);
      nlohmann::json manifest = nlohmann::json::parse(mf);
      for (const auto& entry : manifest.at("samples"))
        files.push_back((fs::path(ensemble_dir) / entry.at("file").get<std::string>())
                            .string());
    } else {
      std::error_code ec;
      std::vector<fs::path> paths;
      for (const auto& entry : fs::directory_iterator(ensemble_dir, ec))
        if (entry.path().extension() == ".rvtf") paths.push_back(entry.path());
      if (ec)
        throw IoError(IoErrorCode::kOpenFailed,
                      "cannot list " + ensemble_dir + ": " + ec.message());
      std::sort(paths.begin(), paths.end());
      for (const auto& p : paths) files.push_back(p.string());
    }
    require(files.size() >= 2, "eval_crps",
            "need at least two ensemble members");

    std::vector<TensorF> ensemble;
    ensemble.reserve(files.size());
    for (const std::string& f : files) ensemble.push_back(io::read_tensor(f));
    TensorF truth = io::read_tensor(truth_path);

    metrics::ForecastEnsemble ens =
        metrics::ForecastEnsemble::from_videos(ensemble, truth);
    metrics::CrpsReport report = metrics::crps_video(ens, /*keep_maps=*/true);

    fs::create_directories(out_dir);
    metrics::write_crps_csv(report,
                            (fs::path(out_dir) / "per_frame.csv").string());
    for (size_t t = 0; t < report.per_frame.size(); ++t) {
      char base[32];
      std::snprintf(base, sizeof base, "crps_map_%03zu", t);
      metrics::export_score_map(report, static_cast<int>(t),
                                (fs::path(out_dir) / base).string());
    }

    char line[64];
    std::snprintf(line, sizeof line, "%.6f\n", report.scalar);
    os << line;
    return kExitOk;
  } catch (const std::exception& e) {
    return fail_config(e.what());
  }
}

}  // namespace rvd::cli
