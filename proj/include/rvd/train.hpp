#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rvd/model.hpp"
#include "rvd/schedule.hpp"
#include "rvd/video.hpp"

// The training loop (teacher-forced, one shared diffusion step per batch),
// the autoregressive sampler, Adam, and checkpointing. Randomness is drawn
// from counter-based streams keyed by (seed, purpose, step), so resuming from
// a checkpoint replays the exact bit pattern of an uninterrupted run.

namespace rvd::train {

// ===== Config =============================================================

struct TrainConfig {
  int context_len = 2;    // frames observed before prediction starts
  int future_len = 6;     // frames predicted per window
  int batch_size = 1;
  double lr_initial = 5e-5;
  double lr_final = 2e-5;
  int n_steps = 100;      // diffusion depth N
  double sigma = 2.0;
  flow::Mode mode = flow::Mode::kRvd;
  int max_steps = 2000;
  uint64_t seed = 0;
  diffusion::VarianceMode variance_mode = diffusion::VarianceMode::kSqrtPosterior;

  void validate() const {
    require(context_len >= 1 && future_len >= 1, "train_config",
            "context_len and future_len must be >= 1");
    require(lr_final <= lr_initial, "train_config",
            "lr_final must not exceed lr_initial");
    require(batch_size >= 1, "train_config", "batch_size must be >= 1");
    require(n_steps >= 1, "train_config", "diffusion depth must be >= 1");
    require(max_steps >= 1, "train_config", "max_steps must be >= 1");
  }
};

// Linear ramp lr_initial -> lr_final over max_steps, constant afterward.
double lr_schedule(int64_t step, const TrainConfig& cfg);

// ===== Adam ===============================================================

struct AdamState {
  std::vector<TensorF> m, v;  // parallel to the parameter store
  int64_t step = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

AdamState make_adam(const nn::ParamStore& store);

// Standard bias-corrected Adam. A gradient entry with zero elements means
// "missing" and raises an error naming the parameter.
void adam_update(nn::ParamStore& store, const std::vector<TensorF>& grads,
                 AdamState& opt, double lr);

// ===== Test hooks =========================================================

// Instrumentation points used by tests and the CLI's failure-injection paths;
// production runs pass nothing.
struct Hooks {
  // Replaces the denoiser: (yn, n, t, mu) -> eps_hat. With an oracle that
  // returns the exact noise, the training loss is identically zero.
  std::function<TensorF(const TensorF& yn, int n, int t, const TensorF& mu)>
      eps_oracle;
  // Forces mu := 0 and sigma := 1 in residual mode (ablation equivalence).
  bool zero_mu = false;
  // Corrupts the loss to exercise the non-finite abort path.
  bool inject_nan = false;
};

// ===== Trainer ============================================================

struct GenerateResult {
  TensorF frames;  // [q, C, H, W], clamped to [-1, 1] at export
  int64_t denoiser_evals = 0;
  int64_t transform_evals = 0;
};

class Trainer {
 public:
  Trainer(const model::ModelConfig& mc, const TrainConfig& tc);

  // One optimizer step over a batch of (context, future) windows. Returns the
  // loss. States are advanced with ground-truth frames only (teacher forcing);
  // gradients flow through the transform's mean inside the noised target.
  double training_step(const std::vector<video::Window>& batch,
                       const Hooks* hooks = nullptr);

  // Runs max_steps - current_step steps, sampling batches from the window
  // pool; appends "step,loss,lr,wall_ms" rows to log_csv if non-empty.
  // Returns the last loss.
  double run(const std::vector<video::Window>& pool, const std::string& log_csv,
             const Hooks* hooks = nullptr);

  // Autoregressive sampling: consumes the context frames, then per future
  // frame runs the full reverse chain and feeds the result back as context.
  GenerateResult generate(const TensorF& context, uint64_t rng_seed,
                          const Hooks* hooks = nullptr) const;

  void save_checkpoint(const std::string& path) const;
  static Trainer load_checkpoint(const std::string& path);

  const model::Model& net() const { return *model_; }
  model::Model& mut_net() { return *model_; }
  const TrainConfig& config() const { return cfg_; }
  // Extends (or shortens) the horizon when resuming from a checkpoint. Other
  // config fields are baked into the model and schedule and must not change.
  void set_max_steps(int steps) {
    require(steps >= 1, "train_config", "max_steps must be >= 1");
    cfg_.max_steps = steps;
  }
  const diffusion::NoiseSchedule& schedule() const { return sched_; }
  const AdamState& optimizer() const { return opt_; }
  int64_t step() const { return step_; }

 private:
  TrainConfig cfg_;
  std::optional<model::Model> model_;
  diffusion::NoiseSchedule sched_;
  AdamState opt_;
  int64_t step_ = 0;
};

}  // namespace rvd::train
