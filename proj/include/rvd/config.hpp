#pragma once

#include <string>

#include "rvd/model.hpp"
#include "rvd/residual.hpp"
#include "rvd/schedule.hpp"
#include "rvd/train.hpp"

// Run configuration: a flat key=value text file. Lines are `key = value`,
// blank lines and #-comments are ignored, unknown or repeated keys are
// errors. Every key has a default except out_dir, which commands that write
// artifacts insist on.

namespace rvd::cli {

struct RunConfig {
  std::string profile = "desk";   // desk | 64 | 128
  std::string dataset = "ball";   // ball | drift | dir:<path>
  flow::Mode mode = flow::Mode::kRvd;
  int n_steps = 100;              // key "N": diffusion depth
  double sigma = 2.0;
  int context_len = 2;
  int future_len = 6;
  int batch_size = 1;
  int max_steps = 2000;
  double lr_initial = 5e-5;
  double lr_final = 2e-5;
  uint64_t seed = 0;
  int ensemble_size = 8;
  diffusion::VarianceMode variance_mode = diffusion::VarianceMode::kSqrtPosterior;
  std::string out_dir;            // required by train/generate

  void validate() const;  // throws ConfigError

  model::ModelConfig model_config() const;
  train::TrainConfig train_config() const;

  // Synthetic datasets render at the profile's native frame size.
  int frame_size() const;
};

// Parses config text / file. Throws ConfigError (bad key, value, duplicate)
// or IoError (unreadable file).
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

}  // namespace rvd::cli
