// Command-line front end: train, generate, eval-crps, selfcheck.
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "rvd/commands.hpp"
#include "rvd/errors.hpp"
#include "rvd/train.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Residual video diffusion: training, sampling, and scoring"};
  app.require_subcommand(1);

  std::string config_path, checkpoint, context_source, ensemble_dir, truth_path,
      out_dir;
  int samples = 0;
  bool inject_nan = false, corrupt_schedule = false;

  CLI::App* train = app.add_subcommand("train", "Train a model from a config file");
  train->add_option("config", config_path, "key=value run config")->required();
  train->add_flag("--inject-nan", inject_nan)->group("");  // failure-path hook

  CLI::App* gen = app.add_subcommand("generate", "Sample futures from a checkpoint");
  gen->add_option("config", config_path, "key=value run config")->required();
  gen->add_option("checkpoint", checkpoint, "trained checkpoint file")->required();
  gen->add_option("context", context_source, "conditioning video tensor")
      ->required();
  gen->add_option("--samples", samples, "ensemble size (default: from config)");

  CLI::App* eval =
      app.add_subcommand("eval-crps", "Score an ensemble against ground truth");
  eval->add_option("ensemble_dir", ensemble_dir, "directory of sampled futures")
      ->required();
  eval->add_option("truth", truth_path, "ground-truth video tensor")->required();
  eval->add_option("out_dir", out_dir, "where to write reports")->required();

  CLI::App* self =
      app.add_subcommand("selfcheck", "Run the built-in verification battery");
  self->add_flag("--corrupt-schedule", corrupt_schedule)->group("");  // hook

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train) {
      rvd::train::Hooks hooks;
      hooks.inject_nan = inject_nan;
      return rvd::cli::cmd_train(config_path, inject_nan ? &hooks : nullptr);
    }
    if (*gen)
      return rvd::cli::cmd_generate(config_path, checkpoint, context_source,
                                    samples);
    if (*eval) return rvd::cli::cmd_eval_crps(ensemble_dir, truth_path, out_dir);
    rvd::cli::SelfcheckOptions opts;
    opts.corrupt_schedule = corrupt_schedule;
    return rvd::cli::cmd_selfcheck(opts);
  } catch (const rvd::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
