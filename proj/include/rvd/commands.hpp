#pragma once

#include <iosfwd>
#include <string>

#include "rvd/config.hpp"
#include "rvd/train.hpp"

// Batch entry points behind the CLI. Each returns a process exit code:
//   0  success
//   1  usage / config / incompatible or unreadable inputs
//   2  numeric failure (non-finite loss)
//   3  selfcheck failure
// Human-readable context goes to stderr; machine output (the CRPS scalar,
// selfcheck JSON lines) goes to the stream the caller provides.

namespace rvd::cli {

// Trains per config, writing loss.csv and checkpoint.rvtf into out_dir. An
// existing checkpoint there resumes (config must match). `hooks` is the
// test seam (noise oracle, NaN injection).
int cmd_train(const std::string& config_path,
              const train::Hooks* hooks = nullptr);

// Samples `samples` futures (config ensemble_size when samples <= 0) from a
// checkpoint, conditioning on the first context_len frames of the tensor
// file at context_source. Writes sample_###.rvtf plus manifest.json into
// out_dir; sample s uses rng seed (config seed + s).
int cmd_generate(const std::string& config_path, const std::string& checkpoint,
                 const std::string& context_source, int samples = 0);

// Scores an ensemble directory (manifest.json if present, else *.rvtf)
// against a ground-truth tensor file. Writes per_frame.csv and per-frame
// score maps into out_dir, prints the scalar with six decimals to `out`.
int cmd_eval_crps(const std::string& ensemble_dir, const std::string& truth_path,
                  const std::string& out_dir, std::ostream* out = nullptr);

struct SelfcheckOptions {
  // Deliberately breaks one stored beta before the schedule checks run, to
  // prove the battery notices (and exits 3 naming the invariant).
  bool corrupt_schedule = false;
  std::ostream* out = nullptr;  // JSON lines; defaults to stdout
};

// Runs the numerical diagnostic battery: gradient checks, schedule
// invariants, posterior/weight identities, one-step recovery, CRPS oracle
// equivalence, and marginal-vs-iterated forward sampling.
int cmd_selfcheck(const SelfcheckOptions& options = {});

}  // namespace rvd::cli
