// CLI layer: run-config parsing, command exit codes, artifacts on disk, and
// byte-level determinism of train/generate reruns.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "rvd/commands.hpp"
#include "rvd/config.hpp"
#include "rvd/tensor_file.hpp"
#include "rvd/train.hpp"
#include "rvd/video.hpp"

using namespace rvd;
namespace fs = std::filesystem;

namespace {

fs::path temp_root() {
  static fs::path root = [] {
    fs::path p = fs::temp_directory_path() /
                 ("rvd_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(p);
    return p;
  }();
  return root;
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = temp_root() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << text;
  return path.string();
}

std::string read_bytes(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int count_lines(const fs::path& path) {
  std::ifstream f(path);
  int n = 0;
  std::string line;
  while (std::getline(f, line)) ++n;
  return n;
}

// Small, fast run: desk profile is pinned to 16x16 frames, so speed comes
// from a shallow chain and few steps.
std::string tiny_cfg(const fs::path& out_dir, const std::string& extra = "") {
  return "profile = desk\ndataset = ball\nmode = rvd\nN = 6\n"
         "context_len = 2\nfuture_len = 3\nmax_steps = 8\n"
         "lr_initial = 1e-3\nlr_final = 1e-3\nseed = 5\nensemble_size = 2\n"
         "out_dir = " + out_dir.string() + "\n" + extra;
}

}  // namespace

// ===== Run-config parsing =================================================

TEST_CASE("empty config yields the documented defaults") {
  cli::RunConfig cfg = cli::parse_run_config("");
  CHECK(cfg.profile == "desk");
  CHECK(cfg.dataset == "ball");
  CHECK(cfg.mode == flow::Mode::kRvd);
  CHECK(cfg.n_steps == 100);
  CHECK(cfg.sigma == 2.0);
  CHECK(cfg.context_len == 2);
  CHECK(cfg.future_len == 6);
  CHECK(cfg.batch_size == 1);
  CHECK(cfg.max_steps == 2000);
  CHECK(cfg.lr_initial == 5e-5);
  CHECK(cfg.lr_final == 2e-5);
  CHECK(cfg.seed == 0);
  CHECK(cfg.ensemble_size == 8);
  CHECK(cfg.variance_mode == diffusion::VarianceMode::kSqrtPosterior);
  CHECK(cfg.out_dir.empty());
  CHECK(cfg.frame_size() == 16);
}

TEST_CASE("every key parses, with comments and loose whitespace") {
  cli::RunConfig cfg = cli::parse_run_config(
      "# full config\n"
      "profile = 64\n"
      "dataset = drift\n"
      "  mode=vd   # trailing comment\n"
      "N = 25\n"
      "sigma = 1.5\n"
      "context_len = 3\n"
      "future_len = 4\n"
      "batch_size = 2\n"
      "\n"
      "max_steps = 17\n"
      "lr_initial = 0.002\n"
      "lr_final = 0.001\n"
      "seed = 42\n"
      "ensemble_size = 5\n"
      "variance_mode = as_written\n"
      "out_dir = /tmp/somewhere\n");
  CHECK(cfg.profile == "64");
  CHECK(cfg.dataset == "drift");
  CHECK(cfg.mode == flow::Mode::kVd);
  CHECK(cfg.n_steps == 25);
  CHECK(cfg.sigma == 1.5);
  CHECK(cfg.context_len == 3);
  CHECK(cfg.future_len == 4);
  CHECK(cfg.batch_size == 2);
  CHECK(cfg.max_steps == 17);
  CHECK(cfg.lr_initial == 0.002);
  CHECK(cfg.lr_final == 0.001);
  CHECK(cfg.seed == 42);
  CHECK(cfg.ensemble_size == 5);
  CHECK(cfg.variance_mode == diffusion::VarianceMode::kAsWritten);
  CHECK(cfg.out_dir == "/tmp/somewhere");
  CHECK(cfg.frame_size() == 64);

  CHECK(cli::parse_run_config("dataset = dir:/data/seqs\n").dataset ==
        "dir:/data/seqs");
  CHECK(cli::parse_run_config("profile = 128\n").frame_size() == 128);
}

TEST_CASE("config parser rejects malformed and inconsistent input") {
  CHECK_THROWS_AS(cli::parse_run_config("frames = 3\n"), ConfigError);
  CHECK_THROWS_AS(cli::parse_run_config("N = 5\nN = 6\n"), ConfigError);
  CHECK_THROWS_AS(cli::parse_run_config("= 5\n"), ConfigError);
  CHECK_THROWS_AS(cli::parse_run_config("N\n"), ConfigError);
  CHECK_THROWS_AS(cli::parse_run_config("N = ten\n"), ConfigError);
  CHECK_THROWS_AS(cli::parse_run_config("N = 1.5\n"), ConfigError);
  CHECK_THROWS_AS(cli::parse_run_config("N = 0\n"), ConfigError);
  CHECK_THROWS_AS(cli::parse_run_config("sigma = \n"), ConfigError);
  CHECK_THROWS_AS(cli::parse_run_config("sigma = -1\n"), ConfigError);
  CHECK_THROWS_AS(cli::parse_run_config("sigma = 2x\n"), ConfigError);
  CHECK_THROWS_AS(cli::parse_run_config("seed = -3\n"), ConfigError);
  CHECK_THROWS_AS(cli::parse_run_config("profile = tiny\n"), ConfigError);
  CHECK_THROWS_AS(cli::parse_run_config("mode = hybrid\n"), ConfigError);
  CHECK_THROWS_AS(cli::parse_run_config("variance_mode = off\n"), ConfigError);
  CHECK_THROWS_AS(cli::parse_run_config("dataset = pony\n"), ConfigError);
  CHECK_THROWS_AS(cli::parse_run_config("dataset = dir:\n"), ConfigError);
  CHECK_THROWS_AS(cli::parse_run_config("context_len = 0\n"), ConfigError);
  CHECK_THROWS_AS(
      cli::parse_run_config("lr_initial = 1e-5\nlr_final = 2e-5\n"),
      ConfigError);
  CHECK_THROWS_AS(cli::load_run_config("/nonexistent/run.cfg"), IoError);
}

// ===== train ==============================================================

TEST_CASE("train writes a loss row per step plus a checkpoint") {
  fs::path out = fresh_dir("train_basic");
  std::string cfg = write_text(temp_root() / "basic.cfg", tiny_cfg(out));
  REQUIRE(cli::cmd_train(cfg) == 0);
  CHECK(fs::exists(out / "checkpoint.rvtf"));
  CHECK(count_lines(out / "loss.csv") == 9);  // header + 8 steps
  std::ifstream f(out / "loss.csv");
  std::string header;
  std::getline(f, header);
  CHECK(header == "step,loss,lr,wall_ms");

  SUBCASE("a finished run reruns as a no-op") {
    const std::string ckpt = read_bytes(out / "checkpoint.rvtf");
    REQUIRE(cli::cmd_train(cfg) == 0);
    CHECK(count_lines(out / "loss.csv") == 9);
    CHECK(read_bytes(out / "checkpoint.rvtf") == ckpt);
  }

  SUBCASE("resume rejects a config that changes anything but the horizon") {
    fs::path alt_cfg = temp_root() / "mismatch.cfg";
    write_text(alt_cfg, tiny_cfg(out, "variance_mode = as_written\n"));
    CHECK(cli::cmd_train(alt_cfg.string()) == 1);
  }

  SUBCASE("resume extends the horizon in place") {
    fs::path more = temp_root() / "more.cfg";
    std::string text = tiny_cfg(out);
    text.replace(text.find("max_steps = 8"), 13, "max_steps = 10");
    write_text(more, text);
    REQUIRE(cli::cmd_train(more.string()) == 0);
    CHECK(count_lines(out / "loss.csv") == 11);  // 8 rows + 2 appended
  }
}

TEST_CASE("train exit codes: config trouble is 1, numeric trouble is 2") {
  CHECK(cli::cmd_train("/nonexistent/run.cfg") == 1);

  fs::path no_out = temp_root() / "no_out.cfg";
  write_text(no_out, "profile = desk\nmax_steps = 2\n");
  CHECK(cli::cmd_train(no_out.string()) == 1);

  fs::path bad = temp_root() / "bad_key.cfg";
  write_text(bad, "frames = 9\nout_dir = " + fresh_dir("never").string() + "\n");
  CHECK(cli::cmd_train(bad.string()) == 1);

  fs::path out = fresh_dir("train_nan");
  std::string cfg = write_text(temp_root() / "nan.cfg", tiny_cfg(out));
  train::Hooks hooks;
  hooks.inject_nan = true;
  CHECK(cli::cmd_train(cfg, &hooks) == 2);
}

TEST_CASE("train consumes a directory dataset") {
  fs::path data = fresh_dir("train_dir_data");
  for (int i = 0; i < 2; ++i) {
    TensorF v = video::gen_bouncing_ball(50 + i, 10, 16, 16, 3.0, true);
    io::write_tensor((data / ("seq_" + std::to_string(i) + ".rvtf")).string(), v);
  }
  fs::path out = fresh_dir("train_dir_out");
  std::string text = tiny_cfg(out);
  text.replace(text.find("dataset = ball"), 14, "dataset = dir:" + data.string());
  write_text(temp_root() / "dir.cfg", text);
  REQUIRE(cli::cmd_train((temp_root() / "dir.cfg").string()) == 0);
  CHECK(fs::exists(out / "checkpoint.rvtf"));
}

TEST_CASE("train reruns are byte-identical on the checkpoint") {
  fs::path out_a = fresh_dir("det_a");
  fs::path out_b = fresh_dir("det_b");
  std::string cfg_a = write_text(temp_root() / "det_a.cfg", tiny_cfg(out_a));
  std::string cfg_b = write_text(temp_root() / "det_b.cfg", tiny_cfg(out_b));
  REQUIRE(cli::cmd_train(cfg_a) == 0);
  REQUIRE(cli::cmd_train(cfg_b) == 0);
  CHECK(read_bytes(out_a / "checkpoint.rvtf") == read_bytes(out_b / "checkpoint.rvtf"));
}

// ===== generate ===========================================================

TEST_CASE("generate writes samples plus a manifest, deterministically") {
  fs::path train_out = fresh_dir("gen_train");
  std::string train_cfg =
      write_text(temp_root() / "gen_train.cfg", tiny_cfg(train_out));
  REQUIRE(cli::cmd_train(train_cfg) == 0);
  const std::string ckpt = (train_out / "checkpoint.rvtf").string();

  TensorF ctx_video = video::gen_bouncing_ball(77, 5, 16, 16, 3.0, true);
  const std::string ctx =
      (temp_root() / "context.rvtf").string();
  io::write_tensor(ctx, ctx_video);

  fs::path gen_out = fresh_dir("gen_a");
  std::string gen_cfg =
      write_text(temp_root() / "gen_a.cfg", tiny_cfg(gen_out));
  REQUIRE(cli::cmd_generate(gen_cfg, ckpt, ctx, 3) == 0);

  for (int s = 0; s < 3; ++s) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%03d.rvtf", s);
    TensorF sample = io::read_tensor((gen_out / name).string());
    CHECK(sample.shape() == Shape{3, 1, 16, 16});  // future_len frames
    for (int64_t i = 0; i < sample.numel(); ++i) {
      REQUIRE(sample.data()[i] >= -1.0f);
      REQUIRE(sample.data()[i] <= 1.0f);
    }
  }
  CHECK(!fs::exists(gen_out / "sample_003.rvtf"));

  nlohmann::json manifest =
      nlohmann::json::parse(read_bytes(gen_out / "manifest.json"));
  REQUIRE(manifest.at("samples").size() == 3);
  CHECK(manifest.at("context_frames") == 2);
  CHECK(manifest.at("future_frames") == 3);
  CHECK(manifest.at("mode") == "rvd");
  CHECK(manifest.at("profile") == "desk");
  for (int s = 0; s < 3; ++s) {
    const auto& entry = manifest.at("samples").at(static_cast<size_t>(s));
    CHECK(entry.at("seed") == 5 + s);  // config seed plus sample index
    CHECK(entry.at("shape") == std::vector<int64_t>{3, 1, 16, 16});
  }

  SUBCASE("rerun reproduces every sample byte for byte") {
    fs::path gen_b = fresh_dir("gen_b");
    std::string cfg_b = write_text(temp_root() / "gen_b.cfg", tiny_cfg(gen_b));
    REQUIRE(cli::cmd_generate(cfg_b, ckpt, ctx, 3) == 0);
    for (int s = 0; s < 3; ++s) {
      char name[32];
      std::snprintf(name, sizeof name, "sample_%03d.rvtf", s);
      CHECK(read_bytes(gen_out / name) == read_bytes(gen_b / name));
    }
  }

  SUBCASE("sample count defaults to ensemble_size") {
    fs::path gen_c = fresh_dir("gen_c");
    std::string cfg_c = write_text(temp_root() / "gen_c.cfg", tiny_cfg(gen_c));
    REQUIRE(cli::cmd_generate(cfg_c, ckpt, ctx, 0) == 0);
    CHECK(fs::exists(gen_c / "sample_001.rvtf"));  // ensemble_size = 2
    CHECK(!fs::exists(gen_c / "sample_002.rvtf"));
  }

  SUBCASE("checkpoint/config disagreements are refused") {
    fs::path gen_d = fresh_dir("gen_d");
    std::string text = tiny_cfg(gen_d);
    text.replace(text.find("N = 6"), 5, "N = 7");
    write_text(temp_root() / "gen_d.cfg", text);
    CHECK(cli::cmd_generate((temp_root() / "gen_d.cfg").string(), ckpt, ctx, 2) == 1);

    std::string vd_text = tiny_cfg(gen_d);
    vd_text.replace(vd_text.find("mode = rvd"), 10, "mode = vd ");
    write_text(temp_root() / "gen_vd.cfg", vd_text);
    CHECK(cli::cmd_generate((temp_root() / "gen_vd.cfg").string(), ckpt, ctx, 2) == 1);
  }

  SUBCASE("unusable inputs exit with 1") {
    CHECK(cli::cmd_generate(gen_cfg, "/nonexistent.rvtf", ctx, 2) == 1);
    CHECK(cli::cmd_generate("/nonexistent.cfg", ckpt, ctx, 2) == 1);
    const std::string short_ctx = (temp_root() / "short.rvtf").string();
    io::write_tensor(short_ctx, video::slice_frames(ctx_video, 0, 1));
    CHECK(cli::cmd_generate(gen_cfg, ckpt, short_ctx, 2) == 1);
  }
}

// ===== eval-crps ==========================================================

TEST_CASE("eval-crps scores an ensemble directory against truth") {
  TensorF truth = video::gen_bouncing_ball(31, 3, 8, 8, 2.0, true);
  fs::path ens = fresh_dir("ens_copies");
  for (int s = 0; s < 3; ++s)
    io::write_tensor((ens / ("m" + std::to_string(s) + ".rvtf")).string(), truth);
  const std::string truth_path = (temp_root() / "truth.rvtf").string();
  io::write_tensor(truth_path, truth);

  fs::path rep = fresh_dir("crps_report");
  std::ostringstream captured;
  REQUIRE(cli::cmd_eval_crps(ens.string(), truth_path, rep.string(), &captured) == 0);
  CHECK(captured.str() == "0.000000\n");  // ensemble of copies is a perfect score
  CHECK(count_lines(rep / "per_frame.csv") == 4);  // header + q rows
  for (int t = 0; t < 3; ++t) {
    char base[32];
    std::snprintf(base, sizeof base, "crps_map_%03d", t);
    CHECK(fs::exists(rep / (std::string(base) + ".pgm")));
    CHECK(fs::exists(rep / (std::string(base) + ".csv")));
  }

  SUBCASE("manifest listing takes precedence over directory order") {
    nlohmann::json manifest;
    manifest["samples"] = {{{"file", "m0.rvtf"}}, {{"file", "m2.rvtf"}}};
    write_text(ens / "manifest.json", manifest.dump());
    fs::path rep2 = fresh_dir("crps_report2");
    std::ostringstream out2;
    REQUIRE(cli::cmd_eval_crps(ens.string(), truth_path, rep2.string(), &out2) == 0);
    CHECK(out2.str() == "0.000000\n");
  }

  SUBCASE("a nonzero score prints with six decimals") {
    fs::path ens2 = fresh_dir("ens_off");
    TensorF shifted = truth.clone();
    for (int64_t i = 0; i < shifted.numel(); ++i)
      shifted.mut_data()[i] = std::min(1.0f, shifted.data()[i] + 0.5f);
    io::write_tensor((ens2 / "a.rvtf").string(), shifted);
    io::write_tensor((ens2 / "b.rvtf").string(), truth);
    fs::path rep3 = fresh_dir("crps_report3");
    std::ostringstream out3;
    REQUIRE(cli::cmd_eval_crps(ens2.string(), truth_path, rep3.string(), &out3) == 0);
    const std::string line = out3.str();
    REQUIRE(line.size() >= 8);
    CHECK(line.find('.') != std::string::npos);
    CHECK(line.substr(line.find('.') + 1).size() == 7);  // 6 digits + newline
    CHECK(std::stod(line) > 0.0);
  }

  SUBCASE("shape mismatches and missing inputs exit with 1") {
    fs::path bad = fresh_dir("ens_bad");
    io::write_tensor((bad / "a.rvtf").string(), truth);
    io::write_tensor((bad / "b.rvtf").string(),
                     video::gen_bouncing_ball(32, 3, 16, 16, 3.0, true));
    fs::path rep4 = fresh_dir("crps_report4");
    CHECK(cli::cmd_eval_crps(bad.string(), truth_path, rep4.string()) == 1);
    CHECK(cli::cmd_eval_crps(ens.string(), "/nonexistent.rvtf", rep4.string()) == 1);
    CHECK(cli::cmd_eval_crps("/nonexistent_dir", truth_path, rep4.string()) == 1);

    fs::path lone = fresh_dir("ens_lone");
    io::write_tensor((lone / "a.rvtf").string(), truth);
    CHECK(cli::cmd_eval_crps(lone.string(), truth_path, rep4.string()) == 1);
  }
}

// ===== selfcheck ==========================================================

TEST_CASE("selfcheck passes clean and names the broken invariant when corrupted") {
  std::ostringstream report;
  cli::SelfcheckOptions opts;
  opts.out = &report;
  REQUIRE(cli::cmd_selfcheck(opts) == 0);

  std::istringstream lines(report.str());
  std::string line;
  std::vector<std::string> names;
  while (std::getline(lines, line)) {
    nlohmann::json entry = nlohmann::json::parse(line);
    names.push_back(entry.at("check"));
    CHECK(entry.at("status") == "pass");
  }
  const std::vector<std::string> expected = {
      "grad_linear",         "grad_blocks",       "grad_full_loss",
      "schedule_identities", "posterior_identities", "one_step_recovery",
      "crps_oracle",         "marginal_vs_iterated"};
  CHECK(names == expected);

  std::ostringstream corrupted;
  cli::SelfcheckOptions bad;
  bad.corrupt_schedule = true;
  bad.out = &corrupted;
  CHECK(cli::cmd_selfcheck(bad) == 3);
  std::istringstream lines2(corrupted.str());
  bool schedule_failed = false;
  while (std::getline(lines2, line)) {
    nlohmann::json entry = nlohmann::json::parse(line);
    if (entry.at("check") == "schedule_identities") {
      CHECK(entry.at("status") == "fail");
      CHECK(entry.contains("invariant"));
      schedule_failed = true;
    } else {
      CHECK(entry.at("status") == "pass");
    }
  }
  CHECK(schedule_failed);
}

// ===== binary front end ===================================================

#ifdef RVD_CLI_PATH
TEST_CASE("the installed binary maps errors to the documented exit codes") {
  const std::string bin = RVD_CLI_PATH;
  auto run = [&](const std::string& args) {
    const int status = std::system((bin + " " + args + " >/dev/null 2>&1").c_str());
    return WEXITSTATUS(status);
  };
  CHECK(run("--help") == 0);
  CHECK(run("") == 1);              // a subcommand is required
  CHECK(run("juggle") == 1);        // unknown subcommand
  CHECK(run("train") == 1);         // missing config argument
  CHECK(run("train /nonexistent.cfg") == 1);
  CHECK(run("eval-crps /none /none.rvtf /tmp/rvd_cli_unused") == 1);
}
#endif
