#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "doctest.h"
#include "rvd/schedule.hpp"
#include "rvd/train.hpp"
#include "rvd/video.hpp"

using namespace rvd;

namespace {

bool same_bytes(const TensorF& a, const TensorF& b) {
  if (a.shape() != b.shape()) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

bool same_store(const nn::ParamStore& a, const nn::ParamStore& b) {
  if (a.size() != b.size()) return false;
  for (int64_t i = 0; i < a.size(); ++i)
    if (a.name(i) != b.name(i) || !same_bytes(a.value(i), b.value(i)))
      return false;
  return true;
}

train::TrainConfig tiny_config(flow::Mode mode) {
  train::TrainConfig tc;
  tc.mode = mode;
  tc.context_len = 2;
  tc.future_len = 2;
  tc.n_steps = 10;
  tc.lr_initial = 3e-3;
  tc.lr_final = 1e-3;
  tc.max_steps = 200;
  tc.seed = 1;
  return tc;
}

std::vector<video::Window> tiny_pool(const train::TrainConfig& tc) {
  std::vector<video::Window> pool;
  for (const TensorF& v : video::load_dataset("ball", 1, 4, 12, 8, 8)) {
    auto w = video::window_sequences(v, tc.context_len, tc.future_len, 2);
    pool.insert(pool.end(), w.begin(), w.end());
  }
  return pool;
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

int count_lines(const std::string& path) {
  std::ifstream in(path);
  int n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

// ===== Learning-rate schedule =============================================

TEST_CASE("learning rate ramps linearly then holds the floor") {
  train::TrainConfig tc;  // 5e-5 -> 2e-5 over 2000 steps
  CHECK(train::lr_schedule(0, tc) == doctest::Approx(5e-5).epsilon(1e-12));
  CHECK(train::lr_schedule(1000, tc) == doctest::Approx(3.5e-5).epsilon(1e-12));
  CHECK(train::lr_schedule(2000, tc) == doctest::Approx(2e-5).epsilon(1e-12));
  CHECK(train::lr_schedule(99999, tc) == doctest::Approx(2e-5).epsilon(1e-12));
  CHECK(train::lr_schedule(500, tc) ==
        doctest::Approx(5e-5 + (2e-5 - 5e-5) * 0.25).epsilon(1e-12));
  CHECK_THROWS_AS(train::lr_schedule(-1, tc), ShapeError);
}

// ===== Adam ================================================================

TEST_CASE("adam takes a signed unit-ish first step and counts updates") {
  nn::ParamStore store;
  store.add("w", TensorF::scalar(5.0f));
  train::AdamState opt = train::make_adam(store);
  CHECK(opt.step == 0);

  // grad of (w-3)^2 at w=5 is 4; bias-corrected first step is lr * sign-ish.
  std::vector<TensorF> grads{TensorF::scalar(4.0f)};
  train::adam_update(store, grads, opt, 0.1);
  CHECK(opt.step == 1);
  CHECK(store.value(0).item() == doctest::Approx(4.9f).epsilon(1e-5));

  // A zero gradient leaves the parameter exactly alone but still ticks.
  nn::ParamStore frozen;
  frozen.add("w", TensorF::scalar(1.25f));
  train::AdamState fopt = train::make_adam(frozen);
  std::vector<TensorF> zero{TensorF::scalar(0.0f)};
  train::adam_update(frozen, zero, fopt, 0.1);
  train::adam_update(frozen, zero, fopt, 0.1);
  CHECK(fopt.step == 2);
  CHECK(frozen.value(0).item() == 1.25f);
}

TEST_CASE("adam drives a quadratic to its minimum") {
  nn::ParamStore store;
  store.add("w", TensorF::scalar(0.0f));
  train::AdamState opt = train::make_adam(store);
  for (int i = 0; i < 500; ++i) {
    const float w = store.value(0).item();
    std::vector<TensorF> grads{TensorF::scalar(2.0f * (w - 3.0f))};
    train::adam_update(store, grads, opt, 0.1);
  }
  CHECK(std::abs(store.value(0).item() - 3.0f) < 1e-2);
}

TEST_CASE("adam refuses a missing gradient, naming the parameter") {
  nn::ParamStore store;
  store.add("denoiser/stem/w", TensorF::scalar(1.0f));
  train::AdamState opt = train::make_adam(store);
  std::vector<TensorF> grads{TensorF()};  // empty slot
  CHECK_THROWS_WITH_AS(train::adam_update(store, grads, opt, 0.1),
                       doctest::Contains("denoiser/stem/w"), ShapeError);
}

// ===== Training step ======================================================

TEST_CASE("training on a small pool reduces the loss") {
  train::TrainConfig tc = tiny_config(flow::Mode::kVd);
  std::vector<video::Window> pool = tiny_pool(tc);
  REQUIRE(pool.size() == 20);

  train::Trainer tr(model::ModelConfig::profile("desk"), tc);
  std::vector<double> losses;
  while (tr.step() < tc.max_steps) {
    Rng brng = Rng::stream(tc.seed, "batch", static_cast<uint64_t>(tr.step()));
    std::vector<video::Window> batch{
        pool[static_cast<size_t>(brng.uniform_int(0, static_cast<int64_t>(pool.size()) - 1))]};
    losses.push_back(tr.training_step(batch, nullptr));
  }
  for (double l : losses) CHECK(l >= 0.0);
  auto avg = [&](size_t a, size_t b) {
    return std::accumulate(losses.begin() + a, losses.begin() + b, 0.0) / (b - a);
  };
  CHECK(avg(180, 200) < 0.5 * avg(0, 20));
}

TEST_CASE("training is deterministic across fresh trainers") {
  train::TrainConfig tc = tiny_config(flow::Mode::kRvd);
  tc.batch_size = 2;
  std::vector<video::Window> pool = tiny_pool(tc);

  auto run5 = [&]() {
    train::Trainer tr(model::ModelConfig::profile("desk"), tc);
    std::vector<double> losses;
    for (int s = 0; s < 5; ++s) {
      Rng brng = Rng::stream(tc.seed, "batch", static_cast<uint64_t>(tr.step()));
      std::vector<video::Window> batch;
      for (int i = 0; i < tc.batch_size; ++i)
        batch.push_back(pool[static_cast<size_t>(
            brng.uniform_int(0, static_cast<int64_t>(pool.size()) - 1))]);
      losses.push_back(tr.training_step(batch, nullptr));
    }
    return std::make_pair(losses, tr);
  };
  auto [la, ta] = run5();
  auto [lb, tb] = run5();
  CHECK(la == lb);  // bitwise equal doubles
  CHECK(same_store(ta.net().store, tb.net().store));
}

TEST_CASE("one shared diffusion step per training step, walked in order") {
  train::TrainConfig tc = tiny_config(flow::Mode::kRvd);
  tc.future_len = 3;
  std::vector<video::Window> pool = tiny_pool(tc);

  train::Trainer tr(model::ModelConfig::profile("desk"), tc);
  std::vector<std::pair<int, int>> calls;  // (n, t)
  train::Hooks hooks;
  hooks.eps_oracle = [&](const TensorF& yn, int n, int t,
                         const TensorF&) -> TensorF {
    calls.emplace_back(n, t);
    return TensorF::zeros(yn.shape());
  };
  tr.training_step({pool[0]}, &hooks);
  tr.training_step({pool[1]}, &hooks);

  REQUIRE(calls.size() == 6);  // q per step
  for (int s = 0; s < 2; ++s) {
    for (int t = 0; t < 3; ++t) {
      CHECK(calls[s * 3 + t].second == t);
      CHECK(calls[s * 3 + t].first == calls[s * 3].first);  // shared n
      CHECK(calls[s * 3 + t].first >= 1);
      CHECK(calls[s * 3 + t].first <= tc.n_steps);
    }
  }
  // Different optimizer steps eventually draw different n (seeded, fixed).
  CHECK(tr.step() == 2);
}

TEST_CASE("an exact noise oracle makes the loss identically zero") {
  train::TrainConfig tc = tiny_config(flow::Mode::kVd);
  tc.future_len = 2;
  std::vector<video::Window> pool = tiny_pool(tc);

  train::Trainer tr(model::ModelConfig::profile("desk"), tc);
  train::Hooks hooks;
  hooks.eps_oracle = [&](const TensorF& yn, int, int t,
                         const TensorF&) -> TensorF {
    // Recreate the exact noise the step drew for this frame.
    Rng erng = Rng::stream(tc.seed, "train_eps",
                           static_cast<uint64_t>(tr.step()) * tc.future_len + t);
    return erng.gaussian_tensor<float>(yn.shape());
  };
  for (int s = 0; s < 3; ++s) {
    const double loss = tr.training_step({pool[static_cast<size_t>(s)]}, &hooks);
    CHECK(loss == 0.0);
  }
  CHECK(tr.step() == 3);
}

TEST_CASE("window geometry is validated") {
  train::TrainConfig tc = tiny_config(flow::Mode::kRvd);
  train::Trainer tr(model::ModelConfig::profile("desk"), tc);

  CHECK_THROWS_AS(tr.training_step({}, nullptr), ShapeError);

  TensorF vid = video::gen_bouncing_ball(3, 10, 8, 8, 2.0, false);
  // context_len mismatch: window built for p=3.
  auto wrong_p = video::window_sequences(vid, 3, 2, 1);
  CHECK_THROWS_WITH_AS(tr.training_step({wrong_p[0]}, nullptr),
                       doctest::Contains("context_len"), ShapeError);
  // future_len mismatch.
  auto wrong_q = video::window_sequences(vid, 2, 3, 1);
  CHECK_THROWS_WITH_AS(tr.training_step({wrong_q[0]}, nullptr),
                       doctest::Contains("context_len"), ShapeError);
  // Frame size that a downsample stage cannot halve.
  TensorF odd = video::gen_bouncing_ball(3, 10, 7, 8, 2.0, false);
  auto odd_w = video::window_sequences(odd, 2, 2, 1);
  CHECK_THROWS_AS(tr.training_step({odd_w[0]}, nullptr), ShapeError);
}

TEST_CASE("a poisoned loss raises a numeric error") {
  train::TrainConfig tc = tiny_config(flow::Mode::kVd);
  std::vector<video::Window> pool = tiny_pool(tc);
  train::Trainer tr(model::ModelConfig::profile("desk"), tc);
  train::Hooks hooks;
  hooks.inject_nan = true;
  CHECK_THROWS_AS(tr.training_step({pool[0]}, &hooks), NumericError);
}

// ===== run() and the loss log =============================================

TEST_CASE("run trains to max_steps and logs one row per step") {
  train::TrainConfig tc = tiny_config(flow::Mode::kVd);
  tc.max_steps = 6;
  std::vector<video::Window> pool = tiny_pool(tc);
  const std::string csv = temp_path("rvd_test_loss.csv");
  std::filesystem::remove(csv);

  train::Trainer tr(model::ModelConfig::profile("desk"), tc);
  tr.run(pool, csv, nullptr);
  CHECK(tr.step() == 6);
  CHECK(count_lines(csv) == 7);  // header + 6 rows

  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header == "step,loss,lr,wall_ms");
  long long step = -1;
  double loss = 0, lr = 0, ms = 0;
  std::string row;
  std::getline(in, row);
  CHECK(std::sscanf(row.c_str(), "%lld,%lf,%lf,%lf", &step, &loss, &lr, &ms) == 4);
  CHECK(step == 0);
  CHECK(loss > 0.0);
  CHECK(lr == doctest::Approx(tc.lr_initial).epsilon(1e-9));

  CHECK_THROWS_AS(tr.run({}, "", nullptr), ShapeError);
  std::filesystem::remove(csv);
}

// ===== Generation =========================================================

TEST_CASE("generation spends the advertised network evaluations") {
  train::TrainConfig tc = tiny_config(flow::Mode::kRvd);
  tc.future_len = 3;
  train::Trainer tr(model::ModelConfig::profile("desk"), tc);
  TensorF context = video::slice_frames(
      video::gen_bouncing_ball(7, 4, 8, 8, 2.0, false), 0, 2);

  train::GenerateResult out = tr.generate(context, 42, nullptr);
  CHECK(out.frames.shape() == Shape{3, 1, 8, 8});
  CHECK(out.denoiser_evals == 3 * tc.n_steps);
  CHECK(out.transform_evals == 3);
  for (int64_t i = 0; i < out.frames.numel(); ++i) {
    CHECK(out.frames.data()[i] >= -1.0f);
    CHECK(out.frames.data()[i] <= 1.0f);
  }

  // Plain-noise mode never consults a transform.
  train::TrainConfig vd = tc;
  vd.mode = flow::Mode::kVd;
  train::Trainer trv(model::ModelConfig::profile("desk"), vd);
  train::GenerateResult outv = trv.generate(context, 42, nullptr);
  CHECK(outv.transform_evals == 0);
  CHECK(outv.denoiser_evals == 3 * tc.n_steps);
}

TEST_CASE("generation is deterministic in the seed") {
  train::TrainConfig tc = tiny_config(flow::Mode::kRvd);
  train::Trainer tr(model::ModelConfig::profile("desk"), tc);
  TensorF context = video::slice_frames(
      video::gen_bouncing_ball(7, 4, 8, 8, 2.0, false), 0, 2);

  train::GenerateResult a = tr.generate(context, 5, nullptr);
  train::GenerateResult b = tr.generate(context, 5, nullptr);
  train::GenerateResult c = tr.generate(context, 6, nullptr);
  CHECK(same_bytes(a.frames, b.frames));
  CHECK(!same_bytes(a.frames, c.frames));

  CHECK_THROWS_AS(tr.generate(TensorF({0, 1, 8, 8}), 5, nullptr), ShapeError);
  CHECK_THROWS_AS(tr.generate(TensorF({2, 1, 7, 8}), 5, nullptr), ShapeError);
}

TEST_CASE("single-step schedule with an exact oracle recovers the frame") {
  // With one diffusion step the reverse update solves for y0 in closed form,
  // so an oracle that reports the true noise reproduces the planted frame.
  train::TrainConfig tc = tiny_config(flow::Mode::kVd);
  tc.n_steps = 1;
  tc.future_len = 2;
  train::Trainer tr(model::ModelConfig::profile("desk"), tc);
  const diffusion::NoiseSchedule& sched = tr.schedule();
  REQUIRE(sched.beta_at(1) == doctest::Approx(0.999).epsilon(1e-12));

  Rng rng = Rng::stream(21, "planted");
  TensorF planted = rng.uniform_tensor<float>({1, 1, 8, 8}, -0.9, 0.9);
  const float sa = static_cast<float>(std::sqrt(sched.alpha_bar_at(1)));
  const float sn = static_cast<float>(std::sqrt(1.0 - sched.alpha_bar_at(1)));

  train::Hooks hooks;
  hooks.eps_oracle = [&](const TensorF& y, int n, int, const TensorF&) {
    REQUIRE(n == 1);
    TensorF eps(y.shape());
    for (int64_t i = 0; i < y.numel(); ++i)
      eps.mut_data()[i] = (y.data()[i] - sa * planted.data()[i]) / sn;
    return eps;
  };
  TensorF context = video::slice_frames(
      video::gen_bouncing_ball(7, 4, 8, 8, 2.0, false), 0, 2);
  train::GenerateResult out = tr.generate(context, 3, &hooks);
  for (int t = 0; t < 2; ++t) {
    TensorF frame = video::frame_at(out.frames, t);
    for (int64_t i = 0; i < frame.numel(); ++i)
      CHECK(std::abs(frame.data()[i] - planted.data()[i]) < 1e-5);
  }
}

TEST_CASE("a zeroed transform reproduces plain-noise behaviour bit for bit") {
  // Same seed, same data: a residual-mode trainer whose transform output is
  // forced to zero (and scale to one) must match the plain-noise trainer on
  // every shared parameter and on generated pixels.
  train::TrainConfig rc = tiny_config(flow::Mode::kRvd);
  train::TrainConfig vc = rc;
  vc.mode = flow::Mode::kVd;
  std::vector<video::Window> pool = tiny_pool(rc);

  train::Trainer trr(model::ModelConfig::profile("desk"), rc);
  train::Trainer trv(model::ModelConfig::profile("desk"), vc);
  train::Hooks hooks;
  hooks.zero_mu = true;

  for (int s = 0; s < 4; ++s) {
    std::vector<video::Window> batch{pool[static_cast<size_t>(s)]};
    const double lr_loss = trr.training_step(batch, &hooks);
    const double vd_loss = trv.training_step(batch, nullptr);
    CHECK(lr_loss == vd_loss);
  }
  const nn::ParamStore& rs = trr.net().store;
  const nn::ParamStore& vs = trv.net().store;
  for (int64_t i = 0; i < vs.size(); ++i) {
    bool found = false;
    for (int64_t j = 0; j < rs.size(); ++j) {
      if (rs.name(j) != vs.name(i)) continue;
      found = true;
      CHECK(same_bytes(rs.value(j), vs.value(i)));
      break;
    }
    CHECK(found);
  }

  TensorF context = video::slice_frames(
      video::gen_bouncing_ball(7, 4, 8, 8, 2.0, false), 0, 2);
  train::GenerateResult gr = trr.generate(context, 11, &hooks);
  train::GenerateResult gv = trv.generate(context, 11, nullptr);
  CHECK(same_bytes(gr.frames, gv.frames));
  CHECK(gr.transform_evals == 2);  // still evaluated, output discarded
}

// ===== Checkpointing ======================================================

TEST_CASE("checkpoint resume continues the exact same trajectory") {
  train::TrainConfig tc = tiny_config(flow::Mode::kRvd);
  tc.max_steps = 5;
  std::vector<video::Window> pool = tiny_pool(tc);
  const std::string ckpt = temp_path("rvd_test_resume.rvtf");

  // Straight-through run.
  train::Trainer full(model::ModelConfig::profile("desk"), tc);
  full.run(pool, "", nullptr);

  // Split run: three manual steps (batch choice replays run()'s stream, so
  // stopping early must not change the trajectory), save, load, finish.
  train::Trainer head(model::ModelConfig::profile("desk"), tc);
  for (int s = 0; s < 3; ++s) {
    Rng brng = Rng::stream(tc.seed, "batch", static_cast<uint64_t>(head.step()));
    std::vector<video::Window> batch{pool[static_cast<size_t>(
        brng.uniform_int(0, static_cast<int64_t>(pool.size()) - 1))]};
    head.training_step(batch, nullptr);
  }
  head.save_checkpoint(ckpt);

  train::Trainer tail = train::Trainer::load_checkpoint(ckpt);
  CHECK(tail.step() == 3);
  CHECK(tail.config().mode == flow::Mode::kRvd);
  CHECK(tail.config().max_steps == 5);
  tail.run(pool, "", nullptr);

  CHECK(tail.step() == full.step());
  CHECK(same_store(tail.net().store, full.net().store));
  CHECK(tail.optimizer().step == full.optimizer().step);
  for (size_t i = 0; i < full.optimizer().m.size(); ++i) {
    CHECK(same_bytes(tail.optimizer().m[i], full.optimizer().m[i]));
    CHECK(same_bytes(tail.optimizer().v[i], full.optimizer().v[i]));
  }

  TensorF context = video::slice_frames(
      video::gen_bouncing_ball(7, 4, 8, 8, 2.0, false), 0, 2);
  CHECK(same_bytes(tail.generate(context, 2, nullptr).frames,
                   full.generate(context, 2, nullptr).frames));
  std::filesystem::remove(ckpt);
}

TEST_CASE("checkpoints preserve double-precision config fields exactly") {
  train::TrainConfig tc = tiny_config(flow::Mode::kVd);
  // Values chosen to be unrepresentable in a plain float payload.
  tc.lr_initial = 0.1 + std::pow(2.0, -30);
  tc.lr_final = 0.05 + std::pow(2.0, -31);
  tc.sigma = 3.7;
  tc.seed = 0xdeadbeefcafef00dULL;
  tc.max_steps = 1;
  const std::string ckpt = temp_path("rvd_test_fields.rvtf");

  train::Trainer tr(model::ModelConfig::profile("desk"), tc);
  tr.save_checkpoint(ckpt);
  train::Trainer back = train::Trainer::load_checkpoint(ckpt);
  CHECK(back.config().lr_initial == tc.lr_initial);
  CHECK(back.config().lr_final == tc.lr_final);
  CHECK(back.config().sigma == tc.sigma);
  CHECK(back.config().seed == tc.seed);
  CHECK(back.config().n_steps == tc.n_steps);
  CHECK(back.config().variance_mode == tc.variance_mode);
  std::filesystem::remove(ckpt);
}

TEST_CASE("a checkpoint with a tampered schedule is rejected") {
  train::TrainConfig tc = tiny_config(flow::Mode::kVd);
  const std::string ckpt = temp_path("rvd_test_tamper.rvtf");
  train::Trainer tr(model::ModelConfig::profile("desk"), tc);
  tr.save_checkpoint(ckpt);

  io::NamedTensors named = io::read_tensor_map(ckpt);
  for (auto& [name, t] : named)
    if (name == "sched/beta") t.mut_data()[3] += 1e-4f;
  io::write_tensor_map(ckpt, named);

  CHECK_THROWS_WITH_AS(train::Trainer::load_checkpoint(ckpt),
                       doctest::Contains("noise schedule"), ShapeError);
  std::filesystem::remove(ckpt);
}

TEST_CASE("a checkpoint with a missing parameter is rejected") {
  train::TrainConfig tc = tiny_config(flow::Mode::kVd);
  const std::string ckpt = temp_path("rvd_test_missing.rvtf");
  train::Trainer tr(model::ModelConfig::profile("desk"), tc);
  tr.save_checkpoint(ckpt);

  io::NamedTensors named = io::read_tensor_map(ckpt);
  io::NamedTensors pruned;
  for (auto& [name, t] : named)
    if (name != "param/denoiser/stem/w") pruned.emplace_back(name, t.clone());
  io::write_tensor_map(ckpt, pruned);
  CHECK_THROWS_AS(train::Trainer::load_checkpoint(ckpt), IoError);
  std::filesystem::remove(ckpt);
}
