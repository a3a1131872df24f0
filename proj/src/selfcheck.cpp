#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "rvd/blocks.hpp"
#include "rvd/commands.hpp"
#include "rvd/crps.hpp"
#include "rvd/grad_check.hpp"
#include "rvd/model.hpp"
#include "rvd/ops.hpp"
#include "rvd/rng.hpp"
#include "rvd/schedule.hpp"
#include "rvd/train.hpp"
#include "rvd/video.hpp"

// Built-in verification battery: re-derives the library's core guarantees
// from independent oracles at runtime, so a rebuilt or repackaged binary can
// prove its own math before anyone trains with it. One JSON line per check.

namespace rvd::cli {

namespace {

using nlohmann::ordered_json;

struct CheckResult {
  std::string name;
  bool pass = true;
  ordered_json detail = ordered_json::object();
};

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

TensorD gauss(uint64_t seed, const Shape& shape) {
  return Rng::stream(seed, "selfcheck").gaussian_tensor<double>(shape);
}

// FD check of a block: inputs are [params..., extras...]; the scalar is the
// mean squared gap to a fixed random target so every output element matters.
double block_fd(
    const nn::ParamStore& store,
    const std::function<ad::Var<double>(const nn::Binding<double>&,
                                        std::vector<ad::Var<double>>&)>& fwd,
    const std::vector<TensorD>& extras, uint64_t target_seed, double step,
    double refine_tol) {
  std::vector<TensorD> inputs;
  for (int64_t i = 0; i < store.size(); ++i)
    inputs.push_back(store.value(i).cast<double>());
  inputs.insert(inputs.end(), extras.begin(), extras.end());
  TensorD target;  // fixed across evaluations
  auto f = [&](ad::Tape<double>& tape,
               std::vector<ad::Var<double>>& ins) -> ad::Var<double> {
    nn::Binding<double> b;
    b.tape = &tape;
    b.vars.assign(ins.begin(), ins.end() - static_cast<int64_t>(extras.size()));
    std::vector<ad::Var<double>> ex(ins.end() - static_cast<int64_t>(extras.size()),
                                    ins.end());
    ad::Var<double> out = fwd(b, ex);
    if (target.numel() == 0)
      target = Rng::stream(target_seed, "sc_target")
                   .gaussian_tensor<double>(out.shape());
    return ad::mse(out, tape.constant(target));
  };
  return ad::grad_check_multi<double>(f, inputs, step, 0, 0, refine_tol);
}

// ===== Check 1: linear-op gradients (tight tolerance) =====================

// Along any single coordinate these losses are quadratic, so the central
// difference is exact up to rounding; 1e-6 leaves no room for a wrong rule.
CheckResult check_grad_linear() {
  CheckResult r{"grad_linear"};
  double worst = 0.0;
  int probes = 0;
  for (uint64_t s = 1; s <= 20; ++s) {
    auto fd = [&](const std::function<ad::Var<double>(
                      ad::Tape<double>&, std::vector<ad::Var<double>>&)>& f,
                  const std::vector<TensorD>& inputs) {
      worst = std::max(worst, ad::grad_check_multi<double>(f, inputs, 1e-4));
      ++probes;
    };

    TensorD tgt_mm = gauss(900 + s, {3, 5});
    fd([&](ad::Tape<double>& t, std::vector<ad::Var<double>>& v) {
         return ad::mse(ad::matmul(v[0], v[1]), t.constant(tgt_mm));
       },
       {gauss(10 * s, {3, 4}), gauss(10 * s + 1, {4, 5})});

    TensorD tgt_bmm = gauss(910 + s, {2, 3, 5});
    fd([&](ad::Tape<double>& t, std::vector<ad::Var<double>>& v) {
         return ad::mse(ad::bmm(v[0], v[1]), t.constant(tgt_bmm));
       },
       {gauss(20 * s, {2, 3, 4}), gauss(20 * s + 1, {2, 4, 5})});

    TensorD tgt_conv = gauss(920 + s, {1, 4, 6, 6});
    fd([&](ad::Tape<double>& t, std::vector<ad::Var<double>>& v) {
         return ad::mse(ad::conv2d(v[0], v[1], v[2], 1, 1), t.constant(tgt_conv));
       },
       {gauss(30 * s, {1, 3, 6, 6}), gauss(30 * s + 1, {4, 3, 3, 3}),
        gauss(30 * s + 2, {4})});

    TensorD tgt_tc = gauss(930 + s, {1, 4, 6, 6});
    fd([&](ad::Tape<double>& t, std::vector<ad::Var<double>>& v) {
         return ad::mse(ad::conv_transpose2d(v[0], v[1], v[2], 2, 1, 1),
                        t.constant(tgt_tc));
       },
       {gauss(40 * s, {1, 3, 3, 3}), gauss(40 * s + 1, {3, 4, 3, 3}),
        gauss(40 * s + 2, {4})});

    // Linear layer through the parameter-store path.
    nn::ParamStore ps;
    Rng init = Rng::stream(50 * s, "sc_linear");
    nn::Linear lin(ps, init, "lin", 6, 3);
    TensorD x = gauss(50 * s + 1, {6});
    worst = std::max(
        worst, block_fd(
                   ps,
                   [&](const nn::Binding<double>& b,
                       std::vector<ad::Var<double>>& ex) {
                     return lin.forward(b, ex[0]);
                   },
                   {x}, 940 + s, 1e-4, 0.0));
    ++probes;
  }
  r.pass = worst < 1e-6;
  r.detail["worst_rel_err"] = worst;
  r.detail["tolerance"] = 1e-6;
  r.detail["probes"] = probes;
  return r;
}

// ===== Check 2: nonlinear block gradients ==================================

CheckResult check_grad_blocks() {
  CheckResult r{"grad_blocks"};
  double worst = 0.0;
  int probes = 0;
  const double step = 1e-4, tol = 1e-3;
  for (uint64_t s = 1; s <= 20; ++s) {
    Rng init = Rng::stream(60 * s, "sc_blocks");

    nn::ParamStore gn_ps;
    nn::GroupNorm gn(gn_ps, "gn", 8, 4);
    worst = std::max(worst, block_fd(
                                gn_ps,
                                [&](const nn::Binding<double>& b,
                                    std::vector<ad::Var<double>>& ex) {
                                  return gn.forward(b, ex[0]);
                                },
                                {gauss(61 * s, {1, 8, 5, 5})}, 960 + s, step, tol));
    ++probes;

    worst = std::max(
        worst,
        ad::grad_check<double>(
            [](ad::Tape<double>& t, ad::Var<double> x) {
              return ad::mse(ad::softmax_lastaxis(x),
                             t.constant(TensorD::full({2, 3, 7}, 0.25)));
            },
            gauss(62 * s, {2, 3, 7}), step));
    ++probes;

    nn::ParamStore rb_ps;
    nn::ResBlock rb(rb_ps, init, "rb", 8, 8, 8, 4);
    worst = std::max(
        worst, block_fd(
                   rb_ps,
                   [&](const nn::Binding<double>& b,
                       std::vector<ad::Var<double>>& ex) {
                     return rb.forward(b, ex[0], ex[1]);
                   },
                   {gauss(63 * s, {1, 8, 5, 5}), gauss(64 * s, {8})},
                   970 + s, step, tol));
    ++probes;

    nn::ParamStore gru_ps;
    nn::ConvGRU gru(gru_ps, init, "gru", 4, 8);
    worst = std::max(
        worst, block_fd(
                   gru_ps,
                   [&](const nn::Binding<double>& b,
                       std::vector<ad::Var<double>>& ex) {
                     return gru.forward(b, ex[0], ex[1]);
                   },
                   {gauss(65 * s, {1, 4, 5, 5}), gauss(66 * s, {1, 8, 5, 5})},
                   980 + s, step, tol));
    ++probes;

    nn::ParamStore at_ps;
    nn::LinearAttention att(at_ps, init, "att", 8, 2, 4);
    worst = std::max(worst, block_fd(
                                at_ps,
                                [&](const nn::Binding<double>& b,
                                    std::vector<ad::Var<double>>& ex) {
                                  return att.forward(b, ex[0]);
                                },
                                {gauss(67 * s, {1, 8, 4, 4})}, 990 + s, step, tol));
    ++probes;

    nn::ParamStore dn_ps;
    nn::Downsample down(dn_ps, init, "down", 8, 8);
    worst = std::max(worst, block_fd(
                                dn_ps,
                                [&](const nn::Binding<double>& b,
                                    std::vector<ad::Var<double>>& ex) {
                                  return down.forward(b, ex[0]);
                                },
                                {gauss(68 * s, {1, 8, 6, 6})}, 1000 + s, step, tol));
    ++probes;

    nn::ParamStore up_ps;
    nn::Upsample up(up_ps, init, "up", 8, 8);
    worst = std::max(worst, block_fd(
                                up_ps,
                                [&](const nn::Binding<double>& b,
                                    std::vector<ad::Var<double>>& ex) {
                                  return up.forward(b, ex[0]);
                                },
                                {gauss(69 * s, {1, 8, 3, 3})}, 1010 + s, step, tol));
    ++probes;
  }
  r.pass = worst < 1e-3;
  r.detail["worst_rel_err"] = worst;
  r.detail["tolerance"] = 1e-3;
  r.detail["probes"] = probes;
  return r;
}

// ===== Check 3: full-loss gradients through the whole stack ================

// Noise-matching loss through the whole context encoder + denoiser stack,
// every parameter probed at a random coordinate.
double denoiser_loss_fd(uint64_t seed) {
  flow::ResidualConfig res_vd;
  res_vd.mode = flow::Mode::kVd;
  model::Model m(model::ModelConfig::profile("desk"), res_vd, seed);
  Rng rng = Rng::stream(seed, "sc_fd_denoiser");
  TensorD frame = rng.gaussian_tensor<double>({1, 1, 8, 8});
  TensorD yn = rng.gaussian_tensor<double>({1, 1, 8, 8});
  TensorD eps = rng.gaussian_tensor<double>({1, 1, 8, 8});
  std::vector<TensorD> inputs;
  for (int64_t i = 0; i < m.store.size(); ++i)
    inputs.push_back(m.store.value(i).cast<double>());
  inputs.push_back(yn);
  inputs.push_back(frame);
  auto f = [&](ad::Tape<double>& tape,
               std::vector<ad::Var<double>>& ins) -> ad::Var<double> {
    nn::Binding<double> b;
    b.tape = &tape;
    b.vars.assign(ins.begin(), ins.end() - 2);
    model::RecurrentState st = m.context.init_state(1, 8, 8);
    std::vector<ad::Var<double>> h = model::detail::leaf_state(tape, st);
    h = m.context.update(b, h, ins[ins.size() - 1]);
    ad::Var<double> eps_hat = m.denoiser.forward(b, ins[ins.size() - 2], 42, h);
    return ad::mean(ad::square(ad::sub(eps_hat, tape.constant(eps))));
  };
  return ad::grad_check_multi<double>(f, inputs, 1e-4, 1, seed + 99, 1e-3);
}

// Squared-error loss through the transform stack, all transform parameters.
double transform_loss_fd(uint64_t seed) {
  flow::ResidualConfig res_rvd;
  res_rvd.mode = flow::Mode::kRvd;
  model::Model m(model::ModelConfig::profile("desk"), res_rvd, seed);
  Rng rng = Rng::stream(seed, "sc_fd_transform");
  TensorD frame = rng.gaussian_tensor<double>({1, 1, 8, 8});
  TensorD target = rng.gaussian_tensor<double>({1, 1, 8, 8});
  std::vector<int64_t> probed;
  std::vector<TensorD> inputs;
  for (int64_t i = 0; i < m.store.size(); ++i) {
    if (m.store.name(i).rfind("transform/", 0) != 0) continue;
    probed.push_back(i);
    inputs.push_back(m.store.value(i).cast<double>());
  }
  inputs.push_back(frame);
  auto f = [&](ad::Tape<double>& tape,
               std::vector<ad::Var<double>>& ins) -> ad::Var<double> {
    nn::Binding<double> b;
    b.tape = &tape;
    size_t next = 0;
    for (int64_t i = 0; i < m.store.size(); ++i) {
      if (next < probed.size() && probed[next] == i)
        b.vars.push_back(ins[next++]);
      else
        b.vars.push_back(tape.constant(m.store.value(i).cast<double>()));
    }
    model::RecurrentState st = m.transform.init_state(1, 8, 8);
    std::vector<ad::Var<double>> h = model::detail::leaf_state(tape, st);
    h = m.transform.step(b, h, ins.back());
    ad::Var<double> mu = m.transform.predict(b, h);
    return ad::mean(ad::square(ad::sub(mu, tape.constant(target))));
  };
  return ad::grad_check_multi<double>(f, inputs, 1e-4, 1, seed + 7, 1e-3);
}

CheckResult check_grad_full_loss() {
  CheckResult r{"grad_full_loss"};
  double worst = 0.0;
  int seeds = 0;
  for (uint64_t k = 0; k < 10; ++k) {
    worst = std::max(worst, denoiser_loss_fd(13 + k));
    worst = std::max(worst, transform_loss_fd(113 + k));
    seeds += 2;
  }
  r.pass = worst < 1e-3;
  r.detail["worst_rel_err"] = worst;
  r.detail["tolerance"] = 1e-3;
  r.detail["seeds"] = seeds;
  return r;
}

// ===== Check 4: noise-schedule identities ===================================

CheckResult check_schedule(bool corrupt) {
  CheckResult r{"schedule_identities"};
  for (int n_steps : {10, 100, 1600}) {
    diffusion::NoiseSchedule sched = diffusion::make_cosine_schedule(n_steps);
    if (corrupt && n_steps == 100) sched.beta[3] += 1e-4;

    auto fail = [&](const std::string& invariant, int n) {
      r.pass = false;
      if (!r.detail.contains("invariant")) {
        r.detail["invariant"] = invariant;
        r.detail["N"] = n_steps;
        r.detail["n"] = n;
      }
    };
    if (sched.alpha_bar_at(0) != 1.0) fail("alpha_bar[0] == 1", 0);
    if (sched.posterior_var_at(1) != 0.0) fail("posterior_var[1] == 0", 1);
    for (int n = 1; n <= n_steps; ++n) {
      const double beta = sched.beta_at(n);
      if (!(beta > 0.0 && beta <= 0.999)) fail("beta in (0, 0.999]", n);
      if (n >= 2 && sched.beta_at(n - 1) > beta)
        fail("beta monotone nondecreasing", n);
      if (sched.alpha_at(n) != 1.0 - beta) fail("alpha == 1 - beta", n);
      if (sched.alpha_bar_at(n) != sched.alpha_bar_at(n - 1) * (1.0 - beta))
        fail("alpha_bar recurrence exact as stored", n);
      if (!(sched.alpha_bar_at(n) < sched.alpha_bar_at(n - 1)))
        fail("alpha_bar strictly decreasing", n);
      if (n >= 2) {
        const double want = beta * (1.0 - sched.alpha_bar_at(n - 1)) /
                            (1.0 - sched.alpha_bar_at(n));
        if (rel_err(sched.posterior_var_at(n), want) > 1e-14)
          fail("posterior_var == beta (1-abar_prev)/(1-abar)", n);
      }
    }
    if (n_steps >= 50 && !(sched.alpha_bar_at(n_steps) < 1e-3))
      fail("alpha_bar[N] near zero", n_steps);
  }
  if (r.pass) r.detail["depths"] = {10, 100, 1600};
  return r;
}

// ===== Check 5: posterior-mean identities ==================================

CheckResult check_posterior() {
  CheckResult r{"posterior_identities"};
  diffusion::NoiseSchedule sched = diffusion::make_cosine_schedule(100);
  Rng pick = Rng::stream(11, "sc_case_pick");
  double worst = 0.0;
  int cases = 0;

  // True posterior mean equals its noise parameterization.
  for (int rep = 0; rep < 120; ++rep) {
    const int n = static_cast<int>(pick.uniform_int(1, 100));
    TensorD y0 = gauss(1100 + rep, {3, 4});
    TensorD eps = gauss(1200 + rep, {3, 4});
    TensorD yn = diffusion::q_sample(y0, n, eps, sched);
    TensorD lhs = diffusion::posterior_mean(yn, y0, n, sched);
    const double beta = sched.beta_at(n);
    const double ab = sched.alpha_bar_at(n);
    for (int64_t i = 0; i < yn.numel(); ++i) {
      const double rhs =
          (yn.data()[i] - beta / std::sqrt(1.0 - ab) * eps.data()[i]) /
          std::sqrt(1.0 - beta);
      worst = std::max(worst, rel_err(lhs.data()[i], rhs));
    }
    ++cases;
  }

  // Mid-chain bound weight ties the posterior-mean gap to the noise gap.
  for (int rep = 0; rep < 120; ++rep) {
    const int n = static_cast<int>(pick.uniform_int(2, 100));
    TensorD y0 = gauss(1300 + rep, {3, 5});
    TensorD eps = gauss(1400 + rep, {3, 5});
    TensorD eps_cand = gauss(1500 + rep, {3, 5});
    TensorD yn = diffusion::q_sample(y0, n, eps, sched);
    TensorD zero = TensorD::zeros(y0.shape());
    TensorD m_true = diffusion::posterior_mean(yn, y0, n, sched);
    TensorD m_cand = diffusion::reverse_step(yn, eps_cand, n, zero, sched);
    double mean_sq = 0.0, noise_sq = 0.0;
    for (int64_t i = 0; i < y0.numel(); ++i) {
      const double dm = m_true.data()[i] - m_cand.data()[i];
      const double de = eps.data()[i] - eps_cand.data()[i];
      mean_sq += dm * dm;
      noise_sq += de * de;
    }
    const double gamma = sched.posterior_var_at(n);
    worst = std::max(worst, rel_err(mean_sq / (2.0 * gamma),
                                    diffusion::elbo_mid_weight(n, sched) *
                                        noise_sq));
    ++cases;
  }

  // Both variance modes share the mean: bitwise equal at z = 0.
  for (int rep = 0; rep < 20; ++rep) {
    const int n = static_cast<int>(pick.uniform_int(2, 100));
    TensorD yn = gauss(1600 + rep, {2, 3});
    TensorD eh = gauss(1700 + rep, {2, 3});
    TensorD zero = TensorD::zeros(yn.shape());
    TensorD a = diffusion::reverse_step(yn, eh, n, zero, sched,
                                        diffusion::VarianceMode::kSqrtPosterior);
    TensorD b = diffusion::reverse_step(yn, eh, n, zero, sched,
                                        diffusion::VarianceMode::kAsWritten);
    for (int64_t i = 0; i < a.numel(); ++i)
      if (a.data()[i] != b.data()[i]) r.pass = false;
    ++cases;
  }

  if (worst >= 1e-5) r.pass = false;
  r.detail["worst_rel_err"] = worst;
  r.detail["tolerance"] = 1e-5;
  r.detail["cases"] = cases;
  return r;
}

// ===== Check 6: single-step oracle recovery ================================

CheckResult check_one_step() {
  CheckResult r{"one_step_recovery"};
  train::TrainConfig tc;
  tc.context_len = 2;
  tc.future_len = 2;
  tc.n_steps = 1;
  tc.mode = flow::Mode::kVd;
  tc.max_steps = 4;
  tc.seed = 1;
  train::Trainer tr(model::ModelConfig::profile("desk"), tc);
  const diffusion::NoiseSchedule& sched = tr.schedule();

  TensorF planted =
      Rng::stream(21, "sc_planted").uniform_tensor<float>({1, 1, 8, 8}, -0.9, 0.9);
  const float sa = static_cast<float>(std::sqrt(sched.alpha_bar_at(1)));
  const float sn = static_cast<float>(std::sqrt(1.0 - sched.alpha_bar_at(1)));

  train::Hooks hooks;
  hooks.eps_oracle = [&](const TensorF& y, int, int, const TensorF&) {
    TensorF eps(y.shape());
    for (int64_t i = 0; i < y.numel(); ++i)
      eps.mut_data()[i] = (y.data()[i] - sa * planted.data()[i]) / sn;
    return eps;
  };
  TensorF context =
      video::slice_frames(video::gen_bouncing_ball(7, 4, 8, 8, 2.0, false), 0, 2);
  train::GenerateResult out = tr.generate(context, 3, &hooks);
  double worst = 0.0;
  for (int t = 0; t < tc.future_len; ++t) {
    TensorF frame = video::frame_at(out.frames, t);
    for (int64_t i = 0; i < frame.numel(); ++i)
      worst = std::max(worst, static_cast<double>(std::abs(
                                  frame.data()[i] - planted.data()[i])));
  }
  r.detail["worst_abs_err"] = worst;
  r.detail["tolerance"] = 1e-5;
  if (worst >= 1e-5) r.pass = false;

  // An oracle that reports the exact training noise zeroes the loss.
  train::Hooks exact;
  exact.eps_oracle = [&](const TensorF& yn, int, int t, const TensorF&) {
    Rng erng = Rng::stream(tc.seed, "train_eps",
                           static_cast<uint64_t>(tr.step()) * tc.future_len + t);
    return erng.gaussian_tensor<float>(yn.shape());
  };
  TensorF vid = video::gen_bouncing_ball(9, 6, 8, 8, 2.0, false);
  std::vector<video::Window> pool = video::window_sequences(vid, 2, 2, 2);
  double loss_sum = 0.0;
  for (int s = 0; s < 2; ++s)
    loss_sum += tr.training_step({pool[static_cast<size_t>(s)]}, &exact);
  r.detail["oracle_loss"] = loss_sum;
  if (loss_sum != 0.0) r.pass = false;
  return r;
}

// ===== Check 7: CRPS against the energy-form oracle ========================

// (1/S) sum |X_s - x| - (1/(2 S^2)) sum_{s,r} |X_s - X_r|, in exact integers.
double energy_crps(const std::vector<int>& samples, int obs) {
  const int64_t s_count = static_cast<int64_t>(samples.size());
  int64_t cross = 0, within = 0;
  for (int a : samples) cross += std::abs(static_cast<int64_t>(a) - obs);
  for (int a : samples)
    for (int b : samples) within += std::abs(static_cast<int64_t>(a) - b);
  const int64_t num = 2 * s_count * cross - within;
  return static_cast<double>(num) / static_cast<double>(2 * s_count * s_count);
}

CheckResult check_crps() {
  CheckResult r{"crps_oracle"};
  int cases = 0;
  double worst = 0.0;

  // Exhaustive: every multiset of up to 4 samples from {0..7}, every obs.
  for (int s_count = 1; s_count <= 4 && r.pass; ++s_count) {
    std::vector<int> samples(static_cast<size_t>(s_count), 0);
    while (true) {
      for (int obs = 0; obs < 8; ++obs) {
        if (metrics::crps_pixel(samples, obs) != energy_crps(samples, obs)) {
          r.pass = false;
          r.detail["mismatch_obs"] = obs;
        }
        ++cases;
      }
      int i = s_count - 1;
      while (i >= 0 && samples[static_cast<size_t>(i)] == 7) --i;
      if (i < 0) break;
      const int v = samples[static_cast<size_t>(i)] + 1;
      for (int j = i; j < s_count; ++j) samples[static_cast<size_t>(j)] = v;
    }
  }

  // Random: 1000 S=8 ensembles over the full 8-bit grid.
  Rng rng = Rng::stream(99, "sc_crps_rand");
  for (int rep = 0; rep < 1000; ++rep) {
    std::vector<int> samples(8);
    for (int& v : samples) v = static_cast<int>(rng.uniform_int(0, 255));
    const int obs = static_cast<int>(rng.uniform_int(0, 255));
    worst = std::max(worst, std::abs(metrics::crps_pixel(samples, obs) -
                                     energy_crps(samples, obs)));
    ++cases;
  }
  if (worst >= 1e-9) r.pass = false;
  r.detail["cases"] = cases;
  r.detail["worst_abs_err"] = worst;
  r.detail["tolerance"] = 1e-9;
  return r;
}

// ===== Check 8: closed-form marginal vs the iterated chain =================

CheckResult check_marginal() {
  CheckResult r{"marginal_vs_iterated"};
  diffusion::NoiseSchedule sched = diffusion::make_cosine_schedule(100);
  const int draws = 10000;
  const double y0 = 0.7;
  Rng rng = Rng::stream(7, "sc_chain_mc");
  r.detail["draws"] = draws;
  for (int n : {1, 50, 100}) {
    double sum = 0.0, sum_sq = 0.0;
    for (int d = 0; d < draws; ++d) {
      double y = y0;
      for (int i = 1; i <= n; ++i)
        y = std::sqrt(1.0 - sched.beta_at(i)) * y +
            std::sqrt(sched.beta_at(i)) * rng.gaussian();
      sum += y;
      sum_sq += y * y;
    }
    const double mean = sum / draws;
    const double var = sum_sq / draws - mean * mean;
    const double ab = sched.alpha_bar_at(n);
    const double want_mean = std::sqrt(ab) * y0;
    const double want_var = 1.0 - ab;
    const double se_mean = std::sqrt(want_var / draws);
    const double se_var = want_var * std::sqrt(2.0 / (draws - 1));
    const std::string key = "n" + std::to_string(n);
    r.detail[key + "_mean_gap_se"] = std::abs(mean - want_mean) / se_mean;
    r.detail[key + "_var_gap_se"] = std::abs(var - want_var) / se_var;
    if (std::abs(mean - want_mean) >= 3.0 * se_mean) r.pass = false;
    if (std::abs(var - want_var) >= 3.0 * se_var) r.pass = false;
  }
  return r;
}

}  // namespace

int cmd_selfcheck(const SelfcheckOptions& opts) {
  std::ostream& os = opts.out ? *opts.out : std::cout;
  std::vector<CheckResult> results;
  std::string first_fail;

  const std::vector<std::pair<std::string, std::function<CheckResult()>>>
      battery = {
          {"grad_linear", [] { return check_grad_linear(); }},
          {"grad_blocks", [] { return check_grad_blocks(); }},
          {"grad_full_loss", [] { return check_grad_full_loss(); }},
          {"schedule_identities",
           [&] { return check_schedule(opts.corrupt_schedule); }},
          {"posterior_identities", [] { return check_posterior(); }},
          {"one_step_recovery", [] { return check_one_step(); }},
          {"crps_oracle", [] { return check_crps(); }},
          {"marginal_vs_iterated", [] { return check_marginal(); }},
      };

  for (const auto& [name, run] : battery) {
    const auto start = std::chrono::steady_clock::now();
    CheckResult res;
    try {
      res = run();
    } catch (const std::exception& e) {
      res.name = name;
      res.pass = false;
      res.detail["exception"] = e.what();
    }
    const auto stop = std::chrono::steady_clock::now();
    ordered_json line;
    line["check"] = res.name;
    line["status"] = res.pass ? "pass" : "fail";
    for (auto& [k, v] : res.detail.items()) line[k] = v;
    line["ms"] =
        std::chrono::duration_cast<std::chrono::milliseconds>(stop - start)
            .count();
    os << line.dump() << "\n";
    if (!res.pass && first_fail.empty()) first_fail = res.name;
  }

  if (!first_fail.empty()) {
    std::cerr << "selfcheck failed: " << first_fail << "\n";
    return 3;
  }
  return 0;
}

}  // namespace rvd::cli
