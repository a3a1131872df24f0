#include "rvd/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>

#include "rvd/residual.hpp"
#include "rvd/tensor_file.hpp"

namespace rvd::train {

// ===== Learning rate ======================================================

double lr_schedule(int64_t step, const TrainConfig& cfg) {
  require(step >= 0, "lr_schedule", "step must be >= 0");
  if (step >= cfg.max_steps) return cfg.lr_final;
  const double f = static_cast<double>(step) / static_cast<double>(cfg.max_steps);
  return cfg.lr_initial + (cfg.lr_final - cfg.lr_initial) * f;
}

// ===== Adam ===============================================================

AdamState make_adam(const nn::ParamStore& store) {
  AdamState s;
  s.m.reserve(static_cast<size_t>(store.size()));
  s.v.reserve(static_cast<size_t>(store.size()));
  for (int64_t i = 0; i < store.size(); ++i) {
    s.m.push_back(TensorF::zeros(store.value(i).shape()));
    s.v.push_back(TensorF::zeros(store.value(i).shape()));
  }
  return s;
}

void adam_update(nn::ParamStore& store, const std::vector<TensorF>& grads,
                 AdamState& opt, double lr) {
  require(grads.size() == static_cast<size_t>(store.size()), "adam_update",
          "gradient list does not match the parameter store");
  require(opt.m.size() == grads.size() && opt.v.size() == grads.size(),
          "adam_update", "optimizer state does not match the parameter store");
  opt.step += 1;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  for (int64_t i = 0; i < store.size(); ++i) {
    const TensorF& g = grads[static_cast<size_t>(i)];
    require(g.numel() > 0, "adam_update",
            "missing gradient for parameter " + store.name(i));
    TensorF& p = store.mut_value(i);
    require_same_shape("adam_update", p.shape(), g.shape());
    float* pd = p.mut_data();
    float* md = opt.m[static_cast<size_t>(i)].mut_data();
    float* vd = opt.v[static_cast<size_t>(i)].mut_data();
    const float* gd = g.data();
    const double b1 = opt.beta1, b2 = opt.beta2, eps = opt.eps;
    parallel_for(p.numel(), 1 << 13, [&](int64_t j) {
      const double gj = gd[j];
      const double mj = b1 * md[j] + (1.0 - b1) * gj;
      const double vj = b2 * vd[j] + (1.0 - b2) * gj * gj;
      md[j] = static_cast<float>(mj);
      vd[j] = static_cast<float>(vj);
      const double mhat = mj / bc1;
      const double vhat = vj / bc2;
      pd[j] = static_cast<float>(pd[j] - lr * mhat / (std::sqrt(vhat) + eps));
    });
  }
}

// ===== Trainer ============================================================

namespace {

// [B, C, H, W] slab of frame t across a batch of windows.
TensorF stack_frames(const std::vector<video::Window>& batch, bool future, int t) {
  const TensorF& first = future ? batch[0].future : batch[0].context;
  const Shape& fs = first.shape();
  const int64_t c = fs[1], h = fs[2], w = fs[3];
  const int64_t frame = c * h * w;
  TensorF out({static_cast<int64_t>(batch.size()), c, h, w});
  for (size_t b = 0; b < batch.size(); ++b) {
    const TensorF& src = future ? batch[b].future : batch[b].context;
    require_same_shape("training_step", fs, src.shape());
    std::copy_n(src.data() + t * frame, frame, out.mut_data() + b * frame);
  }
  return out;
}

}  // namespace

Trainer::Trainer(const model::ModelConfig& mc, const TrainConfig& tc) : cfg_(tc) {
  cfg_.validate();
  flow::ResidualConfig rc;
  rc.sigma = tc.sigma;
  rc.mode = tc.mode;
  model_.emplace(mc, rc, tc.seed);
  sched_ = diffusion::make_cosine_schedule(tc.n_steps);
  opt_ = make_adam(model_->store);
}

double Trainer::training_step(const std::vector<video::Window>& batch,
                              const Hooks* hooks) {
  require(!batch.empty(), "training_step", "empty batch");
  const int p = cfg_.context_len, q = cfg_.future_len;
  for (const video::Window& w : batch) {
    require(w.context.rank() == 4 && w.future.rank() == 4, "training_step",
            "windows must be [T,C,H,W]");
    require(w.context.shape()[0] == p && w.future.shape()[0] == q,
            "training_step",
            "window shorter than context_len + future_len frames");
  }
  const int hdim = static_cast<int>(batch[0].context.shape()[2]);
  const int wdim = static_cast<int>(batch[0].context.shape()[3]);
  require(batch[0].context.shape()[1] == model_->cfg.img_channels,
          "training_step", "channel count does not match the model config");
  model_->cfg.validate_frame_size(hdim, wdim);

  const bool use_rvd = model_->has_transform();
  const bool zero_mu = hooks && hooks->zero_mu;
  const double sigma_eff = zero_mu ? 1.0 : model_->res.effective_sigma();
  const int batch_n = static_cast<int>(batch.size());

  // One shared diffusion step per optimizer step.
  Rng nrng = Rng::stream(cfg_.seed, "train_n", static_cast<uint64_t>(step_));
  const int n = static_cast<int>(nrng.uniform_int(1, cfg_.n_steps));
  const double ab = sched_.alpha_bar_at(n);
  const float c_signal = static_cast<float>(std::sqrt(ab));
  const float c_noise = static_cast<float>(std::sqrt(1.0 - ab));

  ad::Tape<float> tape;
  nn::Binding<float> bnd = nn::bind(tape, model_->store, true);

  model::RecurrentState ctx0 = model_->context.init_state(batch_n, hdim, wdim);
  std::vector<ad::Var<float>> ctx_h = model::detail::leaf_state(tape, ctx0);
  std::vector<ad::Var<float>> tr_h;
  if (use_rvd) {
    model::RecurrentState tr0 = model_->transform.init_state(batch_n, hdim, wdim);
    tr_h = model::detail::leaf_state(tape, tr0);
  }

  for (int t = 0; t < p; ++t) {
    ad::Var<float> f = tape.constant(stack_frames(batch, false, t));
    ctx_h = model_->context.update(bnd, ctx_h, f);
    if (use_rvd) tr_h = model_->transform.step(bnd, tr_h, f);
  }

  ad::Var<float> loss;
  for (int t = 0; t < q; ++t) {
    TensorF xt = stack_frames(batch, true, t);
    ad::Var<float> xv = tape.constant(xt);

    ad::Var<float> y0;
    TensorF mu_val = TensorF::zeros(xt.shape());
    if (use_rvd) {
      ad::Var<float> mu = model_->transform.predict(bnd, tr_h);
      if (zero_mu) mu = ad::scalar_mul(mu, 0.0);
      mu_val = mu.value();
      y0 = ad::scalar_mul(ad::sub(xv, mu), 1.0 / sigma_eff);
    } else {
      y0 = xv;
    }

    Rng erng = Rng::stream(cfg_.seed, "train_eps",
                           static_cast<uint64_t>(step_) * q + t);
    TensorF eps = erng.gaussian_tensor<float>(xt.shape());
    TensorF eps_scaled(eps.shape());
    for (int64_t i = 0; i < eps.numel(); ++i)
      eps_scaled.mut_data()[i] = c_noise * eps.data()[i];
    ad::Var<float> yn =
        ad::add(ad::scalar_mul(y0, c_signal), tape.constant(eps_scaled));

    ad::Var<float> eps_hat;
    if (hooks && hooks->eps_oracle)
      eps_hat = tape.constant(hooks->eps_oracle(yn.value(), n, t, mu_val));
    else
      eps_hat = model_->denoiser.forward(bnd, yn, n, ctx_h);

    ad::Var<float> lt = ad::mean(ad::square(ad::sub(tape.constant(eps), eps_hat)));
    loss = loss.defined() ? ad::add(loss, lt) : lt;

    // Teacher forcing: only ground truth ever enters the recurrent states.
    ctx_h = model_->context.update(bnd, ctx_h, xv);
    if (use_rvd) tr_h = model_->transform.step(bnd, tr_h, xv);
  }

  if (hooks && hooks->inject_nan)
    loss = ad::scalar_mul(loss, std::numeric_limits<double>::quiet_NaN());

  const double loss_value = static_cast<double>(loss.value().item());
  if (!std::isfinite(loss_value))
    throw NumericError("training_step: non-finite loss");

  // A constant graph (oracle denoiser) has nothing to update.
  if (loss.requires_grad()) {
    tape.backward(loss);
    std::vector<TensorF> grads;
    grads.reserve(static_cast<size_t>(model_->store.size()));
    for (int64_t i = 0; i < model_->store.size(); ++i)
      grads.push_back(tape.has_grad(bnd[i]) ? tape.grad(bnd[i]).clone()
                                            : TensorF());
    adam_update(model_->store, grads, opt_, lr_schedule(step_, cfg_));
  }
  ++step_;
  return loss_value;
}

double Trainer::run(const std::vector<video::Window>& pool,
                    const std::string& log_csv, const Hooks* hooks) {
  require(!pool.empty(), "train_run", "empty window pool");
  std::ofstream log;
  if (!log_csv.empty()) {
    const bool fresh = !std::ifstream(log_csv).good();
    log.open(log_csv, std::ios::app);
    if (!log) throw IoError(IoErrorCode::kOpenFailed, "cannot open " + log_csv);
    if (fresh) log << "step,loss,lr,wall_ms\n";
  }
  double last = 0.0;
  while (step_ < cfg_.max_steps) {
    Rng brng = Rng::stream(cfg_.seed, "batch", static_cast<uint64_t>(step_));
    std::vector<video::Window> batch;
    batch.reserve(static_cast<size_t>(cfg_.batch_size));
    for (int i = 0; i < cfg_.batch_size; ++i) {
      const int64_t idx =
          brng.uniform_int(0, static_cast<int64_t>(pool.size()) - 1);
      batch.push_back(pool[static_cast<size_t>(idx)]);
    }
    const int64_t logged_step = step_;
    const double lr = lr_schedule(logged_step, cfg_);
    const auto t0 = std::chrono::steady_clock::now();
    last = training_step(batch, hooks);
    const auto t1 = std::chrono::steady_clock::now();
    if (log) {
      const double ms =
          std::chrono::duration<double, std::milli>(t1 - t0).count();
      char row[128];
      std::snprintf(row, sizeof row, "%lld,%.9g,%.9g,%.3f\n",
                    static_cast<long long>(logged_step), last, lr, ms);
      log << row;
    }
  }
  return last;
}

// ===== Generation =========================================================

GenerateResult Trainer::generate(const TensorF& context, uint64_t rng_seed,
                                 const Hooks* hooks) const {
  require(model_.has_value(), "generate", "params not loaded");
  require(context.rank() == 4 && context.shape()[0] >= 1, "generate",
          "context must be [p, C, H, W] with p >= 1");
  const int p = static_cast<int>(context.shape()[0]);
  const int c = static_cast<int>(context.shape()[1]);
  const int hdim = static_cast<int>(context.shape()[2]);
  const int wdim = static_cast<int>(context.shape()[3]);
  require(c == model_->cfg.img_channels, "generate",
          "channel count does not match the model config");
  model_->cfg.validate_frame_size(hdim, wdim);

  const bool use_rvd = model_->has_transform();
  const bool zero_mu = hooks && hooks->zero_mu;
  flow::ResidualConfig res_eff = model_->res;
  if (zero_mu) res_eff.sigma = 1.0;
  const int q = cfg_.future_len;
  const int n_steps = cfg_.n_steps;

  model::RecurrentState ctx_st = model_->context.init_state(1, hdim, wdim);
  model::RecurrentState tr_st;
  if (use_rvd) tr_st = model_->transform.init_state(1, hdim, wdim);

  auto advance = [&](const TensorF& frame) {
    {
      ad::Tape<float> tape;
      nn::Binding<float> bnd = nn::bind(tape, model_->store, false);
      auto hv = model::detail::leaf_state(tape, ctx_st);
      auto nh = model_->context.update(bnd, hv, tape.constant(frame));
      model::detail::freeze_state(nh, ctx_st);
      ctx_st.frames_seen += 1;
    }
    if (use_rvd) {
      ad::Tape<float> tape;
      nn::Binding<float> bnd = nn::bind(tape, model_->store, false);
      auto hv = model::detail::leaf_state(tape, tr_st);
      auto nh = model_->transform.step(bnd, hv, tape.constant(frame));
      model::detail::freeze_state(nh, tr_st);
      tr_st.frames_seen += 1;
    }
  };

  for (int t = 0; t < p; ++t) {
    TensorF f = video::frame_at(context, t).reshaped({1, c, hdim, wdim});
    advance(f);
  }

  GenerateResult result;
  result.frames = TensorF({q, c, hdim, wdim});
  const int64_t frame_elems = static_cast<int64_t>(c) * hdim * wdim;

  // Support of the diffusion target: the frame itself lives in [-1, 1]; a
  // residual (x - mu) / sigma with both operands in [-1, 1] lives within
  // 2 / sigma. Clipping the per-step clean estimate to this range keeps the
  // reverse chain bounded.
  const double clip = use_rvd ? 2.0 / res_eff.sigma : 1.0;

  for (int t = 0; t < q; ++t) {
    TensorF mu = TensorF::zeros({1, c, hdim, wdim});
    if (use_rvd) {
      require(tr_st.frames_seen >= 1, "transform_forward", "empty context");
      ad::Tape<float> tape;
      nn::Binding<float> bnd = nn::bind(tape, model_->store, false);
      auto hv = model::detail::leaf_state(tape, tr_st);
      TensorF predicted = model_->transform.predict(bnd, hv).value();
      result.transform_evals += 1;
      if (!zero_mu) mu = predicted;
    }

    Rng init = Rng::stream(rng_seed, "gen_init", static_cast<uint64_t>(t));
    TensorF y = init.gaussian_tensor<float>({1, c, hdim, wdim});
    for (int n = n_steps; n >= 1; --n) {
      TensorF eps_hat;
      if (hooks && hooks->eps_oracle) {
        eps_hat = hooks->eps_oracle(y, n, t, mu);
      } else {
        ad::Tape<float> tape;
        nn::Binding<float> bnd = nn::bind(tape, model_->store, false);
        auto hv = model::detail::leaf_state(tape, ctx_st);
        eps_hat = model_->denoiser.forward(bnd, tape.constant(y), n, hv).value();
      }
      result.denoiser_evals += 1;
      TensorF z =
          n > 1 ? Rng::stream(rng_seed, "gen_noise",
                              static_cast<uint64_t>(t) * (n_steps + 1) + n)
                      .gaussian_tensor<float>(y.shape())
                : TensorF::zeros(y.shape());
      y = diffusion::reverse_step(y, eps_hat, n, z, sched_, cfg_.variance_mode,
                                  -clip, clip);
    }

    // Clamp each finished frame to the pixel range before it re-enters the
    // context: the recurrent encoder only ever sees in-range frames during
    // training, and out-of-range feedback compounds across the horizon.
    TensorF xt = video::clamp_video(use_rvd ? flow::from_residual(y, mu, res_eff) : y);
    std::copy_n(xt.data(), frame_elems, result.frames.mut_data() + t * frame_elems);
    advance(xt);
  }

  return result;
}

// ===== Checkpointing ======================================================

namespace {

// f32 payloads can't carry a double or u64 exactly, so multi-byte scalars are
// stored as four u16 chunks, each exact in a float.
TensorF pack_u64(uint64_t v) {
  TensorF t({4});
  for (int i = 0; i < 4; ++i)
    t.mut_data()[i] = static_cast<float>((v >> (16 * i)) & 0xffffu);
  return t;
}

uint64_t unpack_u64(const TensorF& t) {
  require(t.numel() == 4, "checkpoint", "bad packed scalar");
  uint64_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<uint64_t>(static_cast<uint32_t>(t.data()[i])) << (16 * i);
  return v;
}

TensorF pack_double(double x) {
  uint64_t bits;
  static_assert(sizeof bits == sizeof x);
  std::memcpy(&bits, &x, sizeof bits);
  return pack_u64(bits);
}

double unpack_double(const TensorF& t) {
  const uint64_t bits = unpack_u64(t);
  double x;
  std::memcpy(&x, &bits, sizeof x);
  return x;
}

TensorF pack_ints(const std::vector<int>& v) {
  TensorF t({static_cast<int64_t>(v.size())});
  for (size_t i = 0; i < v.size(); ++i) t.mut_data()[i] = static_cast<float>(v[i]);
  return t;
}

std::vector<int> unpack_ints(const TensorF& t) {
  std::vector<int> v;
  for (int64_t i = 0; i < t.numel(); ++i)
    v.push_back(static_cast<int>(std::lround(t.data()[i])));
  return v;
}

float scalar_of(const io::NamedTensors& m, const std::string& name) {
  const TensorF& t = io::find_tensor(m, name);
  require(t.numel() == 1, "checkpoint", "scalar expected for " + name);
  return t.data()[0];
}

}  // namespace

void Trainer::save_checkpoint(const std::string& path) const {
  io::NamedTensors out;
  auto put = [&](std::string name, TensorF t) {
    out.emplace_back(std::move(name), std::move(t));
  };
  put("meta/version", TensorF::scalar(1.0f));
  const model::ModelConfig& mc = model_->cfg;
  put("meta/channel_dim", TensorF::scalar(static_cast<float>(mc.channel_dim)));
  put("meta/img_channels", TensorF::scalar(static_cast<float>(mc.img_channels)));
  put("meta/groups", TensorF::scalar(static_cast<float>(mc.groups)));
  put("meta/attn_heads", TensorF::scalar(static_cast<float>(mc.attn_heads)));
  put("meta/attn_head_dim", TensorF::scalar(static_cast<float>(mc.attn_head_dim)));
  put("meta/denoise_mults", pack_ints(mc.denoise_mults));
  put("meta/transform_mults", pack_ints(mc.transform_mults));
  put("meta/context_len", TensorF::scalar(static_cast<float>(cfg_.context_len)));
  put("meta/future_len", TensorF::scalar(static_cast<float>(cfg_.future_len)));
  put("meta/batch_size", TensorF::scalar(static_cast<float>(cfg_.batch_size)));
  put("meta/n_steps", TensorF::scalar(static_cast<float>(cfg_.n_steps)));
  put("meta/max_steps", TensorF::scalar(static_cast<float>(cfg_.max_steps)));
  put("meta/lr_initial", pack_double(cfg_.lr_initial));
  put("meta/lr_final", pack_double(cfg_.lr_final));
  put("meta/sigma", pack_double(cfg_.sigma));
  put("meta/seed", pack_u64(cfg_.seed));
  put("meta/mode", TensorF::scalar(cfg_.mode == flow::Mode::kVd ? 1.0f : 0.0f));
  put("meta/variance_mode",
      TensorF::scalar(
          cfg_.variance_mode == diffusion::VarianceMode::kAsWritten ? 1.0f : 0.0f));
  put("meta/trainer_step", pack_u64(static_cast<uint64_t>(step_)));
  put("meta/adam_step", pack_u64(static_cast<uint64_t>(opt_.step)));

  // Schedule echo for integrity checking on load.
  TensorF beta({sched_.n_steps});
  for (int n = 1; n <= sched_.n_steps; ++n)
    beta.mut_data()[n - 1] = static_cast<float>(sched_.beta_at(n));
  put("sched/beta", std::move(beta));

  const nn::ParamStore& st = model_->store;
  for (int64_t i = 0; i < st.size(); ++i) {
    put("param/" + st.name(i), st.value(i).clone());
    put("adam_m/" + st.name(i), opt_.m[static_cast<size_t>(i)].clone());
    put("adam_v/" + st.name(i), opt_.v[static_cast<size_t>(i)].clone());
  }
  io::write_tensor_map(path, out);
}

Trainer Trainer::load_checkpoint(const std::string& path) {
  io::NamedTensors in = io::read_tensor_map(path);
  require(scalar_of(in, "meta/version") == 1.0f, "checkpoint",
          "unsupported checkpoint version");

  model::ModelConfig mc;
  mc.channel_dim = static_cast<int>(scalar_of(in, "meta/channel_dim"));
  mc.img_channels = static_cast<int>(scalar_of(in, "meta/img_channels"));
  mc.groups = static_cast<int>(scalar_of(in, "meta/groups"));
  mc.attn_heads = static_cast<int>(scalar_of(in, "meta/attn_heads"));
  mc.attn_head_dim = static_cast<int>(scalar_of(in, "meta/attn_head_dim"));
  mc.denoise_mults = unpack_ints(io::find_tensor(in, "meta/denoise_mults"));
  mc.transform_mults = unpack_ints(io::find_tensor(in, "meta/transform_mults"));

  TrainConfig tc;
  tc.context_len = static_cast<int>(scalar_of(in, "meta/context_len"));
  tc.future_len = static_cast<int>(scalar_of(in, "meta/future_len"));
  tc.batch_size = static_cast<int>(scalar_of(in, "meta/batch_size"));
  tc.n_steps = static_cast<int>(scalar_of(in, "meta/n_steps"));
  tc.max_steps = static_cast<int>(scalar_of(in, "meta/max_steps"));
  tc.lr_initial = unpack_double(io::find_tensor(in, "meta/lr_initial"));
  tc.lr_final = unpack_double(io::find_tensor(in, "meta/lr_final"));
  tc.sigma = unpack_double(io::find_tensor(in, "meta/sigma"));
  tc.seed = unpack_u64(io::find_tensor(in, "meta/seed"));
  tc.mode = scalar_of(in, "meta/mode") != 0.0f ? flow::Mode::kVd : flow::Mode::kRvd;
  tc.variance_mode = scalar_of(in, "meta/variance_mode") != 0.0f
                         ? diffusion::VarianceMode::kAsWritten
                         : diffusion::VarianceMode::kSqrtPosterior;

  Trainer t(mc, tc);
  t.step_ = static_cast<int64_t>(unpack_u64(io::find_tensor(in, "meta/trainer_step")));
  t.opt_.step =
      static_cast<int64_t>(unpack_u64(io::find_tensor(in, "meta/adam_step")));

  // The schedule is rebuilt from N; the stored copy guards against drift.
  const TensorF& beta = io::find_tensor(in, "sched/beta");
  require(beta.numel() == t.sched_.n_steps, "checkpoint",
          "schedule length does not match the stored model");
  for (int n = 1; n <= t.sched_.n_steps; ++n)
    require(beta.data()[n - 1] == static_cast<float>(t.sched_.beta_at(n)),
            "checkpoint", "stored noise schedule disagrees with the rebuilt one");

  nn::ParamStore& st = t.model_->store;
  for (int64_t i = 0; i < st.size(); ++i) {
    const TensorF& pv = io::find_tensor(in, "param/" + st.name(i));
    require_same_shape("checkpoint", st.value(i).shape(), pv.shape());
    st.mut_value(i) = pv.clone();
    t.opt_.m[static_cast<size_t>(i)] =
        io::find_tensor(in, "adam_m/" + st.name(i)).clone();
    t.opt_.v[static_cast<size_t>(i)] =
        io::find_tensor(in, "adam_v/" + st.name(i)).clone();
  }
  return t;
}

}  // namespace rvd::train
