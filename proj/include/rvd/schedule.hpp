#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "rvd/errors.hpp"
#include "rvd/shape.hpp"
#include "rvd/tensor.hpp"

// Noise schedules and the closed-form diffusion math: forward marginal,
// true posterior mean, reverse sampling step, and the diagnostic identities
// that relate the exact variational bound to the simplified noise-matching
// loss.

namespace rvd::diffusion {

// How the reverse step scales its noise draw. The derivation defines
// posterior_var as a variance, so the default uses its square root; the
// literal mode multiplies the draw by the variance itself and is kept for
// fidelity with the written sampling loop.
enum class VarianceMode { kSqrtPosterior, kAsWritten };

VarianceMode parse_variance_mode(const std::string& name);
std::string variance_mode_name(VarianceMode mode);

// All arrays are 1-indexed by diffusion step n; alpha_bar[0] = 1.
struct NoiseSchedule {
  int n_steps = 0;
  std::vector<double> beta;           // [0..N], beta[0] unused
  std::vector<double> alpha;          // 1 - beta_n
  std::vector<double> alpha_bar;      // prod alpha_1..alpha_n, alpha_bar[0] = 1
  std::vector<double> posterior_var;  // gamma_n = beta_n (1-abar_{n-1}) / (1-abar_n)

  double beta_at(int n) const { return at(beta, n, 1); }
  double alpha_at(int n) const { return at(alpha, n, 1); }
  double alpha_bar_at(int n) const { return at(alpha_bar, n, 0); }
  double posterior_var_at(int n) const { return at(posterior_var, n, 1); }

 private:
  double at(const std::vector<double>& v, int n, int lo) const {
    if (n < lo || n > n_steps)
      throw ShapeError("schedule: step " + std::to_string(n) + " outside [" +
                       std::to_string(lo) + ", " + std::to_string(n_steps) + "]");
    return v[static_cast<size_t>(n)];
  }
};

// Cosine schedule: with f(n) = cos^2(((n/N + s)/(1 + s)) * pi/2),
// abar_n = f(n)/f(0) and beta_n = min(1 - abar_n/abar_{n-1}, 0.999).
// After clipping, alpha_bar is rebuilt as a running product of (1 - beta_n)
// so that abar_n = abar_{n-1} * (1 - beta_n) holds exactly as stored.
NoiseSchedule make_cosine_schedule(int n_steps, double s = 0.008);

// Writes "n,beta,alpha,alpha_bar,posterior_var" rows for plotting/debugging.
void write_schedule_csv(const std::string& path, const NoiseSchedule& sched);

// y_n = sqrt(abar_n) y0 + sqrt(1 - abar_n) eps
template <typename S>
Tensor<S> q_sample(const Tensor<S>& y0, int n, const Tensor<S>& eps,
                   const NoiseSchedule& sched);

// M(y_n, y_0) = (sqrt(abar_{n-1}) beta_n / (1-abar_n)) y0
//             + (sqrt(1-beta_n) (1-abar_{n-1}) / (1-abar_n)) y_n
template <typename S>
Tensor<S> posterior_mean(const Tensor<S>& yn, const Tensor<S>& y0, int n,
                         const NoiseSchedule& sched);

// One ancestral sampling step:
//   y_tilde  = y_n - (beta_n / sqrt(1-abar_n)) eps_hat
//   y_{n-1}  = y_tilde / sqrt(alpha_n) + c_n z
// with c_n = sqrt(gamma_n) (default) or gamma_n (as-written mode); the noise
// term is dropped entirely at n = 1.
//
// When finite clip bounds are given, the step instead recovers the implied
// clean-signal estimate y0_hat = (y_n - sqrt(1-abar_n) eps_hat) / sqrt(abar_n),
// clamps it to [clip_lo, clip_hi], and takes the posterior mean of (y_n,
// y0_hat) — algebraically the same update when the clamp is inactive. Bounding
// y0_hat by the target's true support keeps long sampling chains from
// diverging when the predicted noise is miscalibrated: the y_n coefficient of
// the posterior mean is < 1, so the iterate stays bounded by construction.
template <typename S>
Tensor<S> reverse_step(const Tensor<S>& yn, const Tensor<S>& eps_hat, int n,
                       const Tensor<S>& z, const NoiseSchedule& sched,
                       VarianceMode mode = VarianceMode::kSqrtPosterior,
                       double clip_lo = -std::numeric_limits<double>::infinity(),
                       double clip_hi = std::numeric_limits<double>::infinity());

// w_n = beta_n^2 / (2 gamma_n (1-beta_n) (1-abar_n)), the constant relating
// the exact mid-chain bound term to the plain noise-matching loss; defined
// for n >= 2 (gamma_1 = 0).
double elbo_mid_weight(int n, const NoiseSchedule& sched);

// abar_N * ||y0||^2 / numel, the size of the dropped prior-matching term.
template <typename S>
double prior_gap_diagnostic(const Tensor<S>& y0, const NoiseSchedule& sched);

// ---------------------------------------------------------------------------
// template definitions
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> q_sample(const Tensor<S>& y0, int n, const Tensor<S>& eps,
                   const NoiseSchedule& sched) {
  require_same_shape("q_sample", y0.shape(), eps.shape());
  const double ab = sched.alpha_bar_at(n);
  const S c0 = static_cast<S>(std::sqrt(ab));
  const S c1 = static_cast<S>(std::sqrt(1.0 - ab));
  Tensor<S> out(y0.shape());
  S* o = out.mut_data();
  const S* a = y0.data();
  const S* e = eps.data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] = c0 * a[i] + c1 * e[i];
  return out;
}

template <typename S>
Tensor<S> posterior_mean(const Tensor<S>& yn, const Tensor<S>& y0, int n,
                         const NoiseSchedule& sched) {
  require_same_shape("posterior_mean", yn.shape(), y0.shape());
  const double beta = sched.beta_at(n);
  const double ab = sched.alpha_bar_at(n);
  const double ab_prev = sched.alpha_bar_at(n - 1);
  const S c0 = static_cast<S>(std::sqrt(ab_prev) * beta / (1.0 - ab));
  const S cn = static_cast<S>(std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab));
  Tensor<S> out(yn.shape());
  S* o = out.mut_data();
  const S* b = y0.data();
  const S* a = yn.data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] = c0 * b[i] + cn * a[i];
  return out;
}

template <typename S>
Tensor<S> reverse_step(const Tensor<S>& yn, const Tensor<S>& eps_hat, int n,
                       const Tensor<S>& z, const NoiseSchedule& sched,
                       VarianceMode mode, double clip_lo, double clip_hi) {
  require_same_shape("reverse_step", yn.shape(), eps_hat.shape());
  require_same_shape("reverse_step", yn.shape(), z.shape());
  const double beta = sched.beta_at(n);
  const double ab = sched.alpha_bar_at(n);
  const double gamma = sched.posterior_var_at(n);
  const S k_noise =
      n == 1 ? S(0)
             : static_cast<S>(mode == VarianceMode::kSqrtPosterior ? std::sqrt(gamma)
                                                                   : gamma);
  Tensor<S> out(yn.shape());
  S* o = out.mut_data();
  const S* y = yn.data();
  const S* e = eps_hat.data();
  const S* zz = z.data();
  if (std::isinf(clip_lo) && std::isinf(clip_hi)) {
    const S k_eps = static_cast<S>(beta / std::sqrt(1.0 - ab));
    const S k_mean = static_cast<S>(1.0 / std::sqrt(1.0 - beta));
    for (int64_t i = 0; i < out.numel(); ++i)
      o[i] = k_mean * (y[i] - k_eps * e[i]) + k_noise * zz[i];
  } else {
    const double ab_prev = sched.alpha_bar_at(n - 1);
    const S k_sig = static_cast<S>(std::sqrt(1.0 - ab));
    const S inv_sab = static_cast<S>(1.0 / std::sqrt(ab));
    const S c0 = static_cast<S>(std::sqrt(ab_prev) * beta / (1.0 - ab));
    const S cy = static_cast<S>(std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab));
    const S lo = static_cast<S>(clip_lo);
    const S hi = static_cast<S>(clip_hi);
    for (int64_t i = 0; i < out.numel(); ++i) {
      const S y0_hat = std::clamp((y[i] - k_sig * e[i]) * inv_sab, lo, hi);
      o[i] = c0 * y0_hat + cy * y[i] + k_noise * zz[i];
    }
  }
  return out;
}

template <typename S>
double prior_gap_diagnostic(const Tensor<S>& y0, const NoiseSchedule& sched) {
  const double ab = sched.alpha_bar_at(sched.n_steps);
  double sq = 0.0;
  const S* a = y0.data();
  for (int64_t i = 0; i < y0.numel(); ++i) sq += static_cast<double>(a[i]) * a[i];
  return ab * sq / static_cast<double>(y0.numel());
}

}  // namespace rvd::diffusion
