#include "rvd/schedule.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace rvd::diffusion {

VarianceMode parse_variance_mode(const std::string& name) {
  if (name == "sqrt_posterior") return VarianceMode::kSqrtPosterior;
  if (name == "as_written") return VarianceMode::kAsWritten;
  throw ConfigError("variance_mode must be sqrt_posterior or as_written, got '" +
                    name + "'");
}

std::string variance_mode_name(VarianceMode mode) {
  return mode == VarianceMode::kSqrtPosterior ? "sqrt_posterior" : "as_written";
}

NoiseSchedule make_cosine_schedule(int n_steps, double s) {
  if (n_steps < 1)
    throw ConfigError("cosine schedule needs at least 1 step, got " +
                      std::to_string(n_steps));
  if (s <= 0.0) throw ConfigError("cosine schedule offset must be positive");

  const auto f = [&](int n) {
    const double u = (static_cast<double>(n) / n_steps + s) / (1.0 + s);
    const double c = std::cos(u * M_PI / 2.0);
    return c * c;
  };

  NoiseSchedule sched;
  sched.n_steps = n_steps;
  sched.beta.assign(static_cast<size_t>(n_steps) + 1, 0.0);
  sched.alpha.assign(static_cast<size_t>(n_steps) + 1, 0.0);
  sched.alpha_bar.assign(static_cast<size_t>(n_steps) + 1, 1.0);
  sched.posterior_var.assign(static_cast<size_t>(n_steps) + 1, 0.0);

  const double f0 = f(0);
  double prev_raw = 1.0;
  for (int n = 1; n <= n_steps; ++n) {
    const double raw = f(n) / f0;
    double beta = 1.0 - raw / prev_raw;
    prev_raw = raw;
    if (beta > 0.999) beta = 0.999;
    // The running product below is the stored alpha_bar, so the recurrence
    // abar_n = abar_{n-1} (1 - beta_n) is exact by construction.
    sched.beta[n] = beta;
    sched.alpha[n] = 1.0 - beta;
    sched.alpha_bar[n] = sched.alpha_bar[n - 1] * (1.0 - beta);
    sched.posterior_var[n] =
        beta * (1.0 - sched.alpha_bar[n - 1]) / (1.0 - sched.alpha_bar[n]);
  }
  return sched;
}

void write_schedule_csv(const std::string& path, const NoiseSchedule& sched) {
  std::ofstream out(path);
  if (!out) throw IoError(IoErrorCode::kOpenFailed, "cannot open " + path);
  out << "n,beta,alpha,alpha_bar,posterior_var\n";
  char line[160];
  for (int n = 1; n <= sched.n_steps; ++n) {
    std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%.17g,%.17g\n", n,
                  sched.beta[n], sched.alpha[n], sched.alpha_bar[n],
                  sched.posterior_var[n]);
    out << line;
  }
  if (!out) throw IoError(IoErrorCode::kOpenFailed, "write failed for " + path);
}

double elbo_mid_weight(int n, const NoiseSchedule& sched) {
  if (n < 2)
    throw ShapeError("elbo_mid_weight needs n >= 2 (posterior variance is 0 at n=1)");
  const double beta = sched.beta_at(n);
  const double gamma = sched.posterior_var_at(n);
  const double ab = sched.alpha_bar_at(n);
  return beta * beta / (2.0 * gamma * (1.0 - beta) * (1.0 - ab));
}

}  // namespace rvd::diffusion
