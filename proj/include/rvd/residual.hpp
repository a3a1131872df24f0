#pragma once

#include <string>

#include "rvd/errors.hpp"
#include "rvd/shape.hpp"
#include "rvd/tensor.hpp"

// The autoregressive frame transform between pixel space and residual space:
// y0 = (x - mu)/sigma and x = mu + sigma*y0, an exact inverse pair. The vd
// ablation mode bypasses the transform entirely (mu = 0, sigma = 1), so
// frames are diffused directly.

namespace rvd::flow {

enum class Mode { kRvd, kVd };

inline Mode parse_mode(const std::string& name) {
  if (name == "rvd") return Mode::kRvd;
  if (name == "vd") return Mode::kVd;
  throw ConfigError("mode must be rvd or vd, got '" + name + "'");
}

inline std::string mode_name(Mode mode) { return mode == Mode::kRvd ? "rvd" : "vd"; }

struct ResidualConfig {
  double sigma = 2.0;
  Mode mode = Mode::kRvd;

  void validate() const {
    if (sigma <= 0) throw ConfigError("sigma must be positive");
  }
  // Residual scale actually applied (vd pins sigma to 1).
  double effective_sigma() const { return mode == Mode::kVd ? 1.0 : sigma; }
};

template <typename S>
Tensor<S> to_residual(const Tensor<S>& x_t, const Tensor<S>& mu_t,
                      const ResidualConfig& cfg) {
  require_same_shape("to_residual", x_t.shape(), mu_t.shape());
  cfg.validate();
  if (cfg.mode == Mode::kVd) return x_t;
  const S sigma = static_cast<S>(cfg.sigma);
  Tensor<S> out(x_t.shape());
  S* o = out.mut_data();
  const S* x = x_t.data();
  const S* m = mu_t.data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] = (x[i] - m[i]) / sigma;
  return out;
}

template <typename S>
Tensor<S> from_residual(const Tensor<S>& y0, const Tensor<S>& mu_t,
                        const ResidualConfig& cfg) {
  require_same_shape("from_residual", y0.shape(), mu_t.shape());
  cfg.validate();
  if (cfg.mode == Mode::kVd) return y0;
  const S sigma = static_cast<S>(cfg.sigma);
  Tensor<S> out(y0.shape());
  S* o = out.mut_data();
  const S* y = y0.data();
  const S* m = mu_t.data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] = m[i] + sigma * y[i];
  return out;
}

}  // namespace rvd::flow
