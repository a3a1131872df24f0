#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "rvd/ops.hpp"
#include "rvd/rng.hpp"
#include "rvd/tape.hpp"

// Finite-difference validation of backward rules. Everything here runs the
// graph in double so the comparison measures the analytic rule, not float
// rounding.

namespace rvd::ad {

// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
// for a scalar-valued function of one tensor.
template <typename S = double>
double grad_check(const std::function<Var<S>(Tape<S>&, Var<S>)>& f,
                  const Tensor<S>& x, double step) {
  Tensor<S> analytic;
  {
    Tape<S> tape(/*check_finite=*/false);
    Var<S> in = tape.leaf(x, /*requires_grad=*/true);
    Var<S> loss = f(tape, in);
    tape.backward(loss);
    analytic = tape.grad(in);
  }
  auto eval = [&](const Tensor<S>& p) -> double {
    Tape<S> tape(/*check_finite=*/false);
    Var<S> in = tape.leaf(p, /*requires_grad=*/false);
    return static_cast<double>(f(tape, in).value().item());
  };
  double worst = 0.0;
  Tensor<S> probe = x.clone();
  S* pd = probe.mut_data();
  for (int64_t i = 0; i < x.numel(); ++i) {
    const S keep = pd[i];
    pd[i] = keep + static_cast<S>(step);
    const double hi = eval(probe);
    pd[i] = keep - static_cast<S>(step);
    const double lo = eval(probe);
    pd[i] = keep;
    const double fd = (hi - lo) / (2.0 * step);
    const double an = static_cast<double>(analytic.data()[i]);
    const double err = std::abs(an - fd) / std::max(1.0, std::abs(an));
    worst = std::max(worst, err);
  }
  return worst;
}

// Multi-input variant for whole blocks/nets: perturbs a random subset of
// coordinates per input (all of them when max_coords_per_input <= 0 or the
// input is small enough).
//
// refine_tol > 0 re-tries any coordinate whose error exceeds it with
// progressively smaller steps. Deep stacks of piecewise-linear activations
// put some pre-activation within `step` of its kink on almost every probe;
// that corrupts the difference quotient even when the analytic rule is
// right. Shrinking the window separates the two cases: a kink artifact
// vanishes, a wrong backward rule keeps its gap all the way down.
template <typename S = double>
double grad_check_multi(
    const std::function<Var<S>(Tape<S>&, std::vector<Var<S>>&)>& f,
    const std::vector<Tensor<S>>& inputs, double step,
    int64_t max_coords_per_input = 0, uint64_t coord_seed = 0,
    double refine_tol = 0.0) {
  std::vector<Tensor<S>> analytic;
  {
    Tape<S> tape(/*check_finite=*/false);
    std::vector<Var<S>> vars;
    vars.reserve(inputs.size());
    for (const Tensor<S>& in : inputs) vars.push_back(tape.leaf(in, true));
    Var<S> loss = f(tape, vars);
    tape.backward(loss);
    for (const Var<S>& v : vars) analytic.push_back(tape.grad_or_zeros(v));
  }
  std::vector<Tensor<S>> probe;
  probe.reserve(inputs.size());
  for (const Tensor<S>& in : inputs) probe.push_back(in.clone());
  auto eval = [&]() -> double {
    Tape<S> tape(/*check_finite=*/false);
    std::vector<Var<S>> vars;
    vars.reserve(probe.size());
    for (const Tensor<S>& in : probe) vars.push_back(tape.leaf(in, false));
    return static_cast<double>(f(tape, vars).value().item());
  };
  Rng pick = Rng::stream(coord_seed, "grad_check_coords");
  double worst = 0.0;
  for (size_t k = 0; k < inputs.size(); ++k) {
    const int64_t n = inputs[k].numel();
    std::vector<int64_t> coords;
    if (max_coords_per_input <= 0 || n <= max_coords_per_input) {
      coords.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    } else {
      for (int64_t i = 0; i < max_coords_per_input; ++i)
        coords.push_back(pick.uniform_int(0, n - 1));
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    }
    S* pd = probe[k].mut_data();
    for (int64_t i : coords) {
      const double an = static_cast<double>(analytic[k].data()[i]);
      auto quotient = [&](double h) -> double {
        const S keep = pd[i];
        pd[i] = keep + static_cast<S>(h);
        const double hi = eval();
        pd[i] = keep - static_cast<S>(h);
        const double lo = eval();
        pd[i] = keep;
        const double fd = (hi - lo) / (2.0 * h);
        return std::abs(an - fd) / std::max(1.0, std::abs(an));
      };
      double err = quotient(step);
      double h = step;
      for (int r = 0; r < 4 && refine_tol > 0.0 && err > refine_tol; ++r) {
        h /= 8.0;
        err = std::min(err, quotient(h));
      }
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace rvd::ad
