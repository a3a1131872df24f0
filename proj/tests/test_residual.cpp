// Pixel <-> residual transform: exact inversion, the documented arithmetic
// anchors, and the vd bypass mode.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "rvd/residual.hpp"
#include "rvd/rng.hpp"

using namespace rvd;
using flow::Mode;
using flow::ResidualConfig;

TEST_CASE("to_residual arithmetic anchors") {
  ResidualConfig cfg;  // sigma = 2, rvd
  TensorD x = TensorD::zeros({2});
  x.mut_data()[0] = 3.0;
  x.mut_data()[1] = -1.0;
  TensorD mu = TensorD::zeros({2});
  mu.mut_data()[0] = 1.0;
  mu.mut_data()[1] = 3.0;
  // x - mu = [2, -4], sigma = 2 -> [1, -2]
  TensorD y = flow::to_residual(x, mu, cfg);
  CHECK(y.data()[0] == 1.0);
  CHECK(y.data()[1] == -2.0);

  // Perfect prediction gives a zero residual.
  TensorD self = flow::to_residual(x, x, cfg);
  CHECK(self.data()[0] == 0.0);
  CHECK(self.data()[1] == 0.0);

  TensorD bad = TensorD::zeros({3});
  CHECK_THROWS_AS(flow::to_residual(x, bad, cfg), ShapeError);
}

TEST_CASE("from_residual arithmetic anchors") {
  ResidualConfig cfg;
  TensorD y = TensorD::zeros({2});
  y.mut_data()[0] = 1.0;
  y.mut_data()[1] = -2.0;
  TensorD mu = TensorD::zeros({2});
  TensorD x = flow::from_residual(y, mu, cfg);
  CHECK(x.data()[0] == 2.0);
  CHECK(x.data()[1] == -4.0);

  // y0 = 0 reproduces the predicted mean.
  TensorD zero = TensorD::zeros({2});
  TensorD back = flow::from_residual(zero, x, cfg);
  CHECK(back.same_bytes(x));

  TensorD bad = TensorD::zeros({5});
  CHECK_THROWS_AS(flow::from_residual(y, bad, cfg), ShapeError);
}

TEST_CASE("round trip is exact in 64-bit for many sigmas") {
  for (double sigma : {0.5, 1.0, 2.0, 4.0, 3.7, 0.001, 123.0}) {
    CAPTURE(sigma);
    ResidualConfig cfg;
    cfg.sigma = sigma;
    TensorD x = Rng::stream(5, "res_x").gaussian_tensor<double>({3, 4, 4});
    TensorD mu = Rng::stream(6, "res_mu").gaussian_tensor<double>({3, 4, 4});
    TensorD back = flow::from_residual(flow::to_residual(x, mu, cfg), mu, cfg);
    // Algebraically exact; floating point leaves at most a couple of ulps
    // (the subtract/add pair rounds even when sigma is a power of two).
    for (int64_t i = 0; i < x.numel(); ++i)
      CHECK(back.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-14));
  }
}

TEST_CASE("round trip within 1e-6 in 32-bit") {
  ResidualConfig cfg;
  cfg.sigma = 3.3;
  TensorF x = Rng::stream(7, "res_xf").gaussian_tensor<float>({2, 8, 8});
  TensorF mu = Rng::stream(8, "res_muf").gaussian_tensor<float>({2, 8, 8});
  TensorF back = flow::from_residual(flow::to_residual(x, mu, cfg), mu, cfg);
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(std::abs(back.data()[i] - x.data()[i]) <
          1e-6 * std::max(1.0f, std::abs(x.data()[i])));
}

TEST_CASE("vd mode bypasses the transform in both directions") {
  ResidualConfig cfg;
  cfg.mode = Mode::kVd;
  cfg.sigma = 2.0;  // ignored in vd
  CHECK(cfg.effective_sigma() == 1.0);
  TensorD x = Rng::stream(9, "vd_x").gaussian_tensor<double>({4, 4});
  TensorD mu = Rng::stream(10, "vd_mu").gaussian_tensor<double>({4, 4});
  CHECK(flow::to_residual(x, mu, cfg).same_bytes(x));
  CHECK(flow::from_residual(x, mu, cfg).same_bytes(x));

  // vd equals rvd with mu = 0 and sigma = 1, byte for byte.
  ResidualConfig unit;
  unit.sigma = 1.0;
  TensorD zero = TensorD::zeros(x.shape());
  CHECK(flow::to_residual(x, zero, unit).same_bytes(flow::to_residual(x, mu, cfg)));
  CHECK(
      flow::from_residual(x, zero, unit).same_bytes(flow::from_residual(x, mu, cfg)));
}

TEST_CASE("config validation") {
  ResidualConfig cfg;
  cfg.sigma = 0.0;
  TensorD x = TensorD::zeros({1});
  CHECK_THROWS_AS(flow::to_residual(x, x, cfg), ConfigError);
  cfg.sigma = -1.0;
  CHECK_THROWS_AS(flow::from_residual(x, x, cfg), ConfigError);
  CHECK(flow::parse_mode("rvd") == Mode::kRvd);
  CHECK(flow::parse_mode("vd") == Mode::kVd);
  CHECK_THROWS_AS(flow::parse_mode("hybrid"), ConfigError);
  CHECK(flow::mode_name(Mode::kRvd) == "rvd");
  CHECK(flow::mode_name(Mode::kVd) == "vd");
}
