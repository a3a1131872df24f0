#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rvd/tensor.hpp"

// Pixel-marginal CRPS of an ensemble forecast against ground truth on the
// 8-bit grid. For a pixel with S samples and empirical CDF F(z) =
// #{samples <= z} / S, the score is the finite sum over z = 0..254 of
// (F(z) - 1{obs <= z})^2 with unit grid spacing (z = 255 contributes 0).
// The numerator is accumulated in 64-bit integers, so scores are exact.

namespace rvd::metrics {

// S stochastic sample videos plus ground truth, quantized to {0..255}.
struct ForecastEnsemble {
  int q = 0, c = 0, h = 0, w = 0;
  std::vector<std::vector<uint8_t>> samples;  // S entries of q*c*h*w values
  std::vector<uint8_t> truth;                 // q*c*h*w values

  // Quantizes [-1,1] videos ([q, C, H, W]) via the 8-bit video convention.
  static ForecastEnsemble from_videos(const std::vector<TensorF>& sample_videos,
                                      const TensorF& truth_video);
  int64_t frame_elems() const { return static_cast<int64_t>(c) * h * w; }
};

struct CrpsReport {
  double scalar = 0.0;                    // mean over frames
  std::vector<double> per_frame;          // length q
  bool has_maps = false;
  int c = 0, h = 0, w = 0;
  std::vector<std::vector<double>> maps;  // per frame, c*h*w pixel scores
};

// Exact integer numerator: sum_z (count_le_z - S * 1{obs <= z})^2.
// The CRPS value is numerator / S^2.
int64_t crps_pixel_numerator(const std::vector<int>& samples, int obs);
double crps_pixel(const std::vector<int>& samples, int obs);

// Per-pixel scores averaged spatially per frame and overall. Pixels are
// scored independently and reduced with pairwise summation, so the result
// does not depend on evaluation order.
CrpsReport crps_video(const ForecastEnsemble& ens, bool keep_maps = false);

// Elementwise 1/CRPS; zero entries become +infinity.
std::vector<double> inverse_crps_curve(const CrpsReport& report);

// "frame_idx,crps,inv_crps" rows; infinities are written as "inf".
void write_crps_csv(const CrpsReport& report, const std::string& path);

// Writes <path_base>.pgm (min-max scaled, degenerate range maps to all
// zeros) and <path_base>.csv (exact values) for one retained frame map.
// Multi-channel maps are averaged over channels for the PGM.
void export_score_map(const CrpsReport& report, int frame_idx,
                      const std::string& path_base);

}  // namespace rvd::metrics
