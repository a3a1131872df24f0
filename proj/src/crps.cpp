#include "rvd/crps.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "rvd/errors.hpp"
#include "rvd/kernels.hpp"
#include "rvd/parallel.hpp"
#include "rvd/shape.hpp"
#include "rvd/video.hpp"

namespace rvd::metrics {
namespace {

int64_t pixel_numerator(const uint8_t* const* sample_ptrs, size_t s_count,
                        int64_t offset, uint8_t obs) {
  // Histogram, then walk the cumulative count against the observation step.
  int hist[256] = {0};
  for (size_t s = 0; s < s_count; ++s) ++hist[sample_ptrs[s][offset]];
  int64_t num = 0;
  int64_t cum = 0;
  const int64_t s_total = static_cast<int64_t>(s_count);
  for (int z = 0; z < 255; ++z) {
    cum += hist[z];
    const int64_t d = cum - (obs <= z ? s_total : 0);
    num += d * d;
  }
  return num;
}

}  // namespace

ForecastEnsemble ForecastEnsemble::from_videos(
    const std::vector<TensorF>& sample_videos, const TensorF& truth_video) {
  require(!sample_videos.empty(), "forecast_ensemble", "need at least one sample");
  require(truth_video.rank() == 4, "forecast_ensemble",
          "truth must be [q, C, H, W]");
  for (const auto& s : sample_videos)
    require_same_shape("forecast_ensemble", s.shape(), truth_video.shape());
  ForecastEnsemble ens;
  const auto& sh = truth_video.shape();
  ens.q = static_cast<int>(sh[0]);
  ens.c = static_cast<int>(sh[1]);
  ens.h = static_cast<int>(sh[2]);
  ens.w = static_cast<int>(sh[3]);
  ens.truth = video::quantize(truth_video);
  ens.samples.reserve(sample_videos.size());
  for (const auto& s : sample_videos) ens.samples.push_back(video::quantize(s));
  return ens;
}

int64_t crps_pixel_numerator(const std::vector<int>& samples, int obs) {
  require(!samples.empty(), "crps_pixel", "need at least one sample");
  require(obs >= 0 && obs <= 255, "crps_pixel",
          "observation " + std::to_string(obs) + " outside 0..255");
  int hist[256] = {0};
  for (int v : samples) {
    require(v >= 0 && v <= 255, "crps_pixel",
            "sample value " + std::to_string(v) + " outside 0..255");
    ++hist[v];
  }
  int64_t num = 0;
  int64_t cum = 0;
  const int64_t s_total = static_cast<int64_t>(samples.size());
  for (int z = 0; z < 255; ++z) {
    cum += hist[z];
    const int64_t d = cum - (obs <= z ? s_total : 0);
    num += d * d;
  }
  return num;
}

double crps_pixel(const std::vector<int>& samples, int obs) {
  const double s = static_cast<double>(samples.size());
  return static_cast<double>(crps_pixel_numerator(samples, obs)) / (s * s);
}

CrpsReport crps_video(const ForecastEnsemble& ens, bool keep_maps) {
  require(ens.samples.size() >= 2, "crps_video",
          "need at least 2 samples for a nondegenerate CDF");
  const int64_t frame_elems = ens.frame_elems();
  require(frame_elems > 0 && ens.q > 0, "crps_video", "empty ensemble");
  for (const auto& s : ens.samples)
    require(static_cast<int64_t>(s.size()) == frame_elems * ens.q, "crps_video",
            "sample/truth size mismatch");
  require(static_cast<int64_t>(ens.truth.size()) == frame_elems * ens.q,
          "crps_video", "sample/truth size mismatch");

  std::vector<const uint8_t*> sample_ptrs;
  sample_ptrs.reserve(ens.samples.size());
  for (const auto& s : ens.samples) sample_ptrs.push_back(s.data());
  const double s2 = static_cast<double>(ens.samples.size()) *
                    static_cast<double>(ens.samples.size());

  CrpsReport report;
  report.c = ens.c;
  report.h = ens.h;
  report.w = ens.w;
  report.has_maps = keep_maps;
  report.per_frame.resize(static_cast<size_t>(ens.q));
  if (keep_maps) report.maps.resize(static_cast<size_t>(ens.q));

  std::vector<double> frame_scores(static_cast<size_t>(frame_elems));
  for (int t = 0; t < ens.q; ++t) {
    const int64_t base = static_cast<int64_t>(t) * frame_elems;
    double* scores = frame_scores.data();
    parallel_for(frame_elems, 1024, [&](int64_t i) {
      scores[i] = static_cast<double>(pixel_numerator(sample_ptrs.data(),
                                                      sample_ptrs.size(), base + i,
                                                      ens.truth[base + i])) /
                  s2;
    });
    report.per_frame[static_cast<size_t>(t)] =
        kern::pairwise_sum(scores, frame_elems) / static_cast<double>(frame_elems);
    if (keep_maps) report.maps[static_cast<size_t>(t)] = frame_scores;
  }
  report.scalar = kern::pairwise_sum(report.per_frame.data(),
                                     static_cast<int64_t>(report.per_frame.size())) /
                  static_cast<double>(ens.q);
  return report;
}

std::vector<double> inverse_crps_curve(const CrpsReport& report) {
  std::vector<double> out(report.per_frame.size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = report.per_frame[i] > 0.0 ? 1.0 / report.per_frame[i]
                                       : std::numeric_limits<double>::infinity();
  return out;
}

void write_crps_csv(const CrpsReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError(IoErrorCode::kOpenFailed, "cannot open " + path);
  out << "frame_idx,crps,inv_crps\n";
  const std::vector<double> inv = inverse_crps_curve(report);
  char line[96];
  for (size_t i = 0; i < report.per_frame.size(); ++i) {
    if (std::isinf(inv[i]))
      std::snprintf(line, sizeof(line), "%zu,%.17g,inf\n", i, report.per_frame[i]);
    else
      std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g\n", i, report.per_frame[i],
                    inv[i]);
    out << line;
  }
  if (!out) throw IoError(IoErrorCode::kOpenFailed, "write failed for " + path);
}

void export_score_map(const CrpsReport& report, int frame_idx,
                      const std::string& path_base) {
  require(report.has_maps, "export_score_map",
          "per-pixel maps were not retained in this report");
  require(frame_idx >= 0 && frame_idx < static_cast<int>(report.maps.size()),
          "export_score_map", "frame index out of range");
  const std::vector<double>& map = report.maps[static_cast<size_t>(frame_idx)];
  const int64_t plane = static_cast<int64_t>(report.h) * report.w;

  // Channel-averaged view for the image; exact values go to the CSV.
  std::vector<double> gray(static_cast<size_t>(plane), 0.0);
  for (int c = 0; c < report.c; ++c)
    for (int64_t i = 0; i < plane; ++i)
      gray[static_cast<size_t>(i)] += map[static_cast<size_t>(c * plane + i)];
  for (double& v : gray) v /= report.c;

  double lo = gray[0], hi = gray[0];
  for (double v : gray) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi - lo;

  std::ofstream pgm(path_base + ".pgm", std::ios::binary);
  if (!pgm) throw IoError(IoErrorCode::kOpenFailed, "cannot open " + path_base + ".pgm");
  pgm << "P5\n" << report.w << " " << report.h << "\n255\n";
  for (int64_t i = 0; i < plane; ++i) {
    const double scaled =
        span > 0.0 ? (gray[static_cast<size_t>(i)] - lo) / span * 255.0 : 0.0;
    pgm.put(static_cast<char>(static_cast<uint8_t>(std::lround(scaled))));
  }
  if (!pgm) throw IoError(IoErrorCode::kOpenFailed, "write failed for " + path_base + ".pgm");

  std::ofstream csv(path_base + ".csv");
  if (!csv) throw IoError(IoErrorCode::kOpenFailed, "cannot open " + path_base + ".csv");
  char cell[40];
  for (int c = 0; c < report.c; ++c)
    for (int i = 0; i < report.h; ++i) {
      for (int j = 0; j < report.w; ++j) {
        std::snprintf(cell, sizeof(cell), "%.17g",
                      map[static_cast<size_t>(c * plane + i * report.w + j)]);
        csv << cell << (j + 1 < report.w ? "," : "\n");
      }
    }
  if (!csv) throw IoError(IoErrorCode::kOpenFailed, "write failed for " + path_base + ".csv");
}

}  // namespace rvd::metrics
