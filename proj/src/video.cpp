#include "rvd/video.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "rvd/errors.hpp"
#include "rvd/rng.hpp"
#include "rvd/shape.hpp"
#include "rvd/tensor_file.hpp"

namespace rvd::video {
namespace {

void check_video_shape(const TensorF& v, const char* op) {
  require(v.rank() == 4, op, "expected a [T, C, H, W] video, got rank " +
                                 std::to_string(v.rank()));
  require(v.shape()[0] >= 1, op, "need at least one frame");
}

struct BallState {
  double px, py, vx, vy;
};

BallState ball_init(uint64_t seed, int h, int w, double radius) {
  Rng rng = Rng::stream(seed, "ball");
  BallState s;
  // Centers live on the half-integer lattice and the speed is exactly one
  // pixel per frame per axis. With 2*radius integral, wall reflections
  // (px -> 2r - px, px -> 2(w-r) - px) preserve that lattice, so every frame
  // renders the same subpixel disc pattern rigidly translated; the covered
  // pixel count is exactly conserved.
  auto snap = [](double v, double lo, double hi) {
    const double x = std::floor(v) + 0.5;
    const double lo_lat = std::ceil(lo - 0.5) + 0.5;   // smallest lattice >= lo
    const double hi_lat = std::floor(hi - 0.5) + 0.5;  // largest lattice <= hi
    return std::clamp(x, lo_lat, hi_lat);
  };
  s.px = snap(rng.uniform(radius, w - radius), radius, w - radius);
  s.py = snap(rng.uniform(radius, h - radius), radius, h - radius);
  s.vx = rng.uniform() < 0.5 ? 1.0 : -1.0;
  s.vy = rng.uniform() < 0.5 ? 1.0 : -1.0;
  return s;
}

void ball_advance(BallState& s, int h, int w, double radius) {
  s.px += s.vx;
  s.py += s.vy;
  if (s.px < radius) {
    s.px = 2 * radius - s.px;
    s.vx = -s.vx;
  }
  if (s.px > w - radius) {
    s.px = 2 * (w - radius) - s.px;
    s.vx = -s.vx;
  }
  if (s.py < radius) {
    s.py = 2 * radius - s.py;
    s.vy = -s.vy;
  }
  if (s.py > h - radius) {
    s.py = 2 * (h - radius) - s.py;
    s.vy = -s.vy;
  }
}

void ball_render(float* frame, const BallState& s, int h, int w, double radius,
                 bool antialias) {
  const double r2 = radius * radius;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      float v;
      if (antialias) {
        // 4x4 subpixel coverage estimate.
        int inside = 0;
        for (int a = 0; a < 4; ++a)
          for (int b = 0; b < 4; ++b) {
            const double y = i + (a + 0.5) / 4.0;
            const double x = j + (b + 0.5) / 4.0;
            const double dy = y - s.py, dx = x - s.px;
            if (dy * dy + dx * dx <= r2) ++inside;
          }
        v = static_cast<float>(2.0 * inside / 16.0 - 1.0);
      } else {
        const double dy = (i + 0.5) - s.py, dx = (j + 0.5) - s.px;
        v = dy * dy + dx * dx <= r2 ? 1.0f : -1.0f;
      }
      frame[i * w + j] = v;
    }
}

}  // namespace

TensorF gen_bouncing_ball(uint64_t seed, int t_frames, int h, int w, double radius,
                          bool antialias) {
  require(t_frames >= 1, "gen_bouncing_ball", "need at least one frame");
  require(radius > 0 && radius < std::min(h, w) / 2.0, "gen_bouncing_ball",
          "radius must be in (0, min(H,W)/2)");
  TensorF video({t_frames, 1, h, w});
  float* d = video.mut_data();
  BallState s = ball_init(seed, h, w, radius);
  for (int t = 0; t < t_frames; ++t) {
    ball_render(d + static_cast<int64_t>(t) * h * w, s, h, w, radius, antialias);
    ball_advance(s, h, w, radius);
  }
  return video;
}

TensorF gen_drift_field(uint64_t seed, int t_frames, int h, int w) {
  require(t_frames >= 1, "gen_drift_field", "need at least one frame");
  Rng rng = Rng::stream(seed, "drift");

  // Smooth periodic base field: a few low-frequency plane waves.
  std::vector<double> base(static_cast<size_t>(h) * w, 0.0);
  const int modes = 4;
  for (int m = 0; m < modes; ++m) {
    const int ky = rng.uniform_int(-2, 2);
    const int kx = rng.uniform_int(-2, 2);
    const double amp = rng.uniform(0.5, 1.0);
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        base[static_cast<size_t>(i) * w + j] +=
            amp * std::sin(2.0 * M_PI * (static_cast<double>(ky) * i / h +
                                         static_cast<double>(kx) * j / w) +
                           phase);
  }
  double peak = 0.0;
  for (double v : base) peak = std::max(peak, std::abs(v));
  if (peak == 0.0) peak = 1.0;

  // Constant integer velocity, never (0, 0), so frames are exact circular
  // shifts of each other.
  int vy = rng.uniform_int(-2, 2);
  int vx = rng.uniform_int(-2, 2);
  if (vy == 0 && vx == 0) vx = 1;

  TensorF video({t_frames, 1, h, w});
  float* d = video.mut_data();
  for (int t = 0; t < t_frames; ++t) {
    float* frame = d + static_cast<int64_t>(t) * h * w;
    const int sy = ((vy * t) % h + h) % h;
    const int sx = ((vx * t) % w + w) % w;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const int si = (i - sy + h) % h;
        const int sj = (j - sx + w) % w;
        frame[i * w + j] =
            static_cast<float>(base[static_cast<size_t>(si) * w + sj] / peak);
      }
  }
  return video;
}

std::vector<Window> window_sequences(const TensorF& video, int p, int q, int stride) {
  check_video_shape(video, "window_sequences");
  require(p >= 1 && q >= 1, "window_sequences", "need p >= 1 and q >= 1");
  require(stride >= 1, "window_sequences", "stride must be >= 1");
  const int t_frames = static_cast<int>(video.shape()[0]);
  require(t_frames >= p + q, "window_sequences",
          "video has " + std::to_string(t_frames) + " frames, window needs " +
              std::to_string(p + q));
  std::vector<Window> out;
  for (int start = 0; start + p + q <= t_frames; start += stride)
    out.push_back({slice_frames(video, start, p), slice_frames(video, start + p, q)});
  return out;
}

TensorF slice_frames(const TensorF& video, int start, int len) {
  check_video_shape(video, "slice_frames");
  const auto& s = video.shape();
  require(start >= 0 && len >= 1 && start + len <= s[0], "slice_frames",
          "frame range [" + std::to_string(start) + ", " +
              std::to_string(start + len) + ") outside video of " +
              std::to_string(s[0]) + " frames");
  TensorF out({len, s[1], s[2], s[3]});
  const int64_t frame_elems = s[1] * s[2] * s[3];
  std::copy_n(video.data() + start * frame_elems, len * frame_elems,
              out.mut_data());
  return out;
}

TensorF frame_at(const TensorF& video, int t) {
  TensorF f = slice_frames(video, t, 1);
  const auto& s = video.shape();
  return f.reshaped({s[1], s[2], s[3]});
}

uint8_t quantize_pixel(float x) {
  const double u = std::round((static_cast<double>(x) + 1.0) * 127.5);
  return static_cast<uint8_t>(std::clamp(u, 0.0, 255.0));
}

float dequantize_pixel(uint8_t u) {
  return static_cast<float>(u / 127.5 - 1.0);
}

std::vector<uint8_t> quantize(const TensorF& t) {
  std::vector<uint8_t> out(static_cast<size_t>(t.numel()));
  const float* d = t.data();
  for (int64_t i = 0; i < t.numel(); ++i) out[static_cast<size_t>(i)] = quantize_pixel(d[i]);
  return out;
}

TensorF clamp_video(const TensorF& t) {
  TensorF out(t.shape());
  const float* d = t.data();
  float* o = out.mut_data();
  for (int64_t i = 0; i < t.numel(); ++i) o[i] = std::clamp(d[i], -1.0f, 1.0f);
  return out;
}

std::vector<TensorF> load_dataset(const std::string& dataset, uint64_t seed,
                                  int sequences, int t_frames, int h, int w) {
  std::vector<TensorF> out;
  if (dataset == "ball") {
    // Nearest half-integer keeps 2r integral (see ball_init).
    const double radius =
        std::max(1.5, std::round(2.0 * std::min(h, w) / 5.0) / 2.0);
    for (int i = 0; i < sequences; ++i)
      out.push_back(gen_bouncing_ball(seed + static_cast<uint64_t>(i), t_frames, h,
                                      w, radius));
    return out;
  }
  if (dataset == "drift") {
    for (int i = 0; i < sequences; ++i)
      out.push_back(gen_drift_field(seed + static_cast<uint64_t>(i), t_frames, h, w));
    return out;
  }
  if (dataset.rfind("dir:", 0) == 0) {
    const std::string dir = dataset.substr(4);
    std::vector<std::filesystem::path> files;
    std::error_code ec;
    for (const auto& entry : std::filesystem::directory_iterator(dir, ec))
      if (entry.path().extension() == ".rvtf") files.push_back(entry.path());
    if (ec)
      throw IoError(IoErrorCode::kOpenFailed, "cannot list " + dir + ": " + ec.message());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      TensorF v = io::read_tensor(f.string());
      check_video_shape(v, "load_dataset");
      out.push_back(std::move(v));
    }
    require(!out.empty(), "load_dataset", "no .rvtf sequences in " + dir);
    return out;
  }
  throw ConfigError("dataset must be ball, drift, or dir:<path>, got '" + dataset +
                    "'");
}

}  // namespace rvd::video
