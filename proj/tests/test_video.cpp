// Toy video generators, windowing, the 8-bit value convention, and dataset
// loading (generated and directory-backed).
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "rvd/tensor_file.hpp"
#include "rvd/video.hpp"

using namespace rvd;

// ===== Bouncing ball ======================================================

TEST_CASE("bouncing ball is deterministic and binary without antialiasing") {
  TensorF a = video::gen_bouncing_ball(42, 6, 16, 16, 3.0, false);
  TensorF b = video::gen_bouncing_ball(42, 6, 16, 16, 3.0, false);
  CHECK(a.same_bytes(b));
  REQUIRE(a.shape() == Shape{6, 1, 16, 16});

  // Hard-edged rendering is exactly two-valued, and the disc never vanishes.
  int64_t plus = 0, minus = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const float v = a.data()[i];
    CHECK((v == 1.0f || v == -1.0f));
    v > 0 ? ++plus : ++minus;
  }
  CHECK(plus > 0);
  CHECK(minus > 0);

  // Disc area (count of +1 pixels) is exactly conserved frame to frame:
  // centers stay on the half-integer lattice, so every frame is a rigid
  // translation of the same rasterized disc. Brute-force count per frame.
  for (double radius : {3.0, 2.5}) {
    CAPTURE(radius);
    TensorF v = video::gen_bouncing_ball(11, 40, 16, 16, radius, false);
    int area0 = 0;
    for (int i = 0; i < 16 * 16; ++i) area0 += v.data()[i] > 0;
    CHECK(area0 > 0);
    for (int t = 1; t < 40; ++t) {
      const float* f = v.data() + static_cast<int64_t>(t) * 16 * 16;
      int area = 0;
      for (int i = 0; i < 16 * 16; ++i) area += f[i] > 0;
      CHECK(area == area0);
    }
  }

  TensorF aa = video::gen_bouncing_ball(42, 6, 16, 16, 3.0, true);
  for (int64_t i = 0; i < aa.numel(); ++i) {
    CHECK(aa.data()[i] >= -1.0f);
    CHECK(aa.data()[i] <= 1.0f);
  }

  CHECK_THROWS_AS(video::gen_bouncing_ball(1, 0, 16, 16, 3.0), ShapeError);
  CHECK_THROWS_AS(video::gen_bouncing_ball(1, 4, 16, 16, 8.0), ShapeError);
  CHECK_THROWS_AS(video::gen_bouncing_ball(1, 4, 16, 16, 0.0), ShapeError);
}

TEST_CASE("ball stays inside the frame across long rollouts") {
  TensorF v = video::gen_bouncing_ball(7, 200, 12, 20, 2.5, false);
  for (int t = 0; t < 200; ++t) {
    const float* f = v.data() + static_cast<int64_t>(t) * 12 * 20;
    int area = 0;
    for (int i = 0; i < 12 * 20; ++i) area += f[i] > 0;
    CHECK(area > 0);  // never leaves the visible area
  }
}

// ===== Drift field ========================================================

TEST_CASE("drift field frames are exact circular shifts with conserved mean") {
  const int h = 12, w = 16, t_frames = 8;
  TensorF v = video::gen_drift_field(3, t_frames, h, w);
  REQUIRE(v.shape() == Shape{t_frames, 1, h, w});
  for (int64_t i = 0; i < v.numel(); ++i) {
    CHECK(v.data()[i] >= -1.0f);
    CHECK(v.data()[i] <= 1.0f);
  }

  // Recover the integer velocity by matching frame 1 against all shifts of
  // frame 0, then check every consecutive pair uses that same shift exactly.
  const float* f0 = v.data();
  const float* f1 = v.data() + h * w;
  int vy = -1, vx = -1, matches = 0;
  for (int sy = 0; sy < h && matches == 0; ++sy)
    for (int sx = 0; sx < w; ++sx) {
      bool ok = true;
      for (int i = 0; i < h && ok; ++i)
        for (int j = 0; j < w && ok; ++j)
          ok = f1[((i + sy) % h) * w + (j + sx) % w] == f0[i * w + j];
      if (ok) {
        vy = sy;
        vx = sx;
        ++matches;
        break;
      }
    }
  REQUIRE(matches == 1);
  CHECK((vy != 0 || vx != 0));  // velocity is never (0,0)
  for (int t = 0; t + 1 < t_frames; ++t) {
    const float* a = v.data() + static_cast<int64_t>(t) * h * w;
    const float* b = v.data() + static_cast<int64_t>(t + 1) * h * w;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        CHECK(b[((i + vy) % h) * w + (j + vx) % w] == a[i * w + j]);
  }

  // Periodic advection conserves the spatial mean.
  double mean0 = 0;
  for (int i = 0; i < h * w; ++i) mean0 += f0[i];
  mean0 /= h * w;
  for (int t = 1; t < t_frames; ++t) {
    const float* f = v.data() + static_cast<int64_t>(t) * h * w;
    double m = 0;
    for (int i = 0; i < h * w; ++i) m += f[i];
    m /= h * w;
    CHECK(std::abs(m - mean0) < 1e-6);
  }

  CHECK(video::gen_drift_field(3, t_frames, h, w).same_bytes(v));  // determinism
}

// ===== Windowing ==========================================================

TEST_CASE("window_sequences counting and tiling") {
  TensorF v8 = video::gen_drift_field(1, 8, 4, 4);
  auto w1 = video::window_sequences(v8, 2, 6, 1);
  CHECK(w1.size() == 1);

  TensorF v10 = video::gen_drift_field(1, 10, 4, 4);
  auto w3 = video::window_sequences(v10, 2, 6, 1);
  CHECK(w3.size() == 3);

  auto w2 = video::window_sequences(v10, 2, 6, 2);
  CHECK(w2.size() == 2);

  // Windows tile without gaps: window k covers frames k .. k+p+q-1.
  for (size_t k = 0; k < w3.size(); ++k) {
    REQUIRE(w3[k].context.shape() == Shape{2, 1, 4, 4});
    REQUIRE(w3[k].future.shape() == Shape{6, 1, 4, 4});
    for (int t = 0; t < 8; ++t) {
      TensorF want = video::frame_at(v10, static_cast<int>(k) + t);
      TensorF got = t < 2 ? video::frame_at(w3[k].context, t)
                          : video::frame_at(w3[k].future, t - 2);
      CHECK(got.same_bytes(want));
    }
  }

  TensorF v7 = video::gen_drift_field(1, 7, 4, 4);
  CHECK_THROWS_AS(video::window_sequences(v7, 2, 6, 1), ShapeError);
  CHECK_THROWS_AS(video::window_sequences(v8, 0, 6, 1), ShapeError);
  CHECK_THROWS_AS(video::window_sequences(v8, 2, 6, 0), ShapeError);
}

TEST_CASE("slice_frames and frame_at bounds") {
  TensorF v = video::gen_drift_field(2, 5, 4, 6);
  TensorF s = video::slice_frames(v, 1, 3);
  REQUIRE(s.shape() == Shape{3, 1, 4, 6});
  CHECK(video::frame_at(s, 0).same_bytes(video::frame_at(v, 1)));
  CHECK(video::frame_at(s, 2).same_bytes(video::frame_at(v, 3)));
  CHECK(video::frame_at(v, 4).shape() == Shape{1, 4, 6});
  CHECK_THROWS_AS(video::slice_frames(v, 3, 3), ShapeError);
  CHECK_THROWS_AS(video::slice_frames(v, -1, 2), ShapeError);
  CHECK_THROWS_AS(video::frame_at(v, 5), ShapeError);
}

// ===== 8-bit convention ===================================================

TEST_CASE("8-bit quantization round trip is exact on all 256 codes") {
  for (int u = 0; u < 256; ++u) {
    const float x = video::dequantize_pixel(static_cast<uint8_t>(u));
    CHECK(x >= -1.0f);
    CHECK(x <= 1.0f);
    CHECK(video::quantize_pixel(x) == u);
  }
  // Out-of-range pixel values clamp to the rails.
  CHECK(video::quantize_pixel(-3.0f) == 0);
  CHECK(video::quantize_pixel(3.0f) == 255);
  CHECK(video::quantize_pixel(-1.0f) == 0);
  CHECK(video::quantize_pixel(1.0f) == 255);

  TensorF t = TensorF::zeros({3});
  t.mut_data()[0] = -1.0f;
  t.mut_data()[1] = 0.0f;
  t.mut_data()[2] = 1.0f;
  auto q = video::quantize(t);
  REQUIRE(q.size() == 3);
  CHECK(q[0] == 0);
  CHECK(q[1] == 128);  // round(1 * 127.5) = 128 (round half away from zero)
  CHECK(q[2] == 255);
}

TEST_CASE("clamp_video clips to [-1,1] and touches nothing else") {
  TensorF t = TensorF::zeros({4});
  t.mut_data()[0] = -2.5f;
  t.mut_data()[1] = 0.25f;
  t.mut_data()[2] = 1.5f;
  t.mut_data()[3] = -1.0f;
  TensorF c = video::clamp_video(t);
  CHECK(c.data()[0] == -1.0f);
  CHECK(c.data()[1] == 0.25f);
  CHECK(c.data()[2] == 1.0f);
  CHECK(c.data()[3] == -1.0f);
}

// ===== Dataset access =====================================================

TEST_CASE("generated datasets are pure functions of seed and params") {
  auto a = video::load_dataset("ball", 9, 3, 8, 16, 16);
  auto b = video::load_dataset("ball", 9, 3, 8, 16, 16);
  REQUIRE(a.size() == 3);
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].same_bytes(b[i]));
  // Different sequences within one dataset differ.
  CHECK_FALSE(a[0].same_bytes(a[1]));

  auto d = video::load_dataset("drift", 9, 2, 8, 16, 16);
  REQUIRE(d.size() == 2);
  REQUIRE(d[0].shape() == Shape{8, 1, 16, 16});

  CHECK_THROWS_AS(video::load_dataset("mnist", 1, 1, 4, 8, 8), ConfigError);
}

TEST_CASE("directory datasets load sorted rvtf sequences") {
  namespace fs = std::filesystem;
  const fs::path dir = "video_ds_test";
  fs::create_directories(dir);
  TensorF v1 = video::gen_drift_field(1, 4, 8, 8);
  TensorF v2 = video::gen_drift_field(2, 4, 8, 8);
  io::write_tensor((dir / "seq_00001.rvtf").string(), v2);
  io::write_tensor((dir / "seq_00000.rvtf").string(), v1);
  io::write_tensor((dir / "ignore.txt").string() + ".bak", v1);  // not .rvtf

  auto loaded = video::load_dataset("dir:" + dir.string(), 0, 0, 0, 0, 0);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].same_bytes(v1));  // sorted by filename
  CHECK(loaded[1].same_bytes(v2));

  fs::remove_all(dir);
  CHECK_THROWS_AS(video::load_dataset("dir:" + dir.string(), 0, 0, 0, 0, 0),
                  IoError);
}
