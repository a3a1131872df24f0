#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rvd/tensor.hpp"

// Synthetic toy videos, sequence windowing, and the 8-bit value convention.
// A video is a [T, C, H, W] tensor with pixel values in [-1, 1].

namespace rvd::video {

// Deterministic bouncing disc: single channel, background -1, disc +1.
// With antialias on, edge pixels take fractional coverage values in [-1, 1]
// (estimated on a 4x4 subpixel grid); with it off, pixels are exactly +-1.
TensorF gen_bouncing_ball(uint64_t seed, int t_frames, int h, int w, double radius,
                          bool antialias = true);

// Smooth periodic random field translated by a constant integer velocity
// with circular wrap, so frame t+1 is exactly frame t shifted.
TensorF gen_drift_field(uint64_t seed, int t_frames, int h, int w);

struct Window {
  TensorF context;  // [p, C, H, W]
  TensorF future;   // [q, C, H, W]
};

// Overlapping (context, future) windows at the given stride.
std::vector<Window> window_sequences(const TensorF& video, int p, int q,
                                     int stride = 1);

// Copies frames [start, start+len) into a new [len, C, H, W] tensor.
TensorF slice_frames(const TensorF& video, int start, int len);
// Returns frame t as a [C, H, W] tensor.
TensorF frame_at(const TensorF& video, int t);

// 8-bit convention: x = u/127.5 - 1, u = round((x+1) * 127.5) clamped to
// [0, 255]. The round trip over all 256 codes is exact.
uint8_t quantize_pixel(float x);
float dequantize_pixel(uint8_t u);
std::vector<uint8_t> quantize(const TensorF& t);

// Clamps to [-1, 1]; applied only when exporting model output as video.
TensorF clamp_video(const TensorF& t);

// Dataset access: "ball" and "drift" are generated on the fly from the seed;
// "dir:<path>" reads <path>/seq_*.rvtf (each file one [T, C, H, W] video).
std::vector<TensorF> load_dataset(const std::string& dataset, uint64_t seed,
                                  int sequences, int t_frames, int h, int w);

}  // namespace rvd::video
