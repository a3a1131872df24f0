#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rvd/tensor.hpp"

// Portable on-disk tensor container ("RVTF"): fixed little-endian layout,
// f32 payloads, single-tensor files and ordered named-tensor directories
// (used for datasets, sample ensembles, and checkpoints). Round trips are
// bit-exact.
//
// Layout:
//   magic   "RVTF"
//   version u16 LE (currently 1)
//   kind    u8  (0 = single tensor, 1 = named directory)
//   dtype   u8  (0 = f32 little-endian)
// kind 0: rank u8, rank x u32 LE dims, payload
// kind 1: count u32 LE, then per entry:
//   name_len u16 LE, name bytes, rank u8, dims, payload

namespace rvd::io {

inline constexpr uint16_t kTensorFileVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, TensorF>>;

void write_tensor(const std::string& path, const TensorF& t);
TensorF read_tensor(const std::string& path);

// Entry order is preserved, which keeps writes byte-reproducible.
void write_tensor_map(const std::string& path, const NamedTensors& tensors);
NamedTensors read_tensor_map(const std::string& path);

// Lookup helper; throws IoError(kBadRecord) naming the missing tensor.
const TensorF& find_tensor(const NamedTensors& tensors, const std::string& name);
bool has_tensor(const NamedTensors& tensors, const std::string& name);

}  // namespace rvd::io
