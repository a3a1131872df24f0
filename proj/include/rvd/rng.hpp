#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "rvd/tensor.hpp"

namespace rvd {

// Deterministic, platform-independent RNG. std::mt19937 would pin the engine
// but not the distributions, so the gaussian draw is implemented by hand.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  // Independent stream for a named purpose; (seed, purpose, index) fully
  // determine the stream, which makes checkpoint resume exact.
  static Rng stream(uint64_t seed, std::string_view purpose, uint64_t index = 0) {
    uint64_t mix = seed;
    mix ^= fnv1a(purpose) + 0x9e3779b97f4a7c15ULL + (mix << 6) + (mix >> 2);
    mix ^= (index + 1) * 0xd1342543de82ef95ULL;
    return Rng(mix);
  }

  // xoshiro256++
  uint64_t next_u64() {
    auto rotl = [](uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next_u64() % span);
  }

  // Box-Muller; draws two uniforms per pair of gaussians.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  template <typename S>
  Tensor<S> gaussian_tensor(Shape shape) {
    Tensor<S> t(std::move(shape));
    S* d = t.mut_data();
    for (int64_t i = 0; i < t.numel(); ++i) d[i] = static_cast<S>(gaussian());
    return t;
  }

  template <typename S>
  Tensor<S> uniform_tensor(Shape shape, double lo, double hi) {
    Tensor<S> t(std::move(shape));
    S* d = t.mut_data();
    for (int64_t i = 0; i < t.numel(); ++i) d[i] = static_cast<S>(uniform(lo, hi));
    return t;
  }

 private:
  uint64_t s_[4];
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace rvd
