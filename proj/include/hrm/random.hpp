// Copyright 2026 The hrm-vision Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "hrm/tensor.hpp"

namespace hrm {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seeded generator whose draws depend only on (seed, stream), not on the
// standard library's distribution implementations.
class rng {
 public:
  explicit rng(std::uint64_t seed, std::uint64_t stream = 0)
      : engine_(splitmix64(seed ^ splitmix64(stream + 0x5851f42d4c957f2dULL))) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform() * n); }

  // Box-Muller; keeps the second variate for the next call.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Standard normal resampled until it falls inside [lo, hi].
  double truncated_normal(double lo = -2.0, double hi = 2.0) {
    for (;;) {
      const double z = normal();
      if (z >= lo && z <= hi) return z;
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// i.i.d. TN(0, 1; -2, 2) samples in row-major order.
template <class T = float>
basic_tensor<T> truncated_normal(const shape_t& shape, std::uint64_t seed,
                                 std::uint64_t stream = 0, double stddev = 1.0) {
  rng gen(seed, stream);
  std::vector<T> values(numel(shape));
  for (auto& v : values) v = static_cast<T>(stddev * gen.truncated_normal());
  return basic_tensor<T>(shape, std::move(values));
}

}  // namespace hrm
