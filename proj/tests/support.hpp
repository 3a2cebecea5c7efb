// Copyright 2026 The hrm-vision Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "hrm/hrm.hpp"

namespace hrm::testing {

inline tensor64 random64(const shape_t& shape, std::uint64_t seed, double scale = 1.0) {
  rng gen(seed, 99);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = scale * (2.0 * gen.uniform() - 1.0);
  return tensor64(shape, std::move(v));
}

inline tensor64 random_param(const shape_t& shape, std::uint64_t seed, double scale = 1.0) {
  auto t = random64(shape, seed, scale);
  t.set_requires_grad(true);
  return t;
}

// Projects an arbitrary output onto a fixed random direction so every output
// entry contributes a distinct weight to the scalar being differentiated.
inline tensor64 probe_loss(const tensor64& y, std::uint64_t seed = 4242) {
  return sum(mul(y, random64(y.shape(), seed)));
}

// Largest per-tensor relative error ||analytic - numeric|| / max(||analytic||,
// ||numeric||) over `inputs`, using central differences with step h.
inline double gradcheck(const std::function<tensor64()>& loss_fn, std::vector<tensor64> inputs,
                        double h = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  {
    grad_tape<double> tape;
    tape.backward(loss_fn());
  }
  double worst = 0.0;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    std::vector<double> numeric(t.size());
    auto values = t.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      double up, down;
      {
        no_grad g;
        up = loss_fn().item();
      }
      values[i] = saved - h;
      {
        no_grad g;
        down = loss_fn().item();
      }
      values[i] = saved;
      numeric[i] = (up - down) / (2.0 * h);
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
    worst = std::max(worst, std::sqrt(diff) / denom);
  }
  return worst;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double relative_diff(std::span<const double> a, std::span<const double> b) {
  double d = 0.0, n = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    n += std::max(a[i] * a[i], b[i] * b[i]);
  }
  return std::sqrt(d) / std::max(std::sqrt(n), 1e-300);
}

class temp_dir {
 public:
  explicit temp_dir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("hrm-test-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~temp_dir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  temp_dir(const temp_dir&) = delete;
  temp_dir& operator=(const temp_dir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& b) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

inline void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>((v >> s) & 0xff));
}

// Synthetic MNIST-format split whose pixels encode the label, so tiny models
// can learn it: a bright horizontal bar at row 2 * label plus low noise.
inline void write_synthetic_mnist(const std::filesystem::path& dir, const std::string& prefix,
                                  std::size_t n, std::uint64_t seed) {
  std::vector<unsigned char> img, lab;
  put_be32(img, 2051);
  put_be32(img, static_cast<std::uint32_t>(n));
  put_be32(img, 28);
  put_be32(img, 28);
  put_be32(lab, 2049);
  put_be32(lab, static_cast<std::uint32_t>(n));
  rng gen(seed, 5);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(gen.below(10));
    lab.push_back(static_cast<unsigned char>(label));
    for (int y = 0; y < 28; ++y)
      for (int x = 0; x < 28; ++x) {
        const bool bar = y / 2 == label + 2 && x >= 4 && x < 24;
        img.push_back(static_cast<unsigned char>(bar ? 230 : gen.below(40)));
      }
  }
  write_bytes(dir / (prefix + "-images-idx3-ubyte"), img);
  write_bytes(dir / (prefix + "-labels-idx1-ubyte"), lab);
}

inline std::filesystem::path real_data_dir() {
#ifdef HRM_TEST_DATA_DIR
  return HRM_TEST_DATA_DIR;
#else
  return "data";
#endif
}

inline bool have_mnist() {
  const auto d = real_data_dir() / "mnist";
  return std::filesystem::exists(d / "train-images-idx3-ubyte") &&
         std::filesystem::exists(d / "t10k-labels-idx1-ubyte");
}

}  // namespace hrm::testing
