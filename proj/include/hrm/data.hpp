// Copyright 2026 The hrm-vision Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include "hrm/error.hpp"
#include "hrm/random.hpp"
#include "hrm/tensor.hpp"

namespace hrm {

enum class split { train, test };

// Images are stored channel-last as floats; pixel bytes map to [0, 1].
struct dataset {
  std::vector<float> pixels;
  std::vector<int> labels;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::size_t classes = 0;
  split tag = split::train;

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return height * width * channels; }
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off,
                               const std::string& file, const char* field) {
  if (off + 4 > b.size())
    throw format_error(file + ": header truncated reading " + field + " at byte " +
                       std::to_string(off));
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

inline float byte_to_unit(unsigned char v) { return static_cast<float>(v) / 255.0f; }

}  // namespace detail

inline dataset load_mnist_idx(const std::filesystem::path& images_path,
                              const std::filesystem::path& labels_path, split tag = split::train) {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);
  const std::string in = images_path.string(), ln = labels_path.string();
  if (const auto m = detail::read_be32(img, 0, in, "magic"); m != 2051)
    throw format_error(in + ": magic is " + std::to_string(m) + ", expected 2051");
  if (const auto m = detail::read_be32(lab, 0, ln, "magic"); m != 2049)
    throw format_error(ln + ": magic is " + std::to_string(m) + ", expected 2049");
  const std::size_t n = detail::read_be32(img, 4, in, "image count");
  const std::size_t rows = detail::read_be32(img, 8, in, "rows");
  const std::size_t cols = detail::read_be32(img, 12, in, "cols");
  const std::size_t nl = detail::read_be32(lab, 4, ln, "label count");
  if (n != nl)
    throw format_error("image count " + std::to_string(n) + " in " + in +
                       " does not match label count " + std::to_string(nl) + " in " + ln);
  if (img.size() != 16 + n * rows * cols)
    throw format_error(in + ": expected " + std::to_string(16 + n * rows * cols) +
                       " bytes for the declared dims, found " + std::to_string(img.size()));
  if (lab.size() != 8 + n)
    throw format_error(ln + ": expected " + std::to_string(8 + n) + " bytes, found " +
                       std::to_string(lab.size()));
  dataset d;
  d.height = rows;
  d.width = cols;
  d.channels = 1;
  d.classes = 10;
  d.tag = tag;
  d.pixels.resize(n * rows * cols);
  std::transform(img.begin() + 16, img.end(), d.pixels.begin(), detail::byte_to_unit);
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = lab[8 + i];
    if (d.labels[i] > 9)
      throw format_error(ln + ": label " + std::to_string(d.labels[i]) + " at index " +
                         std::to_string(i) + " is not a digit");
  }
  return d;
}

inline dataset load_mnist(const std::filesystem::path& dir, split tag) {
  const std::string prefix = tag == split::train ? "train" : "t10k";
  const auto images = dir / (prefix + "-images-idx3-ubyte");
  const auto labels = dir / (prefix + "-labels-idx1-ubyte");
  for (const auto& p : {images, labels})
    if (!std::filesystem::exists(p))
      throw data_error("missing MNIST file " + p.string() + " (expected " + images.string() +
                       " and " + labels.string() + "; try the fetch command)");
  return load_mnist_idx(images, labels, tag);
}

enum class cifar_variant { c10, c100 };

// Appends the records of one binary batch file. CIFAR-10 records are one
// label byte plus 3072 channel-major pixels; CIFAR-100 records carry a coarse
// and a fine label byte, and the fine one is kept.
inline void append_cifar_file(const std::filesystem::path& path, cifar_variant v, dataset& d) {
  const auto bytes = detail::read_file(path);
  const std::size_t label_bytes = v == cifar_variant::c10 ? 1 : 2;
  const std::size_t record = label_bytes + 3072;
  if (bytes.size() % record != 0)
    throw format_error(path.string() + ": truncated record at byte offset " +
                       std::to_string(bytes.size() - bytes.size() % record) + " (record length " +
                       std::to_string(record) + ")");
  const std::size_t n = bytes.size() / record;
  const std::size_t base = d.labels.size();
  d.labels.resize(base + n);
  d.pixels.resize((base + n) * 3072);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* r = bytes.data() + i * record;
    const int label = r[label_bytes - 1];
    if (static_cast<std::size_t>(label) >= d.classes)
      throw format_error(path.string() + ": label " + std::to_string(label) + " at byte offset " +
                         std::to_string(i * record + label_bytes - 1) + " exceeds class count");
    d.labels[base + i] = label;
    float* dst = d.pixels.data() + (base + i) * 3072;
    const unsigned char* px = r + label_bytes;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < 1024; ++p) dst[p * 3 + c] = detail::byte_to_unit(px[c * 1024 + p]);
  }
}

inline std::vector<std::filesystem::path> cifar_files(const std::filesystem::path& dir,
                                                      cifar_variant v, split tag) {
  if (v == cifar_variant::c100) return {dir / (tag == split::train ? "train.bin" : "test.bin")};
  if (tag == split::test) return {dir / "test_batch.bin"};
  std::vector<std::filesystem::path> out;
  for (int i = 1; i <= 5; ++i) out.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
  return out;
}

inline dataset load_cifar(const std::filesystem::path& dir, cifar_variant v, split tag) {
  dataset d;
  d.height = d.width = 32;
  d.channels = 3;
  d.classes = v == cifar_variant::c10 ? 10 : 100;
  d.tag = tag;
  for (const auto& f : cifar_files(dir, v, tag)) {
    if (!std::filesystem::exists(f))
      throw data_error("missing CIFAR file " + f.string() + " (try the fetch command)");
    append_cifar_file(f, v, d);
  }
  return d;
}

struct channel_stats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

constexpr double min_stddev = 1e-8;

inline channel_stats compute_stats(const dataset& d) {
  const std::size_t c = d.channels, rows = d.pixels.size() / c;
  channel_stats s{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < c; ++k) s.mean[k] += d.pixels[r * c + k];
  for (auto& m : s.mean) m /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < c; ++k) {
      const double x = d.pixels[r * c + k] - s.mean[k];
      s.stddev[k] += x * x;
    }
  for (auto& v : s.stddev) v = std::max(std::sqrt(v / static_cast<double>(rows)), min_stddev);
  return s;
}

// In place (x - mean) / std per channel.
inline void standardize(dataset& d, const channel_stats& s) {
  if (s.mean.size() != d.channels || s.stddev.size() != d.channels)
    throw dimension_error("standardize: stats for " + std::to_string(s.mean.size()) +
                          " channels, dataset has " + std::to_string(d.channels));
  const std::size_t c = d.channels;
  for (std::size_t i = 0; i < d.pixels.size(); ++i) {
    const std::size_t k = i % c;
    d.pixels[i] = static_cast<float>((d.pixels[i] - s.mean[k]) / std::max(s.stddev[k], min_stddev));
  }
}

inline void unstandardize(dataset& d, const channel_stats& s) {
  const std::size_t c = d.channels;
  for (std::size_t i = 0; i < d.pixels.size(); ++i) {
    const std::size_t k = i % c;
    d.pixels[i] = static_cast<float>(d.pixels[i] * std::max(s.stddev[k], min_stddev) + s.mean[k]);
  }
}

// Index lists for one epoch; the final short batch is kept.
inline std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                           std::uint64_t seed, bool shuffle) {
  if (batch_size == 0) throw config_error("batch size must be positive");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (shuffle) {
    rng gen(seed, 7);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[gen.below(i)]);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t first = 0; first < n; first += batch_size)
    out.emplace_back(order.begin() + first, order.begin() + std::min(n, first + batch_size));
  return out;
}

template <class T = float>
struct batch {
  basic_tensor<T> images;
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};

template <class T = float>
batch<T> make_batch(const dataset& d, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw contract_error("make_batch: empty index list");
  const std::size_t sz = d.image_size();
  std::vector<T> values(indices.size() * sz);
  std::vector<int> labels(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= d.size())
      throw contract_error("make_batch: index " + std::to_string(indices[i]) + " out of range");
    std::copy_n(d.pixels.begin() + indices[i] * sz, sz, values.begin() + i * sz);
    labels[i] = d.labels[indices[i]];
  }
  return {basic_tensor<T>({indices.size(), d.height, d.width, d.channels}, std::move(values)),
          std::move(labels), indices};
}

// First `limit` examples (all when limit is 0 or larger than the split).
inline void truncate(dataset& d, std::size_t limit) {
  if (limit == 0 || limit >= d.size()) return;
  d.labels.resize(limit);
  d.pixels.resize(limit * d.image_size());
}

}  // namespace hrm
