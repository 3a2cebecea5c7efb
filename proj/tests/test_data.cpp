// Copyright 2026 The hrm-vision Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <array>
#include <set>

#include "support.hpp"

using namespace hrm;
using namespace hrm::testing;

namespace {

std::vector<unsigned char> idx_images(std::uint32_t magic, std::uint32_t n, std::uint32_t rows,
                                      std::uint32_t cols, std::size_t payload) {
  std::vector<unsigned char> b;
  put_be32(b, magic);
  put_be32(b, n);
  put_be32(b, rows);
  put_be32(b, cols);
  for (std::size_t i = 0; i < payload; ++i) b.push_back(static_cast<unsigned char>(i * 7 % 256));
  return b;
}

std::vector<unsigned char> idx_labels(std::uint32_t magic, std::uint32_t n, std::size_t payload) {
  std::vector<unsigned char> b;
  put_be32(b, magic);
  put_be32(b, n);
  for (std::size_t i = 0; i < payload; ++i) b.push_back(static_cast<unsigned char>(i % 10));
  return b;
}

// CIFAR-style record: label bytes then R, G, B planes of 1024 bytes each,
// with pixel value (plane * 50 + p) mod 256.
std::vector<unsigned char> cifar_records(std::size_t n, std::size_t label_bytes, int label_base) {
  std::vector<unsigned char> b;
  for (std::size_t i = 0; i < n; ++i) {
    if (label_bytes == 2) b.push_back(static_cast<unsigned char>(i % 20));
    b.push_back(static_cast<unsigned char>((label_base + static_cast<int>(i)) % 100));
    for (std::size_t plane = 0; plane < 3; ++plane)
      for (std::size_t p = 0; p < 1024; ++p) b.push_back(static_cast<unsigned char>((plane * 50 + p + i) % 256));
  }
  return b;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Mnist, SyntheticIdxRoundTrip) {
  temp_dir dir("idx");
  write_bytes(dir.path() / "i", idx_images(2051, 3, 28, 28, 3 * 784));
  write_bytes(dir.path() / "l", idx_labels(2049, 3, 3));
  auto d = load_mnist_idx(dir.path() / "i", dir.path() / "l", split::train);
  ASSERT_EQ(d.size(), 3u);
  EXPECT_EQ(d.height, 28u);
  EXPECT_EQ(d.channels, 1u);
  EXPECT_EQ(d.labels, (std::vector<int>{0, 1, 2}));
  EXPECT_FLOAT_EQ(d.pixels[1], 7.0f / 255.0f);
  EXPECT_FLOAT_EQ(d.pixels[800], static_cast<float>(800 * 7 % 256) / 255.0f);
  auto again = load_mnist_idx(dir.path() / "i", dir.path() / "l", split::train);
  EXPECT_EQ(again.pixels, d.pixels);
}

TEST(Mnist, HeaderErrorsNameTheField) {
  temp_dir dir("idx-bad");
  const auto i = dir.path() / "i", l = dir.path() / "l";
  write_bytes(l, idx_labels(2049, 2, 2));
  write_bytes(i, idx_images(2052, 2, 28, 28, 2 * 784));
  EXPECT_NE(message_of([&] { load_mnist_idx(i, l, split::train); }).find("magic"), std::string::npos);
  EXPECT_THROW(load_mnist_idx(i, l, split::train), format_error);
  write_bytes(i, idx_images(2051, 3, 28, 28, 3 * 784));
  EXPECT_NE(message_of([&] { load_mnist_idx(i, l, split::train); }).find("count"), std::string::npos);
  write_bytes(i, idx_images(2051, 2, 28, 28, 784));
  EXPECT_THROW(load_mnist_idx(i, l, split::train), format_error);
  write_bytes(i, idx_images(2051, 2, 28, 28, 2 * 784));
  write_bytes(l, idx_labels(2049, 2, 1));
  EXPECT_THROW(load_mnist_idx(i, l, split::train), format_error);
}

TEST(Mnist, MissingDirectoryListsExpectedPaths) {
  temp_dir dir("idx-missing");
  const auto msg = message_of([&] { load_mnist(dir.path(), split::test); });
  EXPECT_NE(msg.find("t10k-images-idx3-ubyte"), std::string::npos);
  EXPECT_THROW(load_mnist(dir.path(), split::test), data_error);
}

TEST(Mnist, RealFirstImageMatchesIndependentDecoder) {
  if (!have_mnist()) GTEST_SKIP() << "MNIST not present under " << real_data_dir();
  const auto dir = real_data_dir() / "mnist";
  auto d = load_mnist(dir, split::train);
  ASSERT_EQ(d.size(), 60000u);
  EXPECT_EQ(d.height, 28u);
  // Independent read: skip the 16-byte header, take 784 bytes.
  std::ifstream in(dir / "train-images-idx3-ubyte", std::ios::binary);
  std::array<char, 16 + 784> raw{};
  in.read(raw.data(), raw.size());
  std::uint64_t sum_ref = 0, sum = 0;
  for (std::size_t i = 0; i < 784; ++i) {
    sum_ref += static_cast<unsigned char>(raw[16 + i]) * (i + 1);
    sum += static_cast<std::uint64_t>(std::lround(d.pixels[i] * 255.0f)) * (i + 1);
  }
  EXPECT_EQ(sum, sum_ref);
  std::ifstream lab(dir / "train-labels-idx1-ubyte", std::ios::binary);
  std::array<char, 9> lraw{};
  lab.read(lraw.data(), lraw.size());
  EXPECT_EQ(d.labels[0], static_cast<unsigned char>(lraw[8]));
  std::vector<std::size_t> hist(10, 0);
  for (int y : d.labels) ++hist.at(static_cast<std::size_t>(y));
  for (auto h : hist) EXPECT_GT(h, 5000u);
  auto t = load_mnist(dir, split::test);
  EXPECT_EQ(t.size(), 10000u);
}

TEST(Cifar, Cifar10RecordLayoutAndChannelOrder) {
  temp_dir dir("c10");
  const auto f = dir.path() / "test_batch.bin";
  write_bytes(f, cifar_records(2, 1, 3));
  auto d = load_cifar(dir.path(), cifar_variant::c10, split::test);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(std::filesystem::file_size(f), 2u * 3073);
  EXPECT_EQ(d.labels, (std::vector<int>{3, 4}));
  // Pixel p of image 1 channel c is (c * 50 + p + 1) mod 256.
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p : {0u, 31u, 1023u})
      EXPECT_FLOAT_EQ(d.pixels[3072 + p * 3 + c], static_cast<float>((c * 50 + p + 1) % 256) / 255.0f);
}

TEST(Cifar, Cifar100KeepsFineLabel) {
  temp_dir dir("c100");
  write_bytes(dir.path() / "train.bin", cifar_records(3, 2, 97));
  auto d = load_cifar(dir.path(), cifar_variant::c100, split::train);
  EXPECT_EQ(d.classes, 100u);
  EXPECT_EQ(d.labels, (std::vector<int>{97, 98, 99}));
}

TEST(Cifar, TruncatedFileReportsByteOffset) {
  temp_dir dir("c10-trunc");
  auto bytes = cifar_records(2, 1, 0);
  bytes.resize(bytes.size() - 10);
  write_bytes(dir.path() / "test_batch.bin", bytes);
  const auto msg = message_of([&] { load_cifar(dir.path(), cifar_variant::c10, split::test); });
  EXPECT_NE(msg.find("3073"), std::string::npos) << msg;
  EXPECT_THROW(load_cifar(dir.path(), cifar_variant::c10, split::test), format_error);
}

TEST(Cifar, Cifar10LabelAboveNineIsAFormatError) {
  temp_dir dir("c10-label");
  write_bytes(dir.path() / "test_batch.bin", cifar_records(1, 1, 12));
  EXPECT_THROW(load_cifar(dir.path(), cifar_variant::c10, split::test), format_error);
}

TEST(Cifar, MissingTrainingBatchIsADataError) {
  temp_dir dir("c10-missing");
  EXPECT_THROW(load_cifar(dir.path(), cifar_variant::c10, split::train), data_error);
}

TEST(Standardize, TrainMomentsRoundTripAndConstantChannel) {
  dataset d;
  d.height = 4;
  d.width = 4;
  d.channels = 3;
  d.classes = 2;
  d.labels.assign(10, 0);
  rng gen(1);
  for (std::size_t i = 0; i < 10 * 48; ++i)
    d.pixels.push_back(i % 3 == 2 ? 0.25f : static_cast<float>(gen.uniform() * (1 + i % 3)));
  const auto original = d.pixels;
  const auto s = compute_stats(d);
  standardize(d, s);
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0, v = 0;
    for (std::size_t i = c; i < d.pixels.size(); i += 3) m += d.pixels[i];
    m /= 160;
    for (std::size_t i = c; i < d.pixels.size(); i += 3) v += (d.pixels[i] - m) * (d.pixels[i] - m);
    EXPECT_NEAR(m, 0.0, 1e-5);
    EXPECT_NEAR(std::sqrt(v / 160), 1.0, 1e-4);
  }
  for (std::size_t i = 2; i < d.pixels.size(); i += 3) EXPECT_EQ(d.pixels[i], 0.0f);
  unstandardize(d, s);
  for (std::size_t i = 0; i < d.pixels.size(); ++i) EXPECT_NEAR(d.pixels[i], original[i], 1e-5);
}

TEST(Standardize, TestSplitUsesTrainStatistics) {
  temp_dir dir("std");
  write_synthetic_mnist(dir.path(), "train", 200, 1);
  write_synthetic_mnist(dir.path(), "t10k", 100, 2);
  auto train = load_mnist(dir.path(), split::train), test = load_mnist(dir.path(), split::test);
  const auto s = compute_stats(train);
  standardize(test, s);
  double m = 0;
  for (float v : test.pixels) m += v;
  m /= static_cast<double>(test.pixels.size());
  EXPECT_LT(std::abs(m), 0.2);
  EXPECT_GT(std::abs(m), 1e-6);
  EXPECT_THROW(standardize(test, channel_stats{{0.0, 0.0}, {1.0, 1.0}}), std::invalid_argument);
}

TEST(Batches, CifarEpochHas391BatchesAndIsAPermutation) {
  const auto plan = batch_indices(50000, 128, 3, true);
  EXPECT_EQ(plan.size(), 391u);
  EXPECT_EQ(plan.back().size(), 50000u - 390 * 128);
  std::set<std::size_t> seen;
  for (const auto& b : plan) seen.insert(b.begin(), b.end());
  EXPECT_EQ(seen.size(), 50000u);
  EXPECT_EQ(*seen.rbegin(), 49999u);
  EXPECT_EQ(batch_indices(60000, 128, 0, false).size(), 469u);
}

TEST(Batches, SeededOrderIsReproducibleAndEpochDependent) {
  EXPECT_EQ(batch_indices(1000, 64, 5, true), batch_indices(1000, 64, 5, true));
  EXPECT_NE(batch_indices(1000, 64, 5, true), batch_indices(1000, 64, 6, true));
  const auto ordered = batch_indices(10, 4, 5, false);
  EXPECT_EQ(ordered[2], (std::vector<std::size_t>{8, 9}));
  EXPECT_THROW(batch_indices(10, 0, 0, false), config_error);
}

TEST(Batches, MakeBatchCopiesPixelsUnchanged) {
  temp_dir dir("batch");
  write_synthetic_mnist(dir.path(), "train", 20, 3);
  auto d = load_mnist(dir.path(), split::train);
  auto b = make_batch<float>(d, {7, 2});
  EXPECT_EQ(b.images.shape(), (shape_t{2, 28, 28, 1}));
  EXPECT_EQ(b.labels, (std::vector<int>{d.labels[7], d.labels[2]}));
  for (std::size_t i = 0; i < 784; ++i) ASSERT_EQ(b.images.at(784 + i), d.pixels[2 * 784 + i]);
  EXPECT_THROW(make_batch<float>(d, {20}), contract_error);
  truncate(d, 5);
  EXPECT_EQ(d.size(), 5u);
  EXPECT_EQ(d.pixels.size(), 5u * 784);
}
