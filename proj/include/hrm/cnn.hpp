// Copyright 2026 The hrm-vision Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "hrm/conv.hpp"
#include "hrm/error.hpp"
#include "hrm/nn.hpp"
#include "hrm/ops.hpp"
#include "hrm/random.hpp"
#include "hrm/tensor.hpp"

namespace hrm {

struct cnn_config {
  std::size_t image_size = 32;
  std::size_t in_channels = 3;
  std::vector<std::size_t> widths{64, 128};
  std::size_t convs_per_stage = 2;
  std::size_t classes = 10;
  std::uint64_t init_seed = 0;

  void validate() const {
    if (widths.empty() || convs_per_stage == 0 || classes == 0 || in_channels == 0)
      throw config_error("cnn: widths, convs per stage, classes and channels must be non-empty");
    if (image_size % (std::size_t{1} << widths.size()) != 0)
      throw config_error("cnn: image size " + std::to_string(image_size) +
                         " does not survive " + std::to_string(widths.size()) + " poolings");
  }

  std::size_t parameter_count() const {
    std::size_t n = 0, cin = in_channels;
    for (std::size_t w : widths)
      for (std::size_t j = 0; j < convs_per_stage; ++j) {
        n += 9 * cin * w + 2 * w;
        cin = w;
      }
    return n + cin * classes;
  }
};

// Conv-BN-ReLU blocks, 2x2 max pooling after each stage, global average
// pooling and a bias-free linear classifier.
template <class T>
class cnn_model {
 public:
  struct block {
    basic_tensor<T> kernel, gamma, beta;
    batchnorm_state<T> stats;
  };

  explicit cnn_model(const cnn_config& cfg) : cfg_(cfg) {
    cfg_.validate();
    rng gen(cfg_.init_seed, 0);
    std::size_t cin = cfg_.in_channels;
    for (std::size_t w : cfg_.widths)
      for (std::size_t j = 0; j < cfg_.convs_per_stage; ++j) {
        const double he = std::sqrt(2.0 / static_cast<double>(9 * cin));
        blocks_.push_back({detail::init_parameter<T>({3, 3, cin, w}, gen, he),
                           detail::ones_parameter<T>(w),
                           basic_tensor<T>::parameter({w}, std::vector<T>(w, T(0))),
                           batchnorm_state<T>(w)});
        cin = w;
      }
    head_ = detail::init_parameter<T>({cin, cfg_.classes}, gen,
                                      1.0 / std::sqrt(static_cast<double>(cin)));
  }

  const cnn_config& config() const { return cfg_; }
  std::vector<block>& blocks() { return blocks_; }
  const std::vector<block>& blocks() const { return blocks_; }
  basic_tensor<T>& head() { return head_; }

  parameter_list<T> parameters() const {
    parameter_list<T> out;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const std::string p = "conv" + std::to_string(i) + ".";
      out.push_back({p + "kernel", blocks_[i].kernel});
      out.push_back({p + "bn_gamma", blocks_[i].gamma});
      out.push_back({p + "bn_beta", blocks_[i].beta});
    }
    out.push_back({"head.weight", head_});
    return out;
  }

  // Running statistics, serialized after the learnable parameters.
  parameter_list<T> buffers() const {
    parameter_list<T> out;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const std::string p = "conv" + std::to_string(i) + ".";
      out.push_back({p + "bn_running_mean", blocks_[i].stats.running_mean});
      out.push_back({p + "bn_running_var", blocks_[i].stats.running_var});
    }
    return out;
  }

  // images[B, S, S, C] -> logits[B, K]. Train mode updates running stats.
  basic_tensor<T> operator()(const basic_tensor<T>& images, bn_mode mode) {
    if (images.rank() != 4 || images.extent(1) != cfg_.image_size ||
        images.extent(2) != cfg_.image_size || images.extent(3) != cfg_.in_channels)
      throw config_error("cnn: expected [B," + std::to_string(cfg_.image_size) + "," +
                         std::to_string(cfg_.image_size) + "," + std::to_string(cfg_.in_channels) +
                         "] images, got " + to_string(images.shape()));
    auto h = images;
    std::size_t k = 0;
    for (std::size_t s = 0; s < cfg_.widths.size(); ++s) {
      for (std::size_t j = 0; j < cfg_.convs_per_stage; ++j, ++k) {
        auto& b = blocks_[k];
        h = relu(batchnorm2d(conv2d(h, b.kernel), b.gamma, b.beta, b.stats, mode));
      }
      h = maxpool2d(h);
    }
    return linear(global_avg_pool(h), head_);
  }

 private:
  cnn_config cfg_;
  std::vector<block> blocks_;
  basic_tensor<T> head_;
};

}  // namespace hrm
