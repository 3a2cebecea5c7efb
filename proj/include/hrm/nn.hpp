// Copyright 2026 The hrm-vision Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "hrm/error.hpp"
#include "hrm/ops.hpp"
#include "hrm/random.hpp"
#include "hrm/tensor.hpp"

namespace hrm {

template <class T>
struct named_parameter {
  std::string name;
  basic_tensor<T> value;
};

template <class T>
using parameter_list = std::vector<named_parameter<T>>;

template <class T>
std::size_t parameter_count(const parameter_list<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.size();
  return n;
}

namespace detail {

template <class T>
basic_tensor<T> init_parameter(const shape_t& shape, rng& gen, double stddev) {
  std::vector<T> values(numel(shape));
  for (auto& v : values) v = static_cast<T>(stddev * gen.truncated_normal());
  return basic_tensor<T>::parameter(shape, std::move(values));
}

template <class T>
basic_tensor<T> ones_parameter(std::size_t n) {
  return basic_tensor<T>::parameter({n}, std::vector<T>(n, T(1)));
}

inline std::vector<std::size_t> iota_positions(std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  return p;
}

}  // namespace detail

constexpr double rmsnorm_eps = 1e-6;
constexpr double rope_base = 10000.0;
constexpr double init_stddev = 0.02;

// Truncated-normal weight scale: 1/sqrt(fan_in) or the fixed init_stddev.
enum class init_scheme { fan_in, fixed };

inline std::string to_string(init_scheme s) { return s == init_scheme::fan_in ? "fan_in" : "fixed"; }

inline init_scheme parse_init_scheme(const std::string& s) {
  if (s == "fan_in") return init_scheme::fan_in;
  if (s == "fixed") return init_scheme::fixed;
  throw config_error("init scheme must be 'fan_in' or 'fixed', got '" + s + "'");
}

inline double weight_stddev(init_scheme s, std::size_t fan_in) {
  return s == init_scheme::fixed ? init_stddev : 1.0 / std::sqrt(static_cast<double>(fan_in));
}

// y = x / sqrt(mean(x^2) + eps) * gain over the last axis.
template <class T>
basic_tensor<T> rmsnorm(const basic_tensor<T>& x, const basic_tensor<T>& gain,
                        double eps = rmsnorm_eps) {
  detail::require(x.rank() >= 1 && gain.rank() == 1 && x.shape().back() == gain.extent(0),
                  "rmsnorm: gain " + to_string(gain.shape()) + " for input " +
                      to_string(x.shape()));
  const std::size_t d = gain.extent(0), rows = x.size() / d;
  auto out = detail::like<T>(x.shape());
  std::vector<T> inv_rms(rows);
  const T* xv = x.ptr();
  const T* gv = gain.ptr();
  T* yv = out.ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += static_cast<double>(xv[r * d + j]) * xv[r * d + j];
    const T inv = static_cast<T>(1.0 / std::sqrt(ss / static_cast<double>(d) + eps));
    inv_rms[r] = inv;
    for (std::size_t j = 0; j < d; ++j) yv[r * d + j] = xv[r * d + j] * inv * gv[j];
  }
  if (auto* tape = detail::tape_for<T>(x, gain)) {
    tape->record(out.impl(), [xi = x.impl(), gi = gain.impl(), o = out.impl().get(),
                              inv_rms = std::move(inv_rms), rows, d] {
      const T* xv = xi->data->data();
      const T* gv = gi->data->data();
      const T* g = o->grad.data();
      T* gx = xi->requires_grad ? xi->ensure_grad().data() : nullptr;
      T* gg = gi->requires_grad ? gi->ensure_grad().data() : nullptr;
      for (std::size_t r = 0; r < rows; ++r) {
        const T inv = inv_rms[r];
        const T* xr = xv + r * d;
        const T* gr = g + r * d;
        if (gg) {
          for (std::size_t j = 0; j < d; ++j) gg[j] += gr[j] * xr[j] * inv;
        }
        if (gx) {
          double dot = 0.0;
          for (std::size_t j = 0; j < d; ++j) dot += static_cast<double>(gr[j]) * gv[j] * xr[j];
          const T coeff = static_cast<T>(dot / static_cast<double>(d)) * inv * inv * inv;
          for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += inv * gv[j] * gr[j] - coeff * xr[j];
        }
      }
    });
  }
  return out;
}

// Rotates each pair (x[2i], x[2i+1]) of token s by positions[s] * base^(-2i/dh).
// x[B, H, S, dh].
template <class T>
basic_tensor<T> rope_apply(const basic_tensor<T>& x, const std::vector<std::size_t>& positions,
                           double base = rope_base) {
  detail::require(x.rank() == 4, "rope_apply: expected [B,H,S,dh], got " + to_string(x.shape()));
  const std::size_t groups = x.extent(0) * x.extent(1), s = x.extent(2), dh = x.extent(3);
  if (dh % 2 != 0) throw config_error("rope_apply: head dimension must be even, got " +
                                      std::to_string(dh));
  detail::require(positions.size() == s, "rope_apply: " + std::to_string(positions.size()) +
                                             " positions for " + std::to_string(s) + " tokens");
  const std::size_t half = dh / 2;
  std::vector<T> cos_t(s * half), sin_t(s * half);
  for (std::size_t t = 0; t < s; ++t)
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(dh));
      const double angle = static_cast<double>(positions[t]) * freq;
      cos_t[t * half + i] = static_cast<T>(std::cos(angle));
      sin_t[t * half + i] = static_cast<T>(std::sin(angle));
    }
  auto out = detail::like<T>(x.shape());
  const T* xv = x.ptr();
  T* yv = out.ptr();
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t t = 0; t < s; ++t) {
      const std::size_t row = (g * s + t) * dh;
      for (std::size_t i = 0; i < half; ++i) {
        const T c = cos_t[t * half + i], sn = sin_t[t * half + i];
        const T a = xv[row + 2 * i], b = xv[row + 2 * i + 1];
        yv[row + 2 * i] = a * c - b * sn;
        yv[row + 2 * i + 1] = a * sn + b * c;
      }
    }
  if (auto* tape = detail::tape_for<T>(x)) {
    tape->record(out.impl(), [xi = x.impl(), o = out.impl().get(), cos_t = std::move(cos_t),
                              sin_t = std::move(sin_t), groups, s, dh, half] {
      const T* g = o->grad.data();
      T* gx = xi->ensure_grad().data();
      for (std::size_t gr = 0; gr < groups; ++gr)
        for (std::size_t t = 0; t < s; ++t) {
          const std::size_t row = (gr * s + t) * dh;
          for (std::size_t i = 0; i < half; ++i) {
            const T c = cos_t[t * half + i], sn = sin_t[t * half + i];
            const T ga = g[row + 2 * i], gb = g[row + 2 * i + 1];
            gx[row + 2 * i] += ga * c + gb * sn;
            gx[row + 2 * i + 1] += -ga * sn + gb * c;
          }
        }
    });
  }
  return out;
}

enum class norm_placement { pre, post };

inline std::string to_string(norm_placement p) { return p == norm_placement::pre ? "pre" : "post"; }

inline norm_placement parse_norm_placement(const std::string& s) {
  if (s == "pre") return norm_placement::pre;
  if (s == "post") return norm_placement::post;
  throw config_error("norm placement must be 'pre' or 'post', got '" + s + "'");
}

struct encoder_config {
  std::size_t d_model = 128;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t mlp_mult = 4;
  norm_placement norm = norm_placement::post;
  init_scheme init = init_scheme::fan_in;

  std::size_t head_dim() const { return d_model / n_heads; }

  void validate() const {
    if (d_model == 0 || n_heads == 0 || n_layers == 0 || mlp_mult == 0)
      throw config_error("encoder: all sizes must be positive");
    if (d_model % n_heads != 0)
      throw config_error("encoder: d_model " + std::to_string(d_model) +
                         " is not divisible by n_heads " + std::to_string(n_heads));
    if (head_dim() % 2 != 0)
      throw config_error("encoder: head dimension " + std::to_string(head_dim()) +
                         " must be even for rotary embedding");
  }

  // 4 attention projections, 3 GEGLU matrices and two RMSNorm gains.
  std::size_t parameters_per_layer() const {
    return 4 * d_model * d_model + 3 * mlp_mult * d_model * d_model + 2 * d_model;
  }
};

// All projections are bias-free; weights are [in, out].
template <class T>
struct encoder_layer {
  basic_tensor<T> attn_norm, w_q, w_k, w_v, w_o;
  basic_tensor<T> ffn_norm, w_a, w_b, w_out;

  encoder_layer() = default;
  encoder_layer(const encoder_config& cfg, rng& gen) {
    const std::size_t d = cfg.d_model, hidden = cfg.mlp_mult * cfg.d_model;
    const double sd = weight_stddev(cfg.init, d), sh = weight_stddev(cfg.init, hidden);
    attn_norm = detail::ones_parameter<T>(d);
    w_q = detail::init_parameter<T>({d, d}, gen, sd);
    w_k = detail::init_parameter<T>({d, d}, gen, sd);
    w_v = detail::init_parameter<T>({d, d}, gen, sd);
    w_o = detail::init_parameter<T>({d, d}, gen, sd);
    ffn_norm = detail::ones_parameter<T>(d);
    w_a = detail::init_parameter<T>({d, hidden}, gen, sd);
    w_b = detail::init_parameter<T>({d, hidden}, gen, sd);
    w_out = detail::init_parameter<T>({hidden, d}, gen, sh);
  }

  // Checkpoint order.
  void collect(const std::string& prefix, parameter_list<T>& out) const {
    out.push_back({prefix + "attn_norm", attn_norm});
    out.push_back({prefix + "w_q", w_q});
    out.push_back({prefix + "w_k", w_k});
    out.push_back({prefix + "w_v", w_v});
    out.push_back({prefix + "w_o", w_o});
    out.push_back({prefix + "ffn_norm", ffn_norm});
    out.push_back({prefix + "w_a", w_a});
    out.push_back({prefix + "w_b", w_b});
    out.push_back({prefix + "w_out", w_out});
  }
};

// Unmasked scaled dot-product attention with rotary Q/K. When `probs` is
// given it receives the attention weights [B, H, S, S].
template <class T>
basic_tensor<T> mhsa(const basic_tensor<T>& x, const encoder_layer<T>& layer, std::size_t n_heads,
                     const std::vector<std::size_t>& positions, basic_tensor<T>* probs = nullptr) {
  detail::require(x.rank() == 3 && x.extent(2) == layer.w_q.extent(0),
                  "mhsa: input " + to_string(x.shape()) + " does not match d_model " +
                      std::to_string(layer.w_q.extent(0)));
  if (x.extent(2) % n_heads != 0)
    throw config_error("mhsa: d_model not divisible by head count");
  const std::size_t dh = x.extent(2) / n_heads;
  auto q = rope_apply(split_heads(linear(x, layer.w_q), n_heads), positions);
  auto k = rope_apply(split_heads(linear(x, layer.w_k), n_heads), positions);
  auto v = split_heads(linear(x, layer.w_v), n_heads);
  auto scores = scale(bmm(q, k, true), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
  auto p = softmax(scores, 3);
  if (probs) *probs = p;
  return linear(merge_heads(bmm(p, v)), layer.w_o);
}

template <class T>
basic_tensor<T> mhsa(const basic_tensor<T>& x, const encoder_layer<T>& layer, std::size_t n_heads) {
  return mhsa(x, layer, n_heads, detail::iota_positions(x.extent(1)));
}

// (x W_a) * gelu(x W_b), projected back by W_out.
template <class T>
basic_tensor<T> geglu_ffn(const basic_tensor<T>& x, const encoder_layer<T>& layer) {
  return linear(mul(linear(x, layer.w_a), gelu(linear(x, layer.w_b))), layer.w_out);
}

template <class T>
basic_tensor<T> encoder_block(const basic_tensor<T>& x, const encoder_layer<T>& layer,
                              const encoder_config& cfg,
                              const std::vector<std::size_t>& positions) {
  if (cfg.norm == norm_placement::pre) {
    auto h = add(x, mhsa(rmsnorm(x, layer.attn_norm), layer, cfg.n_heads, positions));
    return add(h, geglu_ffn(rmsnorm(h, layer.ffn_norm), layer));
  }
  auto h = rmsnorm(add(x, mhsa(x, layer, cfg.n_heads, positions)), layer.attn_norm);
  return rmsnorm(add(h, geglu_ffn(h, layer)), layer.ffn_norm);
}

template <class T>
basic_tensor<T> encoder_block(const basic_tensor<T>& x, const encoder_layer<T>& layer,
                              const encoder_config& cfg) {
  return encoder_block(x, layer, cfg, detail::iota_positions(x.extent(1)));
}

// One Transformer module (f_L or f_H).
template <class T>
class encoder_stack {
 public:
  encoder_stack() = default;
  encoder_stack(const encoder_config& cfg, rng& gen) : cfg_(cfg) {
    cfg_.validate();
    layers_.reserve(cfg_.n_layers);
    for (std::size_t i = 0; i < cfg_.n_layers; ++i) layers_.emplace_back(cfg_, gen);
  }

  const encoder_config& config() const { return cfg_; }
  const std::vector<encoder_layer<T>>& layers() const { return layers_; }
  std::vector<encoder_layer<T>>& layers() { return layers_; }

  basic_tensor<T> operator()(const basic_tensor<T>& x,
                             const std::vector<std::size_t>& positions) const {
    detail::require(x.rank() == 3 && x.extent(2) == cfg_.d_model,
                    "encoder_stack: expected [B,S," + std::to_string(cfg_.d_model) + "], got " +
                        to_string(x.shape()));
    auto h = x;
    for (const auto& layer : layers_) h = encoder_block(h, layer, cfg_, positions);
    return h;
  }

  basic_tensor<T> operator()(const basic_tensor<T>& x) const {
    return (*this)(x, detail::iota_positions(x.extent(1)));
  }

  void collect(const std::string& prefix, parameter_list<T>& out) const {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i].collect(prefix + "layers." + std::to_string(i) + ".", out);
  }

 private:
  encoder_config cfg_;
  std::vector<encoder_layer<T>> layers_;
};

struct tokenizer_config {
  std::size_t patch = 4;
  std::size_t channels = 1;
  std::size_t d_model = 128;
  init_scheme init = init_scheme::fan_in;
};

// Non-overlapping P x P patches in row-major patch order, each flattened as
// (py, px, c) and projected by W_patch; a learned CLS vector goes in front.
template <class T>
class patch_embedding {
 public:
  patch_embedding() = default;
  patch_embedding(const tokenizer_config& cfg, rng& gen) : cfg_(cfg) {
    if (cfg.patch == 0 || cfg.channels == 0 || cfg.d_model == 0)
      throw config_error("tokenizer: sizes must be positive");
    const std::size_t fan_in = cfg.patch * cfg.patch * cfg.channels;
    w_patch = detail::init_parameter<T>({fan_in, cfg.d_model}, gen, weight_stddev(cfg.init, fan_in));
    cls = detail::init_parameter<T>({cfg.d_model}, gen, init_stddev);
  }

  const tokenizer_config& config() const { return cfg_; }

  std::size_t sequence_length(std::size_t height, std::size_t width) const {
    check_extents(height, width);
    return 1 + (height / cfg_.patch) * (width / cfg_.patch);
  }

  // images[B, H, W, C] -> [B, S, D]
  basic_tensor<T> operator()(const basic_tensor<T>& images) const {
    if (images.rank() != 4 || images.extent(3) != cfg_.channels)
      throw config_error("tokenizer: expected [B,H,W," + std::to_string(cfg_.channels) +
                         "] images, got " + to_string(images.shape()));
    const std::size_t b = images.extent(0), h = images.extent(1), w = images.extent(2);
    check_extents(h, w);
    const std::size_t p = cfg_.patch, c = cfg_.channels, ph = h / p, pw = w / p;
    const std::size_t patch_len = p * p * c;
    std::vector<T> patches(b * ph * pw * patch_len);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t py = 0; py < ph; ++py)
        for (std::size_t px = 0; px < pw; ++px) {
          T* dst = patches.data() + ((i * ph + py) * pw + px) * patch_len;
          for (std::size_t y = 0; y < p; ++y)
            std::copy_n(images.ptr() + ((i * h + py * p + y) * w + px * p) * c, p * c,
                        dst + y * p * c);
        }
    basic_tensor<T> flat({b, ph * pw, patch_len}, std::move(patches));
    return prepend_token(linear(flat, w_patch), cls);
  }

  void collect(const std::string& prefix, parameter_list<T>& out) const {
    out.push_back({prefix + "w_patch", w_patch});
    out.push_back({prefix + "cls", cls});
  }

  basic_tensor<T> w_patch;
  basic_tensor<T> cls;

 private:
  void check_extents(std::size_t h, std::size_t w) const {
    if (h % cfg_.patch != 0 || w % cfg_.patch != 0)
      throw config_error("tokenizer: image " + std::to_string(h) + "x" + std::to_string(w) +
                         " is not divisible into " + std::to_string(cfg_.patch) + "x" +
                         std::to_string(cfg_.patch) + " patches");
  }

  tokenizer_config cfg_;
};

// Bias-free linear readout of the CLS channel z[:, 0, :].
template <class T>
class cls_head {
 public:
  cls_head() = default;
  cls_head(std::size_t d_model, std::size_t outputs, rng& gen,
           init_scheme init = init_scheme::fan_in)
      : weight(detail::init_parameter<T>({d_model, outputs}, gen, weight_stddev(init, d_model))) {}

  basic_tensor<T> operator()(const basic_tensor<T>& z) const {
    detail::require(z.rank() == 3 && z.extent(1) >= 1, "cls_head: expected [B,S,D], got " +
                                                           to_string(z.shape()));
    return linear(select_token(z, 0), weight);
  }

  basic_tensor<T> weight;
};

// First index of the maximum per row.
template <class T>
std::vector<int> argmax_rows(const basic_tensor<T>& logits) {
  detail::require(logits.rank() == 2, "argmax_rows: expected [B,K], got " +
                                          to_string(logits.shape()));
  const std::size_t b = logits.extent(0), k = logits.extent(1);
  std::vector<int> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (logits.ptr()[i * k + j] > logits.ptr()[i * k + best]) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

}  // namespace hrm
