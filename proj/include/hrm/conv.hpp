// Copyright 2026 The hrm-vision Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "hrm/blas.hpp"
#include "hrm/ops.hpp"
#include "hrm/tensor.hpp"

namespace hrm {

namespace detail {

// Rows of the 3x3 same-padded neighbourhood for images [first, first + count),
// each row laid out as (ky, kx, c).
template <class T>
void im2col3x3(const T* x, std::size_t first, std::size_t count, std::size_t h, std::size_t w,
               std::size_t c, T* cols) {
  const std::size_t row = 9 * c;
  for (std::size_t b = 0; b < count; ++b) {
    const T* img = x + (first + b) * h * w * c;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) {
        T* dst = cols + ((b * h + y) * w + xx) * row;
        for (std::size_t ky = 0; ky < 3; ++ky)
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const auto iy = static_cast<std::ptrdiff_t>(y + ky) - 1;
            const auto ix = static_cast<std::ptrdiff_t>(xx + kx) - 1;
            T* cell = dst + (ky * 3 + kx) * c;
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(h) ||
                ix >= static_cast<std::ptrdiff_t>(w)) {
              std::fill_n(cell, c, T(0));
            } else {
              std::copy_n(img + (iy * w + ix) * c, c, cell);
            }
          }
      }
  }
}

template <class T>
void col2im3x3(const T* cols, std::size_t first, std::size_t count, std::size_t h, std::size_t w,
               std::size_t c, T* dx) {
  const std::size_t row = 9 * c;
  for (std::size_t b = 0; b < count; ++b) {
    T* img = dx + (first + b) * h * w * c;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) {
        const T* src = cols + ((b * h + y) * w + xx) * row;
        for (std::size_t ky = 0; ky < 3; ++ky)
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const auto iy = static_cast<std::ptrdiff_t>(y + ky) - 1;
            const auto ix = static_cast<std::ptrdiff_t>(xx + kx) - 1;
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(h) ||
                ix >= static_cast<std::ptrdiff_t>(w))
              continue;
            const T* cell = src + (ky * 3 + kx) * c;
            T* dst = img + (iy * w + ix) * c;
            for (std::size_t k = 0; k < c; ++k) dst[k] += cell[k];
          }
      }
  }
}

constexpr std::size_t conv_chunk = 16;

}  // namespace detail

// 3x3 cross-correlation, stride 1, zero same-padding, no bias.
// x[B, H, W, Cin], w[3, 3, Cin, Cout] -> [B, H, W, Cout].
template <class T>
basic_tensor<T> conv2d(const basic_tensor<T>& x, const basic_tensor<T>& w) {
  detail::require(x.rank() == 4 && w.rank() == 4 && w.extent(0) == 3 && w.extent(1) == 3,
                  "conv2d: expected x[B,H,W,C] and w[3,3,Cin,Cout], got " + to_string(x.shape()) +
                      " and " + to_string(w.shape()));
  detail::require(x.extent(3) == w.extent(2), "conv2d: input has " + std::to_string(x.extent(3)) +
                                                  " channels, kernel expects " +
                                                  std::to_string(w.extent(2)));
  const std::size_t b = x.extent(0), h = x.extent(1), wd = x.extent(2), cin = x.extent(3),
                    cout = w.extent(3);
  const std::size_t k = 9 * cin, pix = h * wd;
  auto out = detail::like<T>({b, h, wd, cout});
  std::vector<T> cols(std::min(b, detail::conv_chunk) * pix * k);
  for (std::size_t first = 0; first < b; first += detail::conv_chunk) {
    const std::size_t count = std::min(detail::conv_chunk, b - first);
    detail::im2col3x3(x.ptr(), first, count, h, wd, cin, cols.data());
    blas::gemm<T>(false, false, count * pix, cout, k, T(1), cols.data(), k, w.ptr(), cout, T(0),
                  out.ptr() + first * pix * cout, cout);
  }
  if (auto* tape = detail::tape_for<T>(x, w)) {
    tape->record(out.impl(), [xi = x.impl(), wi = w.impl(), o = out.impl().get(), b, h, wd, cin,
                              cout, k, pix] {
      std::vector<T> cols(std::min(b, detail::conv_chunk) * pix * k);
      T* gw = wi->requires_grad ? wi->ensure_grad().data() : nullptr;
      T* gx = xi->requires_grad ? xi->ensure_grad().data() : nullptr;
      for (std::size_t first = 0; first < b; first += detail::conv_chunk) {
        const std::size_t count = std::min(detail::conv_chunk, b - first);
        const T* g = o->grad.data() + first * pix * cout;
        if (gw) {
          detail::im2col3x3(xi->data->data(), first, count, h, wd, cin, cols.data());
          blas::gemm<T>(true, false, k, cout, count * pix, T(1), cols.data(), k, g, cout, T(1),
                        gw, cout);
        }
        if (gx) {
          blas::gemm<T>(false, true, count * pix, k, cout, T(1), g, cout, wi->data->data(), cout,
                        T(0), cols.data(), k);
          detail::col2im3x3(cols.data(), first, count, h, wd, cin, gx);
        }
      }
    });
  }
  return out;
}

// 2x2 window, stride 2. Gradient goes to the first maximum in row-major
// window order.
template <class T>
basic_tensor<T> maxpool2d(const basic_tensor<T>& x) {
  detail::require(x.rank() == 4, "maxpool2d: expected [B,H,W,C], got " + to_string(x.shape()));
  detail::require(x.extent(1) % 2 == 0 && x.extent(2) % 2 == 0,
                  "maxpool2d: spatial extents must be even, got " + to_string(x.shape()));
  const std::size_t b = x.extent(0), h = x.extent(1), w = x.extent(2), c = x.extent(3);
  const std::size_t oh = h / 2, ow = w / 2;
  auto out = detail::like<T>({b, oh, ow, c});
  std::vector<std::size_t> argmax(out.size());
  const T* xv = x.ptr();
  T* ov = out.ptr();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx)
        for (std::size_t ch = 0; ch < c; ++ch) {
          std::size_t best = ((i * h + 2 * y) * w + 2 * xx) * c + ch;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t idx = ((i * h + 2 * y + dy) * w + 2 * xx + dx) * c + ch;
              if (xv[idx] > xv[best]) best = idx;
            }
          const std::size_t o = ((i * oh + y) * ow + xx) * c + ch;
          ov[o] = xv[best];
          argmax[o] = best;
        }
  if (auto* tape = detail::tape_for<T>(x)) {
    tape->record(out.impl(), [xi = x.impl(), o = out.impl().get(), argmax = std::move(argmax)] {
      T* gx = xi->ensure_grad().data();
      for (std::size_t j = 0; j < argmax.size(); ++j) gx[argmax[j]] += o->grad[j];
    });
  }
  return out;
}

// [B, H, W, C] -> [B, C]
template <class T>
basic_tensor<T> global_avg_pool(const basic_tensor<T>& x) {
  detail::require(x.rank() == 4, "global_avg_pool: expected [B,H,W,C], got " +
                                     to_string(x.shape()));
  const std::size_t b = x.extent(0), pix = x.extent(1) * x.extent(2), c = x.extent(3);
  auto out = detail::like<T>({b, c});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (std::size_t p = 0; p < pix; ++p) acc += x.ptr()[(i * pix + p) * c + ch];
      out.ptr()[i * c + ch] = static_cast<T>(acc / static_cast<double>(pix));
    }
  if (auto* tape = detail::tape_for<T>(x)) {
    tape->record(out.impl(), [xi = x.impl(), o = out.impl().get(), b, pix, c] {
      T* gx = xi->ensure_grad().data();
      const T inv = T(1) / static_cast<T>(pix);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t p = 0; p < pix; ++p)
          for (std::size_t ch = 0; ch < c; ++ch) gx[(i * pix + p) * c + ch] += o->grad[i * c + ch] * inv;
    });
  }
  return out;
}

enum class bn_mode { train, eval };

// Running statistics; never part of the learnable parameter set.
template <class T>
struct batchnorm_state {
  explicit batchnorm_state(std::size_t channels)
      : running_mean(shape_t{channels}), running_var(basic_tensor<T>::full({channels}, T(1))) {}

  basic_tensor<T> running_mean;
  basic_tensor<T> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

// Per-channel normalization over (B, H, W) for x[B, H, W, C].
template <class T>
basic_tensor<T> batchnorm2d(const basic_tensor<T>& x, const basic_tensor<T>& gamma,
                            const basic_tensor<T>& beta, batchnorm_state<T>& state, bn_mode mode) {
  detail::require(x.rank() == 4, "batchnorm2d: expected [B,H,W,C], got " + to_string(x.shape()));
  const std::size_t c = x.extent(3);
  detail::require(gamma.shape() == shape_t{c} && beta.shape() == shape_t{c} &&
                      state.running_mean.size() == c,
                  "batchnorm2d: affine parameters must have " + std::to_string(c) + " entries");
  const std::size_t rows = x.size() / c;
  if (rows == 0) throw contract_error("batchnorm2d: empty batch");

  std::vector<T> mean(c), inv_std(c);
  if (mode == bn_mode::train) {
    std::vector<double> s(c, 0.0), sq(c, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t ch = 0; ch < c; ++ch) s[ch] += x.ptr()[r * c + ch];
    for (std::size_t ch = 0; ch < c; ++ch) s[ch] /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double d = x.ptr()[r * c + ch] - s[ch];
        sq[ch] += d * d;
      }
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double var = sq[ch] / static_cast<double>(rows);
      mean[ch] = static_cast<T>(s[ch]);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + state.eps));
      const double unbiased = rows > 1 ? sq[ch] / static_cast<double>(rows - 1) : var;
      auto& rm = state.running_mean.data()[ch];
      auto& rv = state.running_var.data()[ch];
      rm = static_cast<T>((1.0 - state.momentum) * rm + state.momentum * s[ch]);
      rv = static_cast<T>((1.0 - state.momentum) * rv + state.momentum * unbiased);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = state.running_mean.values()[ch];
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(state.running_var.values()[ch] + state.eps));
    }
  }

  auto out = detail::like<T>(x.shape());
  std::vector<T> xhat(x.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t i = r * c + ch;
      xhat[i] = (x.ptr()[i] - mean[ch]) * inv_std[ch];
      out.ptr()[i] = gamma.ptr()[ch] * xhat[i] + beta.ptr()[ch];
    }

  if (auto* tape = detail::tape_for<T>(x, gamma, beta)) {
    tape->record(out.impl(), [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(),
                              o = out.impl().get(), xhat = std::move(xhat),
                              inv_std = std::move(inv_std), rows, c, mode] {
      const T* g = o->grad.data();
      const T* gam = gi->data->data();
      std::vector<double> dg(c, 0.0), db(c, 0.0);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t i = r * c + ch;
          dg[ch] += static_cast<double>(g[i]) * xhat[i];
          db[ch] += g[i];
        }
      if (gi->requires_grad) {
        auto gg = gi->ensure_grad();
        for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += static_cast<T>(dg[ch]);
      }
      if (bi->requires_grad) {
        auto gb = bi->ensure_grad();
        for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += static_cast<T>(db[ch]);
      }
      if (!xi->requires_grad) return;
      T* gx = xi->ensure_grad().data();
      if (mode == bn_mode::eval) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t ch = 0; ch < c; ++ch)
            gx[r * c + ch] += g[r * c + ch] * gam[ch] * inv_std[ch];
        return;
      }
      // dx = gamma * inv_std / N * (N * dy - sum(dy) - xhat * sum(dy * xhat))
      const double n = static_cast<double>(rows);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t i = r * c + ch;
          const double v = n * g[i] - db[ch] - xhat[i] * dg[ch];
          gx[i] += static_cast<T>(gam[ch] * inv_std[ch] / n * v);
        }
    });
  }
  return out;
}

}  // namespace hrm
