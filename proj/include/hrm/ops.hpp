// Copyright 2026 The hrm-vision Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>
#include <type_traits>
#include <vector>

#include "hrm/blas.hpp"
#include "hrm/tensor.hpp"

namespace hrm {

namespace detail {

template <class T>
basic_tensor<T> like(const shape_t& shape) {
  return basic_tensor<T>(shape);
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw dimension_error(what);
}

// Number of rows when the trailing axis is treated as the feature axis.
inline std::size_t leading(const shape_t& shape) {
  return shape.empty() ? 1 : numel(shape) / shape.back();
}

// exp that the compiler can vectorize in float: x = k ln2 + r, |r| <= ln2/2,
// degree-6 Taylor polynomial for e^r (relative error ~2e-7). Inputs are
// clamped to the normal float range. Double uses std::exp.
template <class T>
inline T exp(T x) {
  if constexpr (std::is_same_v<T, float>) {
    x = std::min(std::max(x, -87.0f), 88.0f);
    const float k = std::floor(x * 1.44269504f + 0.5f);
    const float r = (x - k * 0.693359375f) + k * 2.12194440e-4f;
    float p = 1.0f / 720.0f;
    p = p * r + 1.0f / 120.0f;
    p = p * r + 1.0f / 24.0f;
    p = p * r + 1.0f / 6.0f;
    p = p * r + 0.5f;
    p = p * r + 1.0f;
    p = p * r + 1.0f;
    const auto bits = static_cast<std::uint32_t>(static_cast<std::int32_t>(k) + 127) << 23;
    return p * std::bit_cast<float>(bits);
  } else {
    return std::exp(x);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Products

template <class T>
basic_tensor<T> matmul(const basic_tensor<T>& a, const basic_tensor<T>& b) {
  detail::require(a.rank() == 2 && b.rank() == 2 && a.extent(1) == b.extent(0),
                  "matmul: cannot multiply " + to_string(a.shape()) + " by " +
                      to_string(b.shape()));
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  auto out = detail::like<T>({m, n});
  blas::gemm<T>(false, false, m, n, k, T(1), a.ptr(), k, b.ptr(), n, T(0), out.ptr(), n);
  if (auto* tape = detail::tape_for<T>(a, b)) {
    tape->record(out.impl(), [ai = a.impl(), bi = b.impl(), o = out.impl().get(), m, n, k] {
      const T* g = o->grad.data();
      if (ai->requires_grad) {
        blas::gemm<T>(false, true, m, k, n, T(1), g, n, bi->data->data(), n, T(1),
                      ai->ensure_grad().data(), k);
      }
      if (bi->requires_grad) {
        blas::gemm<T>(true, false, k, n, m, T(1), ai->data->data(), k, g, n, T(1),
                      bi->ensure_grad().data(), n);
      }
    });
  }
  return out;
}

// x[..., k] . w[k, n] -> [..., n], every leading index treated as a row.
template <class T>
basic_tensor<T> linear(const basic_tensor<T>& x, const basic_tensor<T>& w) {
  detail::require(x.rank() >= 1 && w.rank() == 2 && x.shape().back() == w.extent(0),
                  "linear: cannot apply weight " + to_string(w.shape()) + " to " +
                      to_string(x.shape()));
  const std::size_t k = w.extent(0), n = w.extent(1), m = detail::leading(x.shape());
  shape_t shape = x.shape();
  shape.back() = n;
  auto out = detail::like<T>(shape);
  blas::gemm<T>(false, false, m, n, k, T(1), x.ptr(), k, w.ptr(), n, T(0), out.ptr(), n);
  if (auto* tape = detail::tape_for<T>(x, w)) {
    tape->record(out.impl(), [xi = x.impl(), wi = w.impl(), o = out.impl().get(), m, n, k] {
      const T* g = o->grad.data();
      if (xi->requires_grad) {
        blas::gemm<T>(false, true, m, k, n, T(1), g, n, wi->data->data(), n, T(1),
                      xi->ensure_grad().data(), k);
      }
      if (wi->requires_grad) {
        blas::gemm<T>(true, false, k, n, m, T(1), xi->data->data(), k, g, n, T(1),
                      wi->ensure_grad().data(), n);
      }
    });
  }
  return out;
}

// Batched product over all leading axes: a[..., m, k] . b[..., k, n], or
// b[..., n, k] when transpose_b.
template <class T>
basic_tensor<T> bmm(const basic_tensor<T>& a, const basic_tensor<T>& b, bool transpose_b = false) {
  detail::require(a.rank() >= 2 && a.rank() == b.rank(),
                  "bmm: rank mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  const std::size_t r = a.rank();
  for (std::size_t i = 0; i + 2 < r; ++i) {
    detail::require(a.extent(i) == b.extent(i), "bmm: batch extents differ " +
                                                    to_string(a.shape()) + " vs " +
                                                    to_string(b.shape()));
  }
  const std::size_t m = a.extent(r - 2), k = a.extent(r - 1);
  const std::size_t bk = transpose_b ? b.extent(r - 1) : b.extent(r - 2);
  const std::size_t n = transpose_b ? b.extent(r - 2) : b.extent(r - 1);
  detail::require(bk == k, "bmm: inner extents differ " + to_string(a.shape()) + " vs " +
                               to_string(b.shape()));
  const std::size_t groups = numel(a.shape()) / (m * k);
  shape_t shape = a.shape();
  shape[r - 1] = n;
  auto out = detail::like<T>(shape);
  for (std::size_t g = 0; g < groups; ++g) {
    blas::gemm<T>(false, transpose_b, m, n, k, T(1), a.ptr() + g * m * k, k,
                  b.ptr() + g * k * n, transpose_b ? k : n, T(0), out.ptr() + g * m * n, n);
  }
  if (auto* tape = detail::tape_for<T>(a, b)) {
    tape->record(out.impl(), [ai = a.impl(), bi = b.impl(), o = out.impl().get(), m, n, k,
                              groups, transpose_b] {
      const T* go = o->grad.data();
      const T* av = ai->data->data();
      const T* bv = bi->data->data();
      T* ga = ai->requires_grad ? ai->ensure_grad().data() : nullptr;
      T* gb = bi->requires_grad ? bi->ensure_grad().data() : nullptr;
      for (std::size_t g = 0; g < groups; ++g) {
        const T* gg = go + g * m * n;
        if (ga) {
          // dA = G . op(B)^T
          blas::gemm<T>(false, !transpose_b, m, k, n, T(1), gg, n, bv + g * k * n,
                        transpose_b ? k : n, T(1), ga + g * m * k, k);
        }
        if (gb) {
          if (transpose_b) {  // dB[n, k] = G^T . A
            blas::gemm<T>(true, false, n, k, m, T(1), gg, n, av + g * m * k, k, T(1),
                          gb + g * k * n, k);
          } else {  // dB[k, n] = A^T . G
            blas::gemm<T>(true, false, k, n, m, T(1), av + g * m * k, k, gg, n, T(1),
                          gb + g * k * n, n);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

namespace detail {

// b either matches a exactly or is a per-feature vector over a's last axis.
template <class T>
bool trailing_broadcast(const basic_tensor<T>& a, const basic_tensor<T>& b, const char* op) {
  if (a.shape() == b.shape()) return false;
  require(b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.extent(0),
          std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
              to_string(b.shape()));
  return true;
}

}  // namespace detail

template <class T>
basic_tensor<T> add(const basic_tensor<T>& a, const basic_tensor<T>& b) {
  const bool bcast = detail::trailing_broadcast(a, b, "add");
  const std::size_t n = a.size(), width = b.size();
  auto out = detail::like<T>(a.shape());
  const T* av = a.ptr();
  const T* bv = b.ptr();
  T* ov = out.ptr();
  if (bcast) {
    for (std::size_t i = 0; i < n; i += width)
      for (std::size_t j = 0; j < width; ++j) ov[i + j] = av[i + j] + bv[j];
  } else {
    for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i];
  }
  if (auto* tape = detail::tape_for<T>(a, b)) {
    tape->record(out.impl(), [ai = a.impl(), bi = b.impl(), o = out.impl().get(), bcast, n,
                              width] {
      const T* g = o->grad.data();
      if (ai->requires_grad) {
        T* ga = ai->ensure_grad().data();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (bi->requires_grad) {
        T* gb = bi->ensure_grad().data();
        if (bcast) {
          for (std::size_t i = 0; i < n; i += width)
            for (std::size_t j = 0; j < width; ++j) gb[j] += g[i + j];
        } else {
          for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
        }
      }
    });
  }
  return out;
}

template <class T>
basic_tensor<T> mul(const basic_tensor<T>& a, const basic_tensor<T>& b) {
  const bool bcast = detail::trailing_broadcast(a, b, "mul");
  const std::size_t n = a.size(), width = b.size();
  auto out = detail::like<T>(a.shape());
  const T* av = a.ptr();
  const T* bv = b.ptr();
  T* ov = out.ptr();
  if (bcast) {
    for (std::size_t i = 0; i < n; i += width)
      for (std::size_t j = 0; j < width; ++j) ov[i + j] = av[i + j] * bv[j];
  } else {
    for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i];
  }
  if (auto* tape = detail::tape_for<T>(a, b)) {
    tape->record(out.impl(), [ai = a.impl(), bi = b.impl(), o = out.impl().get(), bcast, n,
                              width] {
      const T* g = o->grad.data();
      const T* av = ai->data->data();
      const T* bv = bi->data->data();
      if (ai->requires_grad) {
        T* ga = ai->ensure_grad().data();
        if (bcast) {
          for (std::size_t i = 0; i < n; i += width)
            for (std::size_t j = 0; j < width; ++j) ga[i + j] += g[i + j] * bv[j];
        } else {
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bv[i];
        }
      }
      if (bi->requires_grad) {
        T* gb = bi->ensure_grad().data();
        if (bcast) {
          for (std::size_t i = 0; i < n; i += width)
            for (std::size_t j = 0; j < width; ++j) gb[j] += g[i + j] * av[i + j];
        } else {
          for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * av[i];
        }
      }
    });
  }
  return out;
}

template <class T>
basic_tensor<T> scale(const basic_tensor<T>& x, T factor) {
  auto out = detail::like<T>(x.shape());
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) out.ptr()[i] = x.ptr()[i] * factor;
  if (auto* tape = detail::tape_for<T>(x)) {
    tape->record(out.impl(), [xi = x.impl(), o = out.impl().get(), n, factor] {
      T* gx = xi->ensure_grad().data();
      for (std::size_t i = 0; i < n; ++i) gx[i] += o->grad[i] * factor;
    });
  }
  return out;
}

namespace detail {

// y = f(x) with dy/dx = df(x, y).
template <class T, class F, class DF>
basic_tensor<T> unary(const basic_tensor<T>& x, F f, DF df) {
  auto out = like<T>(x.shape());
  const std::size_t n = x.size();
  const T* xv = x.ptr();
  T* ov = out.ptr();
  for (std::size_t i = 0; i < n; ++i) ov[i] = f(xv[i]);
  if (auto* tape = tape_for<T>(x)) {
    tape->record(out.impl(), [xi = x.impl(), o = out.impl().get(), n, df] {
      const T* xv = xi->data->data();
      const T* yv = o->data->data();
      const T* g = o->grad.data();
      T* gx = xi->ensure_grad().data();
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * df(xv[i], yv[i]);
    });
  }
  return out;
}

}  // namespace detail

// Tanh approximation of GELU, evaluated as v * sigmoid(2u) with
// u = sqrt(2/pi) * (v + 0.044715 v^3), which equals 0.5 v (1 + tanh(u)).
// Two passes per loop keep each one vectorizable.
template <class T>
basic_tensor<T> gelu(const basic_tensor<T>& x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2 / pi)
  constexpr T a = T(0.044715);
  const std::size_t n = x.size();
  auto out = detail::like<T>(x.shape());
  const T* xv = x.ptr();
  T* ov = out.ptr();
  for (std::size_t i = 0; i < n; ++i) {
    const T v = xv[i];
    ov[i] = detail::exp(T(-2) * c * (v + a * v * v * v));
  }
  for (std::size_t i = 0; i < n; ++i) ov[i] = xv[i] / (T(1) + ov[i]);
  if (auto* tape = detail::tape_for<T>(x)) {
    tape->record(out.impl(), [xi = x.impl(), o = out.impl().get(), n] {
      const T* xv = xi->data->data();
      const T* g = o->grad.data();
      T* gx = xi->ensure_grad().data();
      std::vector<T> s(n);
      for (std::size_t i = 0; i < n; ++i) {
        const T v = xv[i];
        s[i] = detail::exp(T(-2) * c * (v + a * v * v * v));
      }
      for (std::size_t i = 0; i < n; ++i) {
        const T v = xv[i];
        const T sg = T(1) / (T(1) + s[i]);
        const T du = c * (T(1) + T(3) * a * v * v);
        gx[i] += g[i] * (sg + T(2) * v * sg * (T(1) - sg) * du);
      }
    });
  }
  return out;
}

template <class T>
basic_tensor<T> relu(const basic_tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
basic_tensor<T> sigmoid(const basic_tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return T(1) / (T(1) + detail::exp(-v)); },
      [](T, T y) { return y * (T(1) - y); });
}

// ---------------------------------------------------------------------------
// Reductions and normalizers

template <class T>
basic_tensor<T> sum(const basic_tensor<T>& x) {
  double acc = 0.0;
  for (T v : x.values()) acc += v;
  auto out = basic_tensor<T>::scalar(static_cast<T>(acc));
  if (auto* tape = detail::tape_for<T>(x)) {
    tape->record(out.impl(), [xi = x.impl(), o = out.impl().get()] {
      const T g = o->grad[0];
      for (T& v : xi->ensure_grad()) v += g;
    });
  }
  return out;
}

template <class T>
basic_tensor<T> mean(const basic_tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

// Max-subtracted softmax along `axis`.
template <class T>
basic_tensor<T> softmax(const basic_tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw dimension_error("softmax: axis " + std::to_string(axis) + " out of range for " +
                          to_string(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.extent(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.extent(i);
  const std::size_t len = x.extent(axis);
  auto out = detail::like<T>(x.shape());
  const T* xv = x.ptr();
  T* yv = out.ptr();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = xv[base];
      bool finite = true;
      for (std::size_t j = 0; j < len; ++j) {
        const T v = xv[base + j * inner];
        finite &= std::isfinite(v);
        mx = std::max(mx, v);
      }
      if (!finite) throw numeric_error("softmax: non-finite input");
      for (std::size_t j = 0; j < len; ++j)
        yv[base + j * inner] = detail::exp(xv[base + j * inner] - mx);
      double total = 0.0;
      for (std::size_t j = 0; j < len; ++j) total += yv[base + j * inner];
      const T inv = static_cast<T>(1.0 / total);
      for (std::size_t j = 0; j < len; ++j) yv[base + j * inner] *= inv;
    }
  }
  if (auto* tape = detail::tape_for<T>(x)) {
    tape->record(out.impl(), [xi = x.impl(), o = out.impl().get(), outer, inner, len] {
      const T* y = o->data->data();
      const T* g = o->grad.data();
      T* gx = xi->ensure_grad().data();
      for (std::size_t a = 0; a < outer; ++a) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = a * len * inner + in;
          double dot = 0.0;
          for (std::size_t j = 0; j < len; ++j) {
            const std::size_t idx = base + j * inner;
            dot += static_cast<double>(g[idx]) * y[idx];
          }
          for (std::size_t j = 0; j < len; ++j) {
            const std::size_t idx = base + j * inner;
            gx[idx] += y[idx] * (g[idx] - static_cast<T>(dot));
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layout

// Same storage, new shape.
template <class T>
basic_tensor<T> reshape(const basic_tensor<T>& x, shape_t shape) {
  if (numel(shape) != x.size()) {
    throw dimension_error("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  auto impl = std::make_shared<detail::tensor_impl<T>>();
  impl->shape = std::move(shape);
  impl->data = x.impl()->data;
  auto out = basic_tensor<T>::from_impl(std::move(impl));
  if (auto* tape = detail::tape_for<T>(x)) {
    tape->record(out.impl(), [xi = x.impl(), o = out.impl().get()] {
      detail::accumulate<T>(xi, o->grad);
    });
  }
  return out;
}

// x[B, S, D] -> x[:, index, :] as [B, D].
template <class T>
basic_tensor<T> select_token(const basic_tensor<T>& x, std::size_t index) {
  detail::require(x.rank() == 3 && index < x.extent(1),
                  "select_token: index " + std::to_string(index) + " on " + to_string(x.shape()));
  const std::size_t b = x.extent(0), s = x.extent(1), d = x.extent(2);
  auto out = detail::like<T>({b, d});
  for (std::size_t i = 0; i < b; ++i)
    std::copy_n(x.ptr() + (i * s + index) * d, d, out.ptr() + i * d);
  if (auto* tape = detail::tape_for<T>(x)) {
    tape->record(out.impl(), [xi = x.impl(), o = out.impl().get(), b, s, d, index] {
      T* gx = xi->ensure_grad().data();
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < d; ++j) gx[(i * s + index) * d + j] += o->grad[i * d + j];
    });
  }
  return out;
}

// tokens[B, n, D] with token[D] placed in front of every sequence -> [B, n + 1, D].
template <class T>
basic_tensor<T> prepend_token(const basic_tensor<T>& tokens, const basic_tensor<T>& token) {
  detail::require(tokens.rank() == 3 && token.rank() == 1 && token.extent(0) == tokens.extent(2),
                  "prepend_token: " + to_string(token.shape()) + " onto " +
                      to_string(tokens.shape()));
  const std::size_t b = tokens.extent(0), n = tokens.extent(1), d = tokens.extent(2);
  auto out = detail::like<T>({b, n + 1, d});
  for (std::size_t i = 0; i < b; ++i) {
    T* dst = out.ptr() + i * (n + 1) * d;
    std::copy_n(token.ptr(), d, dst);
    std::copy_n(tokens.ptr() + i * n * d, n * d, dst + d);
  }
  if (auto* tape = detail::tape_for<T>(tokens, token)) {
    tape->record(out.impl(), [ti = tokens.impl(), ci = token.impl(), o = out.impl().get(), b, n,
                              d] {
      const T* g = o->grad.data();
      if (ti->requires_grad) {
        T* gt = ti->ensure_grad().data();
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t j = 0; j < n * d; ++j) gt[i * n * d + j] += g[i * (n + 1) * d + d + j];
      }
      if (ci->requires_grad) {
        T* gc = ci->ensure_grad().data();
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t j = 0; j < d; ++j) gc[j] += g[i * (n + 1) * d + j];
      }
    });
  }
  return out;
}

namespace detail {

// [B, S, H, dh] <-> [B, H, S, dh]; forward when to_heads.
template <class T>
void permute_heads(const T* src, T* dst, std::size_t b, std::size_t s, std::size_t h,
                   std::size_t dh, bool to_heads, bool accumulate) {
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t t = 0; t < s; ++t)
      for (std::size_t k = 0; k < h; ++k) {
        const std::size_t seq = ((i * s + t) * h + k) * dh;
        const std::size_t head = ((i * h + k) * s + t) * dh;
        const T* from = src + (to_heads ? seq : head);
        T* to = dst + (to_heads ? head : seq);
        if (accumulate) {
          for (std::size_t j = 0; j < dh; ++j) to[j] += from[j];
        } else {
          std::copy_n(from, dh, to);
        }
      }
}

}  // namespace detail

// x[B, S, H*dh] -> [B, H, S, dh]
template <class T>
basic_tensor<T> split_heads(const basic_tensor<T>& x, std::size_t heads) {
  detail::require(x.rank() == 3 && heads > 0 && x.extent(2) % heads == 0,
                  "split_heads: " + std::to_string(heads) + " heads on " + to_string(x.shape()));
  const std::size_t b = x.extent(0), s = x.extent(1), dh = x.extent(2) / heads;
  auto out = detail::like<T>({b, heads, s, dh});
  detail::permute_heads(x.ptr(), out.ptr(), b, s, heads, dh, true, false);
  if (auto* tape = detail::tape_for<T>(x)) {
    tape->record(out.impl(), [xi = x.impl(), o = out.impl().get(), b, s, heads, dh] {
      detail::permute_heads(o->grad.data(), xi->ensure_grad().data(), b, s, heads, dh, false,
                            true);
    });
  }
  return out;
}

// x[B, H, S, dh] -> [B, S, H*dh]
template <class T>
basic_tensor<T> merge_heads(const basic_tensor<T>& x) {
  detail::require(x.rank() == 4, "merge_heads: expected rank 4, got " + to_string(x.shape()));
  const std::size_t b = x.extent(0), h = x.extent(1), s = x.extent(2), dh = x.extent(3);
  auto out = detail::like<T>({b, s, h * dh});
  detail::permute_heads(x.ptr(), out.ptr(), b, s, h, dh, false, false);
  if (auto* tape = detail::tape_for<T>(x)) {
    tape->record(out.impl(), [xi = x.impl(), o = out.impl().get(), b, s, h, dh] {
      detail::permute_heads(o->grad.data(), xi->ensure_grad().data(), b, s, h, dh, true, true);
    });
  }
  return out;
}

}  // namespace hrm
