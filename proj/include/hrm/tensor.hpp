// Copyright 2026 The hrm-vision Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hrm/error.hpp"

namespace hrm {

using shape_t = std::vector<std::size_t>;

inline std::size_t numel(const shape_t& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const shape_t& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

template <class T>
class basic_tensor;
template <class T>
class grad_tape;

namespace detail {

template <class T>
struct tensor_impl {
  shape_t shape;
  std::shared_ptr<std::vector<T>> data;
  std::vector<T> grad;
  bool requires_grad = false;
  bool leaf = true;

  std::span<T> ensure_grad() {
    if (grad.empty()) grad.assign(data->size(), T(0));
    return grad;
  }
};

template <class T>
inline thread_local grad_tape<T>* active_tape = nullptr;

}  // namespace detail

// Dense row-major array. Copies are shallow: two handles may refer to the
// same node, which is what the gradient tape links against.
template <class T>
class basic_tensor {
 public:
  using value_type = T;
  using impl_type = detail::tensor_impl<T>;

  basic_tensor() = default;

  explicit basic_tensor(shape_t shape)
      : basic_tensor(shape, std::vector<T>(numel(shape), T(0))) {}

  basic_tensor(shape_t shape, std::vector<T> values)
      : impl_(std::make_shared<impl_type>()) {
    for (auto extent : shape) {
      if (extent == 0) {
        throw dimension_error("tensor extents must be positive, got " +
                              to_string(shape));
      }
    }
    if (numel(shape) != values.size()) {
      throw dimension_error("tensor of shape " + to_string(shape) + " needs " +
                            std::to_string(numel(shape)) + " values, got " +
                            std::to_string(values.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::make_shared<std::vector<T>>(std::move(values));
  }

  static basic_tensor scalar(T value) { return basic_tensor(shape_t{}, {value}); }

  static basic_tensor full(shape_t shape, T value) {
    const auto n = numel(shape);
    return basic_tensor(std::move(shape), std::vector<T>(n, value));
  }

  // A leaf that collects gradients during backward.
  static basic_tensor parameter(shape_t shape, std::vector<T> values) {
    basic_tensor t(std::move(shape), std::move(values));
    t.impl_->requires_grad = true;
    return t;
  }

  static basic_tensor from_impl(std::shared_ptr<impl_type> impl) {
    basic_tensor t;
    t.impl_ = std::move(impl);
    return t;
  }

  bool defined() const noexcept { return impl_ != nullptr; }
  const shape_t& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t extent(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t size() const { return impl_->data->size(); }

  std::span<const T> values() const { return *impl_->data; }
  std::span<T> data() { return *impl_->data; }
  const T* ptr() const { return impl_->data->data(); }
  T* ptr() { return impl_->data->data(); }
  T item() const {
    if (size() != 1) {
      throw contract_error("item() on tensor of shape " + to_string(shape()));
    }
    return (*impl_->data)[0];
  }
  T at(std::size_t i) const { return impl_->data->at(i); }

  bool requires_grad() const noexcept { return impl_ && impl_->requires_grad; }
  bool is_leaf() const noexcept { return impl_->leaf; }
  void set_requires_grad(bool on) {
    if (!impl_->leaf) throw contract_error("requires_grad is only settable on leaves");
    impl_->requires_grad = on;
  }

  // Zeros when backward never reached this tensor.
  std::span<const T> grad() const { return impl_->ensure_grad(); }
  std::span<T> mutable_grad() { return impl_->ensure_grad(); }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }

  const std::shared_ptr<impl_type>& impl() const noexcept { return impl_; }

  // Deep copy with no tape link.
  basic_tensor clone() const {
    return basic_tensor(shape(), std::vector<T>(values().begin(), values().end()));
  }

 private:
  std::shared_ptr<impl_type> impl_;
};

using tensor = basic_tensor<float>;
using tensor64 = basic_tensor<double>;

// Ordered record of differentiable operations. Constructing a tape makes it
// the active one for its scalar type on this thread; destruction restores the
// previously active tape, so tapes nest LIFO.
template <class T>
class grad_tape {
 public:
  grad_tape() : previous_(detail::active_tape<T>) { detail::active_tape<T> = this; }
  ~grad_tape() { detail::active_tape<T> = previous_; }
  grad_tape(const grad_tape&) = delete;
  grad_tape& operator=(const grad_tape&) = delete;

  static grad_tape* active() noexcept { return detail::active_tape<T>; }

  std::size_t size() const noexcept { return entries_.size(); }

  void record(const std::shared_ptr<detail::tensor_impl<T>>& out,
              std::function<void()> backward) {
    out->requires_grad = true;
    out->leaf = false;
    entries_.push_back({out, std::move(backward)});
  }

  // Accumulates d(loss)/d(leaf) into every reachable leaf that requires
  // gradients, then releases the recorded graph.
  void backward(const basic_tensor<T>& loss) {
    if (!loss.defined() || loss.size() != 1) {
      throw contract_error("backward needs a scalar loss, got shape " +
                           (loss.defined() ? to_string(loss.shape()) : "<undefined>"));
    }
    if (!loss.requires_grad() || loss.is_leaf()) {
      throw contract_error("backward: loss is not on the active tape");
    }
    loss.impl()->ensure_grad()[0] = T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (!it->out->grad.empty()) it->backward();
      std::vector<T>().swap(it->out->grad);
    }
    clear();
  }

  void clear() { entries_.clear(); }

 private:
  struct entry {
    std::shared_ptr<detail::tensor_impl<T>> out;
    std::function<void()> backward;
  };
  std::vector<entry> entries_;
  grad_tape* previous_;
};

// Suspends recording for both float and double tapes.
class no_grad {
 public:
  no_grad()
      : f32_(detail::active_tape<float>), f64_(detail::active_tape<double>) {
    detail::active_tape<float> = nullptr;
    detail::active_tape<double> = nullptr;
  }
  ~no_grad() {
    detail::active_tape<float> = f32_;
    detail::active_tape<double> = f64_;
  }
  no_grad(const no_grad&) = delete;
  no_grad& operator=(const no_grad&) = delete;

 private:
  grad_tape<float>* f32_;
  grad_tape<double>* f64_;
};

namespace detail {

// The tape an op should record into: the active one, if any input tracks
// gradients.
template <class T, class... Ts>
grad_tape<T>* tape_for(const Ts&... inputs) {
  auto* tape = active_tape<T>;
  if (tape == nullptr) return nullptr;
  return (inputs.requires_grad() || ...) ? tape : nullptr;
}

template <class T>
void accumulate(const std::shared_ptr<tensor_impl<T>>& target, std::span<const T> g) {
  if (!target->requires_grad) return;
  auto dst = target->ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

}  // namespace detail

// Same values, no tape link: backward contributes nothing through it.
template <class T>
basic_tensor<T> stop_gradient(const basic_tensor<T>& x) {
  auto impl = std::make_shared<detail::tensor_impl<T>>();
  impl->shape = x.shape();
  impl->data = x.impl()->data;
  return basic_tensor<T>::from_impl(std::move(impl));
}

template <class To, class From>
basic_tensor<To> cast(const basic_tensor<From>& x) {
  std::vector<To> out(x.values().begin(), x.values().end());
  return basic_tensor<To>(x.shape(), std::move(out));
}

}  // namespace hrm
