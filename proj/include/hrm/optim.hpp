// Copyright 2026 The hrm-vision Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "hrm/error.hpp"
#include "hrm/nn.hpp"
#include "hrm/tensor.hpp"

namespace hrm {

// Mean over the batch of cross-entropy against (1 - eps) * onehot + eps / K.
template <class T>
basic_tensor<T> label_smoothed_ce(const basic_tensor<T>& logits, std::span<const int> labels,
                                  double smoothing = 0.05) {
  detail::require(logits.rank() == 2 && logits.extent(0) == labels.size(),
                  "label_smoothed_ce: logits " + to_string(logits.shape()) + " for " +
                      std::to_string(labels.size()) + " labels");
  const std::size_t b = logits.extent(0), k = logits.extent(1);
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
      throw data_error("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                       " is outside [0, " + std::to_string(k) + ")");
  }
  const double off = smoothing / static_cast<double>(k);
  const double on = 1.0 - smoothing + off;
  std::vector<T> probs(b * k);
  double total = 0.0;
  const T* lv = logits.ptr();
  for (std::size_t i = 0; i < b; ++i) {
    const T* row = lv + i * k;
    double mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    if (!std::isfinite(mx)) throw numeric_error("label_smoothed_ce: non-finite logits");
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t j = 0; j < k; ++j) {
      const double log_p = row[j] - log_z;
      probs[i * k + j] = static_cast<T>(std::exp(log_p));
      const double target = static_cast<std::size_t>(labels[i]) == j ? on : off;
      total -= target * log_p;
    }
  }
  auto out = basic_tensor<T>::scalar(static_cast<T>(total / static_cast<double>(b)));
  if (auto* tape = detail::tape_for<T>(logits)) {
    std::vector<int> lab(labels.begin(), labels.end());
    tape->record(out.impl(), [li = logits.impl(), o = out.impl().get(), probs = std::move(probs),
                              lab = std::move(lab), b, k, on, off] {
      T* gl = li->ensure_grad().data();
      const double g = o->grad[0] / static_cast<double>(b);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < k; ++j) {
          const double target = static_cast<std::size_t>(lab[i]) == j ? on : off;
          gl[i * k + j] += static_cast<T>(g * (probs[i * k + j] - target));
        }
    });
  }
  return out;
}

// Rescales all gradients so their joint Euclidean norm is at most max_norm.
// Returns the norm before clipping.
template <class T>
double clip_global_norm(const parameter_list<T>& params, double max_norm = 1.0) {
  double sq = 0.0;
  for (const auto& p : params) {
    double local = 0.0;
    for (T g : p.value.grad()) local += static_cast<double>(g) * g;
    if (!std::isfinite(local)) throw numeric_error("non-finite gradient in parameter " + p.name);
    sq += local;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const T factor = static_cast<T>(max_norm / norm);
    for (const auto& p : params) {
      auto t = p.value;
      for (T& g : t.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

struct adamw_config {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;
};

// Per-parameter moments plus the shared step counter.
template <class T>
class adamw {
 public:
  adamw(const parameter_list<T>& params, adamw_config cfg = {}) : cfg_(cfg) {
    for (const auto& p : params) {
      first_.emplace_back(p.value.size(), T(0));
      second_.emplace_back(p.value.size(), T(0));
    }
  }

  const adamw_config& config() const { return cfg_; }
  std::size_t steps() const { return step_; }
  std::span<const T> first_moment(std::size_t i) const { return first_.at(i); }
  std::span<const T> second_moment(std::size_t i) const { return second_.at(i); }

  // Decoupled decay p *= (1 - lr * wd), then the bias-corrected Adam update.
  void step(const parameter_list<T>& params, double lr) {
    if (params.size() != first_.size())
      throw contract_error("adamw: optimizer tracks " + std::to_string(first_.size()) +
                           " parameters, got " + std::to_string(params.size()));
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T decay = static_cast<T>(1.0 - lr * cfg_.weight_decay);
    const T step_size = static_cast<T>(lr / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(cfg_.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto p = params[i].value;
      if (p.size() != first_[i].size())
        throw contract_error("adamw: moment size mismatch for parameter " + params[i].name);
      auto values = p.data();
      auto grads = p.grad();
      T* m = first_[i].data();
      T* v = second_[i].data();
      for (std::size_t j = 0; j < values.size(); ++j) {
        const T g = grads[j];
        m[j] = b1 * m[j] + (T(1) - b1) * g;
        v[j] = b2 * v[j] + (T(1) - b2) * g * g;
        values[j] *= decay;
        values[j] -= step_size * m[j] / (std::sqrt(v[j] * inv_bc2) + eps);
      }
    }
  }

  void zero_grad(const parameter_list<T>& params) const {
    for (const auto& p : params) {
      auto t = p.value;
      t.zero_grad();
    }
  }

 private:
  adamw_config cfg_;
  std::vector<std::vector<T>> first_;
  std::vector<std::vector<T>> second_;
  std::size_t step_ = 0;
};

// Linear warmup to lr_peak, then cosine decay from lr_peak to
// floor_fraction * lr_peak, reaching the floor exactly on the last step.
struct schedule_config {
  double lr_peak = 3e-4;
  std::size_t warmup_steps = 1;
  std::size_t total_steps = 1;
  double floor_fraction = 0.2;

  void validate() const {
    if (!(floor_fraction > 0.0 && floor_fraction <= 1.0))
      throw config_error("schedule: floor fraction must lie in (0, 1]");
    if (warmup_steps == 0 || warmup_steps > total_steps)
      throw config_error("schedule: need 0 < warmup_steps <= total_steps");
  }
};

inline double lr_at(std::size_t step, const schedule_config& s) {
  if (step >= s.total_steps)
    throw contract_error("lr_at: step " + std::to_string(step) + " outside [0, " +
                         std::to_string(s.total_steps) + ")");
  if (step < s.warmup_steps)
    return s.lr_peak * static_cast<double>(step + 1) / static_cast<double>(s.warmup_steps);
  const double floor = s.floor_fraction * s.lr_peak;
  const std::size_t span = s.total_steps - s.warmup_steps;
  const double progress =
      span <= 1 ? 1.0
                : static_cast<double>(step - s.warmup_steps) / static_cast<double>(span - 1);
  return floor + (s.lr_peak - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace hrm
