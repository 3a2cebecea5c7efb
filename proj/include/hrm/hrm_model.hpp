// Copyright 2026 The hrm-vision Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hrm/error.hpp"
#include "hrm/nn.hpp"
#include "hrm/ops.hpp"
#include "hrm/optim.hpp"
#include "hrm/random.hpp"
#include "hrm/tensor.hpp"

namespace hrm {

enum class segment_mode { train, eval };

// How evaluation obtains its per-batch initial states: the fixed draw
// re-materialized for the batch shape, or a new draw per batch.
enum class eval_state_mode { fixed, resample };

inline std::string to_string(eval_state_mode m) {
  return m == eval_state_mode::fixed ? "fixed" : "resample";
}

inline eval_state_mode parse_eval_state_mode(const std::string& s) {
  if (s == "fixed") return eval_state_mode::fixed;
  if (s == "resample") return eval_state_mode::resample;
  throw config_error("eval state mode must be 'fixed' or 'resample', got '" + s + "'");
}

struct hrm_config {
  std::size_t image_height = 28;
  std::size_t image_width = 28;
  std::size_t channels = 1;
  std::size_t patch = 4;
  std::size_t classes = 10;

  encoder_config low{};
  encoder_config high{};

  std::size_t n_cycles = 2;
  std::size_t t_micro = 3;
  std::size_t m_train = 2;
  std::size_t m_eval = 3;

  std::uint64_t state_seed = 0;
  std::uint64_t init_seed = 0;
  eval_state_mode eval_states = eval_state_mode::fixed;

  tokenizer_config tokenizer() const { return {patch, channels, low.d_model, low.init}; }

  std::size_t sequence_length() const {
    return 1 + (image_height / patch) * (image_width / patch);
  }

  void validate() const {
    low.validate();
    high.validate();
    if (low.d_model != high.d_model || low.n_heads != high.n_heads)
      throw config_error("hrm: f_L and f_H must share d_model and n_heads");
    if (n_cycles == 0 || t_micro == 0 || m_train == 0 || m_eval == 0)
      throw config_error("hrm: N, T, M_train and M_eval must all be at least 1");
    if (patch == 0 || image_height % patch != 0 || image_width % patch != 0)
      throw config_error("hrm: image " + std::to_string(image_height) + "x" +
                         std::to_string(image_width) + " is not divisible by patch " +
                         std::to_string(patch));
    if (classes == 0 || channels == 0) throw config_error("hrm: classes and channels must be positive");
  }

  // Learnable scalars excluding the halting head.
  std::size_t parameter_count() const {
    const std::size_t d = low.d_model;
    return patch * patch * channels * d + d + low.n_layers * low.parameters_per_layer() +
           high.n_layers * high.parameters_per_layer() + d * classes;
  }
};

template <class T>
struct hrm_state {
  basic_tensor<T> z_low;
  basic_tensor<T> z_high;
};

template <class T>
struct segment_output {
  basic_tensor<T> logits;
  hrm_state<T> state;  // detached
};

// TN(0, 1; -2, 2) draws for z_L (stream 1) and z_H (stream 2), generated with
// the batch axis outermost so a smaller batch sees a prefix of a larger one.
template <class T>
hrm_state<T> init_states(std::size_t batch, std::size_t seq, std::size_t d_model,
                         std::uint64_t seed) {
  const shape_t shape{batch, seq, d_model};
  return {truncated_normal<T>(shape, seed, 1), truncated_normal<T>(shape, seed, 2)};
}

template <class T>
class hrm_model {
 public:
  struct call_counts {
    std::size_t low = 0;
    std::size_t high = 0;
  };

  explicit hrm_model(const hrm_config& cfg) : cfg_(cfg) {
    cfg_.validate();
    rng gen(cfg_.init_seed, 0);
    tokenizer_ = patch_embedding<T>(cfg_.tokenizer(), gen);
    low_ = encoder_stack<T>(cfg_.low, gen);
    high_ = encoder_stack<T>(cfg_.high, gen);
    head_ = cls_head<T>(cfg_.low.d_model, cfg_.classes, gen, cfg_.low.init);
    halt_ = cls_head<T>(cfg_.low.d_model, 2, gen, cfg_.low.init);
  }

  const hrm_config& config() const { return cfg_; }
  patch_embedding<T>& tokenizer() { return tokenizer_; }
  encoder_stack<T>& low_module() { return low_; }
  encoder_stack<T>& high_module() { return high_; }
  cls_head<T>& head() { return head_; }
  cls_head<T>& halting() { return halt_; }
  const cls_head<T>& halting() const { return halt_; }

  // Trainable parameters in checkpoint order: tokenizer, f_L, f_H, head.
  parameter_list<T> parameters() const {
    parameter_list<T> out;
    tokenizer_.collect("tokenizer.", out);
    low_.collect("f_low.", out);
    high_.collect("f_high.", out);
    out.push_back({"head.weight", head_.weight});
    return out;
  }

  // Trainable parameters followed by the (untrained) halting head.
  parameter_list<T> all_parameters() const {
    auto out = parameters();
    out.push_back({"halting.weight", halt_.weight});
    return out;
  }

  basic_tensor<T> tokenize(const basic_tensor<T>& images) const { return tokenizer_(images); }

  // The fixed initial draw shaped to `batch`; cached per batch size.
  hrm_state<T> initial_state(std::size_t batch) const {
    auto it = state_cache_.find(batch);
    if (it == state_cache_.end()) {
      it = state_cache_
               .emplace(batch, init_states<T>(batch, cfg_.sequence_length(), cfg_.low.d_model,
                                              cfg_.state_seed))
               .first;
    }
    return {stop_gradient(it->second.z_low), stop_gradient(it->second.z_high)};
  }

  // z_L' = f_L(z_L + z_H + x)
  basic_tensor<T> low_step(const hrm_state<T>& state, const basic_tensor<T>& tokens) const {
    check_state(state, tokens);
    ++calls_.low;
    return low_(add(add(state.z_low, state.z_high), tokens));
  }

  // z_H' = f_H(z_H + z_L)
  basic_tensor<T> high_step(const hrm_state<T>& state) const {
    if (state.z_low.shape() != state.z_high.shape())
      throw config_error("hrm: z_L " + to_string(state.z_low.shape()) + " and z_H " +
                         to_string(state.z_high.shape()) + " differ");
    ++calls_.high;
    return high_(add(state.z_high, state.z_low));
  }

  // N cycles of T low steps and one high step. In train mode only the final
  // low step and the final high step are recorded on the tape; every earlier
  // update is computed as a constant.
  segment_output<T> run_segment(const hrm_state<T>& state, const basic_tensor<T>& tokens,
                                segment_mode mode) const {
    if (state.z_low.requires_grad() || state.z_high.requires_grad())
      throw contract_error("run_segment: state must be detached on entry");
    const bool train = mode == segment_mode::train;
    hrm_state<T> s = state;
    const auto constant_tokens = stop_gradient(tokens);
    for (std::size_t i = 1; i <= cfg_.n_cycles; ++i) {
      const bool last_cycle = i == cfg_.n_cycles;
      for (std::size_t tau = 1; tau <= cfg_.t_micro; ++tau) {
        if (train && last_cycle && tau == cfg_.t_micro) {
          s.z_low = low_step(s, tokens);
        } else {
          no_grad guard;
          s.z_low = low_step(s, constant_tokens);
        }
      }
      if (train && last_cycle) {
        s.z_high = high_step(s);
      } else {
        no_grad guard;
        s.z_high = high_step(s);
        s.z_low = stop_gradient(s.z_low);
      }
    }
    segment_output<T> out;
    if (train) {
      out.logits = head_(s.z_high);
    } else {
      no_grad guard;
      out.logits = head_(s.z_high);
    }
    out.state = {stop_gradient(s.z_low), stop_gradient(s.z_high)};
    return out;
  }

  // sigmoid(z_H[:, 0, :] W_Q): column 0 halt, column 1 continue.
  basic_tensor<T> halting_head(const basic_tensor<T>& z_high) const {
    return sigmoid(halt_(z_high));
  }

  struct evaluation {
    basic_tensor<T> logits;
    std::vector<int> predictions;
    std::vector<std::size_t> segments_used;
  };

  // M_eval chained segments from fresh initial states, without a tape. With
  // a halting threshold, a sample whose halt score exceeds it keeps the
  // logits of that segment.
  evaluation evaluate(const basic_tensor<T>& images, std::uint64_t batch_index = 0,
                      std::optional<double> halt_threshold = std::nullopt) const {
    no_grad guard;
    const std::size_t b = images.extent(0), k = cfg_.classes;
    hrm_state<T> state;
    if (cfg_.eval_states == eval_state_mode::fixed) {
      state = initial_state(b);
    } else {
      state = init_states<T>(b, cfg_.sequence_length(), cfg_.low.d_model,
                             splitmix64(cfg_.state_seed + 0x9e37 * (batch_index + 1)));
    }
    const auto tokens = tokenize(images);
    evaluation result;
    result.logits = basic_tensor<T>({b, k});
    result.segments_used.assign(b, cfg_.m_eval);
    std::vector<bool> halted(b, false);
    for (std::size_t m = 1; m <= cfg_.m_eval; ++m) {
      auto out = run_segment(state, tokens, segment_mode::eval);
      state = out.state;
      std::optional<basic_tensor<T>> q;
      if (halt_threshold && m < cfg_.m_eval) q = halting_head(state.z_high);
      for (std::size_t i = 0; i < b; ++i) {
        if (halted[i]) continue;
        std::copy_n(out.logits.ptr() + i * k, k, result.logits.ptr() + i * k);
        if (q && static_cast<double>(q->ptr()[i * 2]) > *halt_threshold) {
          halted[i] = true;
          result.segments_used[i] = m;
        }
      }
    }
    result.predictions = argmax_rows(result.logits);
    return result;
  }

  call_counts calls() const { return calls_; }
  void reset_calls() const { calls_ = {}; }

 private:
  void check_state(const hrm_state<T>& state, const basic_tensor<T>& tokens) const {
    if (state.z_low.shape() != tokens.shape() || state.z_high.shape() != tokens.shape())
      throw config_error("hrm: state " + to_string(state.z_low.shape()) + "/" +
                         to_string(state.z_high.shape()) + " does not match tokens " +
                         to_string(tokens.shape()));
  }

  hrm_config cfg_;
  patch_embedding<T> tokenizer_;
  encoder_stack<T> low_;
  encoder_stack<T> high_;
  cls_head<T> head_;
  cls_head<T> halt_;
  mutable std::map<std::size_t, hrm_state<T>> state_cache_;
  mutable call_counts calls_;
};

struct segment_record {
  std::size_t segment = 0;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

template <class T>
struct supervised_step_result {
  std::vector<segment_record> segments;
  basic_tensor<T> final_logits;
  hrm_state<T> state;
};

// Deep supervision on one batch: M_train segments, each followed by its own
// label-smoothed loss, backward pass, clipping and AdamW step, with the state
// detached between segments. `next_lr` is called once per optimizer step.
template <class T>
supervised_step_result<T> deep_supervised_step(const hrm_model<T>& model,
                                               const basic_tensor<T>& images,
                                               std::span<const int> labels, adamw<T>& optimizer,
                                               const std::function<double()>& next_lr,
                                               double smoothing = 0.05, double max_norm = 1.0) {
  const auto params = model.parameters();
  supervised_step_result<T> result;
  result.state = model.initial_state(images.extent(0));
  for (std::size_t m = 1; m <= model.config().m_train; ++m) {
    segment_record rec;
    rec.segment = m;
    {
      grad_tape<T> tape;
      const auto tokens = model.tokenize(images);
      auto out = model.run_segment(result.state, tokens, segment_mode::train);
      auto loss = label_smoothed_ce(out.logits, labels, smoothing);
      rec.loss = static_cast<double>(loss.item());
      if (!std::isfinite(rec.loss)) throw numeric_error("non-finite loss in segment " + std::to_string(m));
      tape.backward(loss);
      result.final_logits = stop_gradient(out.logits);
      result.state = out.state;
    }
    rec.grad_norm = clip_global_norm(params, max_norm);
    rec.lr = next_lr();
    optimizer.step(params, rec.lr);
    optimizer.zero_grad(params);
    result.segments.push_back(rec);
  }
  return result;
}

}  // namespace hrm
