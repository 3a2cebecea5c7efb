// Copyright 2026 The hrm-vision Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hrm/checkpoint.hpp"
#include "hrm/cnn.hpp"
#include "hrm/data.hpp"
#include "hrm/error.hpp"
#include "hrm/hrm_model.hpp"
#include "hrm/optim.hpp"
#include "hrm/report.hpp"

namespace hrm {

enum class model_kind { hrm, cnn };
enum class dataset_kind { mnist, cifar10, cifar100 };
// What one schedule step is for HRM: each segment's optimizer step, or a batch.
enum class schedule_unit { segment, batch };

inline std::string to_string(model_kind m) { return m == model_kind::hrm ? "hrm" : "cnn"; }
inline std::string to_string(dataset_kind d) {
  switch (d) {
    case dataset_kind::mnist: return "mnist";
    case dataset_kind::cifar10: return "cifar10";
    default: return "cifar100";
  }
}
inline std::string to_string(schedule_unit u) {
  return u == schedule_unit::segment ? "segment" : "batch";
}

inline model_kind parse_model_kind(const std::string& s) {
  if (s == "hrm") return model_kind::hrm;
  if (s == "cnn") return model_kind::cnn;
  throw config_error("model must be 'hrm' or 'cnn', got '" + s + "'");
}
inline dataset_kind parse_dataset_kind(const std::string& s) {
  if (s == "mnist") return dataset_kind::mnist;
  if (s == "cifar10") return dataset_kind::cifar10;
  if (s == "cifar100") return dataset_kind::cifar100;
  throw config_error("dataset must be mnist, cifar10 or cifar100, got '" + s + "'");
}
inline schedule_unit parse_schedule_unit(const std::string& s) {
  if (s == "segment") return schedule_unit::segment;
  if (s == "batch") return schedule_unit::batch;
  throw config_error("schedule_unit must be 'segment' or 'batch', got '" + s + "'");
}

namespace detail {

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long n = 0;
  try {
    n = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || v[0] == '-')
    throw config_error(key + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(n);
}

inline double parse_real(const std::string& key, const std::string& v) {
  std::istringstream s(v);
  s.imbue(std::locale::classic());
  double x = 0.0;
  s >> x;
  if (!s || !s.eof() || !std::isfinite(x))
    throw config_error(key + ": expected a finite number, got '" + v + "'");
  return x;
}

inline bool parse_switch(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw config_error(key + ": expected on/off, got '" + v + "'");
}

inline std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(parse_size(key, trim(part)));
  if (out.empty()) throw config_error(key + ": expected a comma-separated list");
  return out;
}

inline std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

}  // namespace detail

struct run_config {
  model_kind model = model_kind::hrm;
  dataset_kind data = dataset_kind::mnist;
  std::size_t epochs = 3;
  std::uint64_t seed = 0;
  std::filesystem::path data_dir = "data";
  std::filesystem::path out_dir = "runs/latest";

  std::size_t batch_size = 128;
  double lr = 3e-4;
  double weight_decay = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;
  double label_smoothing = 0.05;
  std::size_t warmup_epochs = 1;
  double lr_floor = 0.2;
  schedule_unit unit = schedule_unit::segment;

  hrm_config hrm{};
  double halt_threshold = 0.0;  // 0 disables the halting cap

  std::vector<std::size_t> cnn_widths{64, 128};
  std::size_t cnn_convs_per_stage = 2;

  std::size_t train_limit = 0;
  std::size_t test_limit = 0;
  bool eval_every_epoch = true;
  bool wall_time = true;
  std::size_t plot_window = 100;
  std::size_t grid_tiles = 64;
  std::size_t log_every = 50;

  // Default protocol for each model/dataset pair.
  static run_config defaults(model_kind m, dataset_kind d) {
    run_config c;
    c.model = m;
    c.data = d;
    c.epochs = d == dataset_kind::mnist ? 3 : 25;
    if (d == dataset_kind::mnist) {
      c.hrm.image_height = c.hrm.image_width = 28;
      c.hrm.channels = 1;
    } else {
      c.hrm.image_height = c.hrm.image_width = 32;
      c.hrm.channels = 3;
      for (auto* e : {&c.hrm.low, &c.hrm.high}) {
        e->d_model = 192;
        e->n_heads = 6;
        e->n_layers = 3;
      }
    }
    c.hrm.classes = d == dataset_kind::cifar100 ? 100 : 10;
    return c;
  }

  std::size_t classes() const { return hrm.classes; }

  hrm_config hrm_model_config() const {
    auto h = hrm;
    h.init_seed = seed;
    return h;
  }

  cnn_config cnn_model_config() const {
    cnn_config c;
    c.image_size = hrm.image_height;
    c.in_channels = hrm.channels;
    c.widths = cnn_widths;
    c.convs_per_stage = cnn_convs_per_stage;
    c.classes = hrm.classes;
    c.init_seed = seed;
    return c;
  }

  void apply(const std::string& key, const std::string& v) {
    using namespace detail;
    static const std::map<std::string, std::function<void(run_config&, const std::string&)>>
        setters = {
            {"model", [](run_config& c, const std::string& v) { c.model = parse_model_kind(v); }},
            {"dataset",
             [](run_config& c, const std::string& v) { c.data = parse_dataset_kind(v); }},
            {"epochs", [](run_config& c, const std::string& v) { c.epochs = parse_size("epochs", v); }},
            {"seed", [](run_config& c, const std::string& v) { c.seed = parse_size("seed", v); }},
            {"data_dir", [](run_config& c, const std::string& v) { c.data_dir = v; }},
            {"out_dir", [](run_config& c, const std::string& v) { c.out_dir = v; }},
            {"batch_size",
             [](run_config& c, const std::string& v) { c.batch_size = parse_size("batch_size", v); }},
            {"lr", [](run_config& c, const std::string& v) { c.lr = parse_real("lr", v); }},
            {"weight_decay",
             [](run_config& c, const std::string& v) { c.weight_decay = parse_real("weight_decay", v); }},
            {"adam_beta1", [](run_config& c, const std::string& v) { c.beta1 = parse_real("adam_beta1", v); }},
            {"adam_beta2", [](run_config& c, const std::string& v) { c.beta2 = parse_real("adam_beta2", v); }},
            {"adam_eps", [](run_config& c, const std::string& v) { c.adam_eps = parse_real("adam_eps", v); }},
            {"clip_norm", [](run_config& c, const std::string& v) { c.clip_norm = parse_real("clip_norm", v); }},
            {"label_smoothing",
             [](run_config& c, const std::string& v) {
               c.label_smoothing = parse_real("label_smoothing", v);
             }},
            {"warmup_epochs",
             [](run_config& c, const std::string& v) {
               c.warmup_epochs = parse_size("warmup_epochs", v);
             }},
            {"lr_floor", [](run_config& c, const std::string& v) { c.lr_floor = parse_real("lr_floor", v); }},
            {"schedule_unit",
             [](run_config& c, const std::string& v) { c.unit = parse_schedule_unit(v); }},
            {"image_size",
             [](run_config& c, const std::string& v) {
               c.hrm.image_height = c.hrm.image_width = parse_size("image_size", v);
             }},
            {"channels",
             [](run_config& c, const std::string& v) { c.hrm.channels = parse_size("channels", v); }},
            {"classes",
             [](run_config& c, const std::string& v) { c.hrm.classes = parse_size("classes", v); }},
            {"patch", [](run_config& c, const std::string& v) { c.hrm.patch = parse_size("patch", v); }},
            {"d_model",
             [](run_config& c, const std::string& v) {
               c.hrm.low.d_model = c.hrm.high.d_model = parse_size("d_model", v);
             }},
            {"n_heads",
             [](run_config& c, const std::string& v) {
               c.hrm.low.n_heads = c.hrm.high.n_heads = parse_size("n_heads", v);
             }},
            {"mlp_mult",
             [](run_config& c, const std::string& v) {
               c.hrm.low.mlp_mult = c.hrm.high.mlp_mult = parse_size("mlp_mult", v);
             }},
            {"low_layers",
             [](run_config& c, const std::string& v) { c.hrm.low.n_layers = parse_size("low_layers", v); }},
            {"high_layers",
             [](run_config& c, const std::string& v) {
               c.hrm.high.n_layers = parse_size("high_layers", v);
             }},
            {"norm",
             [](run_config& c, const std::string& v) {
               c.hrm.low.norm = c.hrm.high.norm = parse_norm_placement(v);
             }},
            {"init",
             [](run_config& c, const std::string& v) {
               c.hrm.low.init = c.hrm.high.init = parse_init_scheme(v);
             }},
            {"n_cycles",
             [](run_config& c, const std::string& v) { c.hrm.n_cycles = parse_size("n_cycles", v); }},
            {"t_micro", [](run_config& c, const std::string& v) { c.hrm.t_micro = parse_size("t_micro", v); }},
            {"m_train", [](run_config& c, const std::string& v) { c.hrm.m_train = parse_size("m_train", v); }},
            {"m_eval", [](run_config& c, const std::string& v) { c.hrm.m_eval = parse_size("m_eval", v); }},
            {"state_seed",
             [](run_config& c, const std::string& v) { c.hrm.state_seed = parse_size("state_seed", v); }},
            {"eval_states",
             [](run_config& c, const std::string& v) { c.hrm.eval_states = parse_eval_state_mode(v); }},
            {"halt_threshold",
             [](run_config& c, const std::string& v) {
               c.halt_threshold = parse_real("halt_threshold", v);
             }},
            {"cnn_widths",
             [](run_config& c, const std::string& v) { c.cnn_widths = parse_size_list("cnn_widths", v); }},
            {"cnn_convs_per_stage",
             [](run_config& c, const std::string& v) {
               c.cnn_convs_per_stage = parse_size("cnn_convs_per_stage", v);
             }},
            {"train_limit",
             [](run_config& c, const std::string& v) { c.train_limit = parse_size("train_limit", v); }},
            {"test_limit",
             [](run_config& c, const std::string& v) { c.test_limit = parse_size("test_limit", v); }},
            {"eval_every_epoch",
             [](run_config& c, const std::string& v) {
               c.eval_every_epoch = parse_switch("eval_every_epoch", v);
             }},
            {"wall_time",
             [](run_config& c, const std::string& v) { c.wall_time = parse_switch("wall_time", v); }},
            {"plot_window",
             [](run_config& c, const std::string& v) { c.plot_window = parse_size("plot_window", v); }},
            {"grid_tiles",
             [](run_config& c, const std::string& v) { c.grid_tiles = parse_size("grid_tiles", v); }},
            {"log_every",
             [](run_config& c, const std::string& v) { c.log_every = parse_size("log_every", v); }},
        };
    auto it = setters.find(key);
    if (it == setters.end()) throw config_error("unknown configuration key '" + key + "'");
    it->second(*this, v);
  }

  // Defaults for the model/dataset named in `kv` (hrm/mnist when absent),
  // then every entry of `kv` applied on top.
  static run_config resolve(const key_values& kv) {
    const auto m = kv.count("model") ? parse_model_kind(kv.at("model")) : model_kind::hrm;
    const auto d = kv.count("dataset") ? parse_dataset_kind(kv.at("dataset")) : dataset_kind::mnist;
    auto c = defaults(m, d);
    for (const auto& [k, v] : kv) c.apply(k, v);
    c.validate();
    return c;
  }

  key_values to_key_values() const {
    key_values kv;
    auto real = [](double v) { return format_g6(v); };
    kv["model"] = to_string(model);
    kv["dataset"] = to_string(data);
    kv["epochs"] = std::to_string(epochs);
    kv["seed"] = std::to_string(seed);
    kv["data_dir"] = data_dir.string();
    kv["out_dir"] = out_dir.string();
    kv["batch_size"] = std::to_string(batch_size);
    kv["lr"] = real(lr);
    kv["weight_decay"] = real(weight_decay);
    kv["adam_beta1"] = real(beta1);
    kv["adam_beta2"] = real(beta2);
    kv["adam_eps"] = real(adam_eps);
    kv["clip_norm"] = real(clip_norm);
    kv["label_smoothing"] = real(label_smoothing);
    kv["warmup_epochs"] = std::to_string(warmup_epochs);
    kv["lr_floor"] = real(lr_floor);
    kv["schedule_unit"] = to_string(unit);
    kv["image_size"] = std::to_string(hrm.image_height);
    kv["channels"] = std::to_string(hrm.channels);
    kv["classes"] = std::to_string(hrm.classes);
    kv["patch"] = std::to_string(hrm.patch);
    kv["d_model"] = std::to_string(hrm.low.d_model);
    kv["n_heads"] = std::to_string(hrm.low.n_heads);
    kv["mlp_mult"] = std::to_string(hrm.low.mlp_mult);
    kv["low_layers"] = std::to_string(hrm.low.n_layers);
    kv["high_layers"] = std::to_string(hrm.high.n_layers);
    kv["norm"] = to_string(hrm.low.norm);
    kv["init"] = to_string(hrm.low.init);
    kv["n_cycles"] = std::to_string(hrm.n_cycles);
    kv["t_micro"] = std::to_string(hrm.t_micro);
    kv["m_train"] = std::to_string(hrm.m_train);
    kv["m_eval"] = std::to_string(hrm.m_eval);
    kv["state_seed"] = std::to_string(hrm.state_seed);
    kv["eval_states"] = to_string(hrm.eval_states);
    kv["halt_threshold"] = real(halt_threshold);
    kv["cnn_widths"] = detail::join(cnn_widths);
    kv["cnn_convs_per_stage"] = std::to_string(cnn_convs_per_stage);
    kv["train_limit"] = std::to_string(train_limit);
    kv["test_limit"] = std::to_string(test_limit);
    kv["eval_every_epoch"] = eval_every_epoch ? "on" : "off";
    kv["wall_time"] = wall_time ? "on" : "off";
    kv["plot_window"] = std::to_string(plot_window);
    kv["grid_tiles"] = std::to_string(grid_tiles);
    kv["log_every"] = std::to_string(log_every);
    return kv;
  }

  void validate() const {
    if (batch_size == 0) throw config_error("batch_size must be positive");
    if (!(lr > 0.0)) throw config_error("lr must be positive");
    if (!(clip_norm > 0.0)) throw config_error("clip_norm must be positive");
    if (label_smoothing < 0.0 || label_smoothing >= 1.0)
      throw config_error("label_smoothing must lie in [0, 1)");
    if (plot_window == 0) throw config_error("plot_window must be at least 1");
    if (halt_threshold < 0.0) throw config_error("halt_threshold must be non-negative");
    if (model == model_kind::hrm) hrm_model_config().validate();
    else cnn_model_config().validate();
  }
};

inline std::filesystem::path dataset_dir(const run_config& c) {
  switch (c.data) {
    case dataset_kind::mnist: return c.data_dir / "mnist";
    case dataset_kind::cifar10: return c.data_dir / "cifar-10-batches-bin";
    default: return c.data_dir / "cifar-100-binary";
  }
}

inline dataset load_split(const run_config& c, split tag) {
  const auto dir = dataset_dir(c);
  dataset d = c.data == dataset_kind::mnist
                  ? load_mnist(dir, tag)
                  : load_cifar(dir, c.data == dataset_kind::cifar10 ? cifar_variant::c10
                                                                    : cifar_variant::c100,
                               tag);
  truncate(d, tag == split::train ? c.train_limit : c.test_limit);
  return d;
}

// Uniform face over the two model families used by the training loop.
class trainable {
 public:
  struct batch_result {
    std::vector<segment_record> steps;
    std::vector<int> predictions;
  };

  virtual ~trainable() = default;
  virtual parameter_list<float> parameters() const = 0;
  virtual parameter_list<float> buffers() const { return {}; }
  // Schedule steps consumed by one batch.
  virtual std::size_t steps_per_batch() const = 0;
  virtual batch_result train_batch(const batch<float>& b, adamw<float>& opt,
                                   const std::function<double()>& next_lr) = 0;
  virtual std::vector<int> predict(const basic_tensor<float>& images, std::uint64_t batch_index) = 0;
};

class hrm_trainable final : public trainable {
 public:
  explicit hrm_trainable(const run_config& c) : cfg_(c), model_(c.hrm_model_config()) {}

  hrm_model<float>& model() { return model_; }
  parameter_list<float> parameters() const override { return model_.parameters(); }
  parameter_list<float> buffers() const override {
    return {{"halting.weight", model_.halting().weight}};
  }

  std::size_t steps_per_batch() const override {
    return cfg_.unit == schedule_unit::segment ? cfg_.hrm.m_train : 1;
  }

  batch_result train_batch(const batch<float>& b, adamw<float>& opt,
                           const std::function<double()>& next_lr) override {
    std::function<double()> lr = next_lr;
    if (cfg_.unit == schedule_unit::batch) {
      const double shared = next_lr();
      lr = [shared] { return shared; };
    }
    auto r = deep_supervised_step<float>(model_, b.images, b.labels, opt, lr, cfg_.label_smoothing,
                                         cfg_.clip_norm);
    return {std::move(r.segments), argmax_rows(r.final_logits)};
  }

  std::vector<int> predict(const basic_tensor<float>& images, std::uint64_t batch_index) override {
    std::optional<double> cap;
    if (cfg_.halt_threshold > 0.0) cap = cfg_.halt_threshold;
    return model_.evaluate(images, batch_index, cap).predictions;
  }

 private:
  run_config cfg_;
  hrm_model<float> model_;
};

class cnn_trainable final : public trainable {
 public:
  explicit cnn_trainable(const run_config& c) : cfg_(c), model_(c.cnn_model_config()) {}

  cnn_model<float>& model() { return model_; }
  parameter_list<float> parameters() const override { return model_.parameters(); }
  parameter_list<float> buffers() const override { return model_.buffers(); }
  std::size_t steps_per_batch() const override { return 1; }

  batch_result train_batch(const batch<float>& b, adamw<float>& opt,
                           const std::function<double()>& next_lr) override {
    const auto params = model_.parameters();
    segment_record rec;
    rec.segment = 1;
    std::vector<int> preds;
    {
      grad_tape<float> tape;
      auto logits = model_(b.images, bn_mode::train);
      auto loss = label_smoothed_ce(logits, b.labels, cfg_.label_smoothing);
      rec.loss = loss.item();
      if (!std::isfinite(rec.loss)) throw numeric_error("non-finite loss");
      tape.backward(loss);
      preds = argmax_rows(logits);
    }
    rec.grad_norm = clip_global_norm(params, cfg_.clip_norm);
    rec.lr = next_lr();
    opt.step(params, rec.lr);
    opt.zero_grad(params);
    return {{rec}, std::move(preds)};
  }

  std::vector<int> predict(const basic_tensor<float>& images, std::uint64_t) override {
    no_grad guard;
    return argmax_rows(model_(images, bn_mode::eval));
  }

 private:
  run_config cfg_;
  cnn_model<float> model_;
};

inline std::unique_ptr<trainable> make_trainable(const run_config& c) {
  if (c.model == model_kind::hrm) return std::make_unique<hrm_trainable>(c);
  return std::make_unique<cnn_trainable>(c);
}

struct evaluation_result {
  std::vector<int> predictions;
  double accuracy = 0.0;
};

inline evaluation_result evaluate_split(trainable& model, const dataset& d, std::size_t batch_size) {
  evaluation_result r;
  r.predictions.reserve(d.size());
  const auto plan = batch_indices(d.size(), batch_size, 0, false);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    auto b = make_batch<float>(d, plan[i]);
    auto p = model.predict(b.images, i);
    r.predictions.insert(r.predictions.end(), p.begin(), p.end());
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.size(); ++i) correct += r.predictions[i] == d.labels[i];
  r.accuracy = d.size() ? static_cast<double>(correct) / static_cast<double>(d.size()) : 0.0;
  return r;
}

struct step_row {
  std::size_t step;
  std::size_t segment;
  double loss;
  double lr;
};

struct epoch_row {
  std::size_t epoch;
  double train_loss;
  double train_acc;
  std::optional<double> test_acc;
  double wall_seconds;
};

inline std::string steps_csv(const std::vector<step_row>& rows) {
  std::string out = "step,segment,loss,lr\n";
  for (const auto& r : rows)
    out += std::to_string(r.step) + ',' + std::to_string(r.segment) + ',' + format_g6(r.loss) +
           ',' + format_g6(r.lr) + '\n';
  return out;
}

inline std::string epochs_csv(const std::vector<epoch_row>& rows) {
  std::string out =
      "# train_loss: mean per-step segment loss; train_acc: final-segment logits\n"
      "epoch,train_loss,train_acc,test_acc,wall_seconds\n";
  for (const auto& r : rows)
    out += std::to_string(r.epoch) + ',' + format_g6(r.train_loss) + ',' + format_g6(r.train_acc) +
           ',' + (r.test_acc ? format_g6(*r.test_acc) : std::string()) + ',' +
           format_g6(r.wall_seconds) + '\n';
  return out;
}

struct run_result {
  std::size_t parameter_count = 0;
  double final_test_accuracy = 0.0;
  std::vector<step_row> steps;
  std::vector<epoch_row> epochs;
  std::filesystem::path checkpoint;
};

inline key_values checkpoint_meta(const run_config& c, const channel_stats& stats,
                                  std::size_t epoch) {
  auto kv = c.to_key_values();
  kv["epoch"] = std::to_string(epoch);
  for (std::size_t k = 0; k < stats.mean.size(); ++k) {
    std::ostringstream m, s;
    m.imbue(std::locale::classic());
    s.imbue(std::locale::classic());
    m.precision(17);
    s.precision(17);
    m << stats.mean[k];
    s << stats.stddev[k];
    kv["std_mean." + std::to_string(k)] = m.str();
    kv["std_stddev." + std::to_string(k)] = s.str();
  }
  return kv;
}

inline channel_stats stats_from_meta(const key_values& kv, std::size_t channels) {
  channel_stats s;
  for (std::size_t k = 0; k < channels; ++k) {
    const auto mk = "std_mean." + std::to_string(k), sk = "std_stddev." + std::to_string(k);
    if (!kv.count(mk) || !kv.count(sk))
      throw format_error("checkpoint lacks standardization statistics for channel " +
                         std::to_string(k));
    s.mean.push_back(detail::parse_real(mk, kv.at(mk)));
    s.stddev.push_back(detail::parse_real(sk, kv.at(sk)));
  }
  return s;
}

inline parameter_list<float> checkpoint_tensors(const trainable& m) {
  auto t = m.parameters();
  for (auto& b : m.buffers()) t.push_back(b);
  return t;
}

// Trains per the configuration and writes every artifact into out_dir.
// Progress lines go to `log`.
inline run_result run(const run_config& cfg, std::ostream& log) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  if (!fs::is_directory(cfg.out_dir)) throw io_error("cannot create " + cfg.out_dir.string());
  const auto snapshot = cfg.to_key_values();
  {
    std::string text;
    for (const auto& [k, v] : snapshot) text += k + '=' + v + '\n';
    write_text(cfg.out_dir / "config.txt", text);
  }

  dataset train = load_split(cfg, split::train);
  dataset test = load_split(cfg, split::test);
  if (train.height != cfg.hrm.image_height || train.channels != cfg.hrm.channels)
    throw config_error("dataset images are " + std::to_string(train.height) + "x" +
                       std::to_string(train.width) + "x" + std::to_string(train.channels) +
                       ", configuration expects " + std::to_string(cfg.hrm.image_height) + "x" +
                       std::to_string(cfg.hrm.image_width) + "x" + std::to_string(cfg.hrm.channels));
  const auto stats = compute_stats(train);
  standardize(train, stats);
  standardize(test, stats);

  auto model = make_trainable(cfg);
  const auto params = model->parameters();
  run_result result;
  result.parameter_count = parameter_count(params);
  log << "model " << to_string(cfg.model) << " on " << to_string(cfg.data) << ": "
      << result.parameter_count << " parameters, " << train.size() << " train / " << test.size()
      << " test examples\n";

  adamw<float> opt(params, {cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay});
  const std::size_t batches = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t per_epoch = batches * model->steps_per_batch();
  schedule_config sched{cfg.lr, std::min(cfg.warmup_epochs * per_epoch, cfg.epochs * per_epoch),
                        cfg.epochs * per_epoch, cfg.lr_floor};
  if (sched.warmup_steps == 0) sched.warmup_steps = std::min<std::size_t>(1, sched.total_steps);
  std::size_t schedule_step = 0;
  std::size_t global_step = 0;
  auto next_lr = [&] { return lr_at(schedule_step++, sched); };

  const fs::path manifest = cfg.out_dir / "checkpoint.txt";
  result.checkpoint = manifest;
  auto write_metrics = [&] {
    write_text(cfg.out_dir / "steps.csv", steps_csv(result.steps));
    write_text(cfg.out_dir / "epochs.csv", epochs_csv(result.epochs));
    std::vector<double> losses;
    for (const auto& s : result.steps) losses.push_back(s.loss);
    write_text(cfg.out_dir / "loss.svg",
               loss_plot_svg(losses, cfg.plot_window,
                             to_string(cfg.model) + " " + to_string(cfg.data) + " training loss"));
  };

  std::optional<evaluation_result> last_eval;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const auto plan = batch_indices(train.size(), cfg.batch_size, cfg.seed + epoch, true);
    double loss_sum = 0.0;
    std::size_t loss_n = 0, correct = 0, seen = 0;
    try {
      for (std::size_t bi = 0; bi < plan.size(); ++bi) {
        auto b = make_batch<float>(train, plan[bi]);
        auto r = model->train_batch(b, opt, next_lr);
        for (const auto& s : r.steps) {
          result.steps.push_back({global_step++, s.segment, s.loss, s.lr});
          loss_sum += s.loss * static_cast<double>(b.labels.size());
          loss_n += b.labels.size();
        }
        for (std::size_t i = 0; i < b.labels.size(); ++i) correct += r.predictions[i] == b.labels[i];
        seen += b.labels.size();
        if (cfg.log_every && (bi + 1) % cfg.log_every == 0)
          log << "epoch " << epoch << " batch " << bi + 1 << "/" << plan.size() << " loss "
              << format_g6(r.steps.back().loss) << " acc "
              << format_g6(static_cast<double>(correct) / static_cast<double>(seen)) << " lr "
              << format_g6(r.steps.back().lr) << std::endl;
      }
    } catch (const numeric_error& e) {
      write_metrics();
      throw numeric_error(std::string(e.what()) + " during epoch " + std::to_string(epoch) +
                          "; last good checkpoint kept at " + manifest.string());
    }
    epoch_row row{epoch, loss_sum / static_cast<double>(std::max<std::size_t>(loss_n, 1)),
                  static_cast<double>(correct) / static_cast<double>(std::max<std::size_t>(seen, 1)),
                  std::nullopt, 0.0};
    if (cfg.eval_every_epoch || epoch == cfg.epochs) {
      last_eval = evaluate_split(*model, test, cfg.batch_size);
      row.test_acc = last_eval->accuracy;
    }
    if (cfg.wall_time)
      row.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.epochs.push_back(row);
    log << "epoch " << epoch << " train_loss " << format_g6(row.train_loss) << " train_acc "
        << format_g6(row.train_acc) << " test_acc "
        << (row.test_acc ? format_g6(*row.test_acc) : std::string("-")) << std::endl;
    save_checkpoint(manifest, checkpoint_meta(cfg, stats, epoch), checkpoint_tensors(*model));
    write_metrics();
  }

  if (!last_eval) {
    last_eval = evaluate_split(*model, test, cfg.batch_size);
    save_checkpoint(manifest, checkpoint_meta(cfg, stats, 0), checkpoint_tensors(*model));
  }
  result.final_test_accuracy = last_eval->accuracy;
  write_metrics();
  write_text(cfg.out_dir / "errors.svg",
             error_grid_svg(test, stats,
                            collect_errors(last_eval->predictions, test.labels, cfg.grid_tiles)));
  log << "final test accuracy " << format_g6(result.final_test_accuracy) << "\n"
      << "parameters " << result.parameter_count << "\n";
  return result;
}

// Rebuilds the model recorded in a checkpoint and scores it on the test split
// of its dataset. `overrides` replace manifest keys (e.g. data_dir).
inline evaluation_result evaluate_checkpoint(const std::filesystem::path& manifest,
                                             const key_values& overrides, std::ostream& log) {
  const auto ck = load_checkpoint(manifest);
  key_values kv;
  for (const auto& [k, v] : ck.meta)
    if (k != "epoch" && k.rfind("std_", 0) != 0) kv[k] = v;
  for (const auto& [k, v] : overrides) kv[k] = v;
  const auto cfg = run_config::resolve(kv);
  auto model = make_trainable(cfg);
  restore_tensors(ck, checkpoint_tensors(*model));
  dataset test = load_split(cfg, split::test);
  standardize(test, stats_from_meta(ck.meta, test.channels));
  auto r = evaluate_split(*model, test, cfg.batch_size);
  log << "checkpoint " << manifest.string() << " (epoch " << ck.meta.at("epoch") << "): "
      << to_string(cfg.model) << " on " << to_string(cfg.data) << " test accuracy "
      << format_g6(r.accuracy) << " over " << test.size() << " examples\n";
  return r;
}

}  // namespace hrm
