// Copyright 2026 The hrm-vision Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sstream>

#include "support.hpp"

using namespace hrm;
using namespace hrm::testing;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t count(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

// A small HRM on synthetic bar-coded digits.
run_config tiny_run(const std::filesystem::path& data, const std::filesystem::path& out) {
  key_values kv{{"model", "hrm"},       {"dataset", "mnist"},  {"epochs", "2"},
                {"seed", "3"},          {"batch_size", "16"},  {"train_limit", "48"},
                {"test_limit", "32"},   {"d_model", "16"},     {"n_heads", "2"},
                {"low_layers", "1"},    {"high_layers", "1"},  {"mlp_mult", "2"},
                {"patch", "7"},         {"wall_time", "off"},  {"log_every", "0"},
                {"lr", "0.003"}};
  kv["data_dir"] = data.string();
  kv["out_dir"] = out.string();
  return run_config::resolve(kv);
}

class SyntheticRun : public ::testing::Test {
 protected:
  void SetUp() override {
    write_synthetic_mnist(dir.path() / "data" / "mnist", "train", 48, 1);
    write_synthetic_mnist(dir.path() / "data" / "mnist", "t10k", 32, 2);
  }
  temp_dir dir{"run"};
};

}  // namespace

TEST(MovingAverage, HandValuesAndIdentities) {
  EXPECT_EQ(moving_average({1, 2, 3, 4}, 2), (std::vector<double>{1, 1.5, 2.5, 3.5}));
  EXPECT_EQ(moving_average({1, 2, 3, 4}, 1), (std::vector<double>{1, 2, 3, 4}));
  for (double v : moving_average(std::vector<double>(250, 0.75), 100)) EXPECT_NEAR(v, 0.75, 1e-15);
  EXPECT_EQ(moving_average({1, 2, 3}, 10), (std::vector<double>{1, 1.5, 2}));
  EXPECT_THROW(moving_average({1.0}, 0), contract_error);
}

TEST(ErrorGrid, TilesAreMisclassifiedAndCapped) {
  const std::vector<int> labels{0, 1, 2, 3, 4, 5}, preds{0, 2, 2, 1, 4, 0};
  auto tiles = collect_errors(preds, labels, 10);
  ASSERT_EQ(tiles.size(), 3u);
  for (const auto& t : tiles) {
    EXPECT_NE(t.truth, t.predicted);
    EXPECT_EQ(preds[t.index], t.predicted);
    EXPECT_EQ(labels[t.index], t.truth);
  }
  EXPECT_EQ(collect_errors(preds, labels, 2).size(), 2u);
  EXPECT_TRUE(collect_errors(labels, labels, 5).empty());

  dataset d;
  d.height = d.width = 2;
  d.channels = 1;
  d.labels = labels;
  d.pixels.assign(6 * 4, 0.5f);
  const channel_stats s{{0.0}, {1.0}};
  const auto svg = error_grid_svg(d, s, tiles);
  EXPECT_EQ(count(svg, "<g data-index"), 3u);
  EXPECT_NE(svg.find("T:3 P:1"), std::string::npos);
  EXPECT_NE(svg.find("data-true=\"1\" data-pred=\"2\""), std::string::npos);
  EXPECT_NE(error_grid_svg(d, s, {}).find("no misclassified examples"), std::string::npos);
}

TEST(LossPlot, RawAndSmoothedTraces) {
  const auto svg = loss_plot_svg({3, 2, 2.5, 1, 0.5}, 2, "t");
  EXPECT_EQ(count(svg, "<polyline"), 2u);
  EXPECT_NE(loss_plot_svg({}, 100, "t").find("no steps recorded"), std::string::npos);
}

TEST(Csv, HeadersAndSixSignificantDigits) {
  const auto steps = steps_csv({{0, 1, 2.302585093, 3.1981e-7}, {1, 2, 1.0, 0.0003}});
  EXPECT_EQ(lines(steps), (std::vector<std::string>{"step,segment,loss,lr", "0,1,2.30259,3.1981e-07",
                                                    "1,2,1,0.0003"}));
  const auto epochs = epochs_csv({{1, 0.5, 0.875, std::nullopt, 0.0}, {2, 0.25, 0.9, 0.98012345, 12.5}});
  const auto l = lines(epochs);
  ASSERT_EQ(l.size(), 4u);
  EXPECT_EQ(l[0].front(), '#');
  EXPECT_EQ(l[1], "epoch,train_loss,train_acc,test_acc,wall_seconds");
  EXPECT_EQ(l[2], "1,0.5,0.875,,0");
  EXPECT_EQ(l[3], "2,0.25,0.9,0.980123,12.5");
}

TEST(Config, DefaultsMatchTheProtocols) {
  auto m = run_config::defaults(model_kind::hrm, dataset_kind::mnist);
  EXPECT_EQ(m.epochs, 3u);
  EXPECT_EQ(m.batch_size, 128u);
  EXPECT_EQ(m.hrm.n_cycles, 2u);
  EXPECT_EQ(m.hrm.t_micro, 3u);
  EXPECT_EQ(m.hrm.m_train, 2u);
  EXPECT_EQ(m.hrm.m_eval, 3u);
  EXPECT_EQ(m.hrm_model_config().parameter_count(), 1053056u);
  auto c = run_config::defaults(model_kind::hrm, dataset_kind::cifar10);
  EXPECT_EQ(c.epochs, 25u);
  EXPECT_EQ(c.hrm.low.d_model, 192u);
  EXPECT_EQ(c.hrm.low.n_heads, 6u);
  EXPECT_EQ(c.hrm.high.n_layers, 3u);
  EXPECT_EQ(c.hrm.sequence_length(), 65u);
  auto cnn = run_config::defaults(model_kind::cnn, dataset_kind::cifar100);
  EXPECT_EQ(cnn.cnn_model_config().parameter_count(), 273344u);
  EXPECT_DOUBLE_EQ(cnn.lr, 3e-4);
  EXPECT_DOUBLE_EQ(cnn.weight_decay, 5e-4);
  EXPECT_DOUBLE_EQ(cnn.label_smoothing, 0.05);
}

TEST(Config, FileOverridesAndErrors) {
  std::istringstream text("# comment\nmodel = cnn\ndataset=cifar10\n\nepochs=4\ncnn_widths=8,16\n");
  auto kv = parse_key_values(text, "inline");
  auto c = run_config::resolve(kv);
  EXPECT_EQ(c.model, model_kind::cnn);
  EXPECT_EQ(c.epochs, 4u);
  EXPECT_EQ(c.cnn_widths, (std::vector<std::size_t>{8, 16}));
  EXPECT_EQ(run_config::resolve(c.to_key_values()).to_key_values(), c.to_key_values());
  EXPECT_THROW(run_config::resolve({{"learning_rate", "1"}}), config_error);
  EXPECT_THROW(run_config::resolve({{"epochs", "-1"}}), config_error);
  EXPECT_THROW(run_config::resolve({{"lr", "fast"}}), config_error);
  EXPECT_THROW(run_config::resolve({{"d_model", "100"}, {"n_heads", "3"}}), config_error);
  EXPECT_THROW(run_config::resolve({{"norm", "middle"}}), config_error);
  std::istringstream bad("no equals sign here\n");
  EXPECT_THROW(parse_key_values(bad, "inline"), format_error);
}

TEST(Checkpoint, RoundTripAndCorruptionDetection) {
  temp_dir dir("ckpt");
  hrm_config cfg;
  cfg.low = {16, 2, 1, 2};
  cfg.high = cfg.low;
  hrm_model<float> a(cfg);
  cfg.init_seed = 99;
  hrm_model<float> b(cfg);
  const auto manifest = dir.path() / "checkpoint.txt";
  save_checkpoint(manifest, {{"epoch", "2"}}, a.all_parameters());
  auto ck = load_checkpoint(manifest);
  EXPECT_EQ(ck.meta.at("epoch"), "2");
  restore_tensors(ck, b.all_parameters());
  const auto pa = a.all_parameters(), pb = b.all_parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    ASSERT_EQ(pa[i].name, pb[i].name);
    EXPECT_TRUE(std::equal(pa[i].value.values().begin(), pa[i].value.values().end(),
                           pb[i].value.values().begin()));
  }
  EXPECT_THROW(restore_tensors(ck, a.parameters()), format_error);
  auto blob = slurp(dir.path() / "checkpoint.txt.bin");
  blob[5] ^= 0x40;
  write_bytes(dir.path() / "checkpoint.txt.bin", {blob.begin(), blob.end()});
  EXPECT_THROW(load_checkpoint(manifest), format_error);
  blob.pop_back();
  write_bytes(dir.path() / "checkpoint.txt.bin", {blob.begin(), blob.end()});
  EXPECT_THROW(load_checkpoint(manifest), format_error);
}

TEST_F(SyntheticRun, ArtifactsRowCountsAndReload) {
  const auto out = dir.path() / "out";
  auto cfg = tiny_run(dir.path() / "data", out);
  std::ostringstream log;
  auto r = run(cfg, log);
  EXPECT_EQ(r.steps.size(), 2u * 3u * 2u);  // epochs x batches x M_train
  for (std::size_t i = 0; i < r.steps.size(); ++i) EXPECT_EQ(r.steps[i].step, i);
  for (const char* f : {"config.txt", "steps.csv", "epochs.csv", "loss.svg", "errors.svg",
                        "checkpoint.txt", "checkpoint.txt.bin"})
    EXPECT_TRUE(std::filesystem::exists(out / f)) << f;
  EXPECT_EQ(lines(slurp(out / "steps.csv")).size(), 1u + 12u);
  EXPECT_EQ(lines(slurp(out / "epochs.csv")).size(), 2u + 2u);
  EXPECT_NE(log.str().find("parameters " + std::to_string(r.parameter_count)), std::string::npos);
  EXPECT_NE(log.str().find("final test accuracy"), std::string::npos);

  std::ostringstream eval_log;
  auto e = evaluate_checkpoint(out / "checkpoint.txt", {}, eval_log);
  EXPECT_DOUBLE_EQ(e.accuracy, r.final_test_accuracy);

  const auto errors = slurp(out / "errors.svg");
  const auto wrong = static_cast<std::size_t>(std::lround((1.0 - r.final_test_accuracy) * 32));
  EXPECT_EQ(count(errors, "<g data-index"), std::min<std::size_t>(wrong, 64));
}

TEST_F(SyntheticRun, SameSeedGivesByteIdenticalMetrics) {
  auto a = tiny_run(dir.path() / "data", dir.path() / "a");
  auto b = tiny_run(dir.path() / "data", dir.path() / "b");
  std::ostringstream log;
  run(a, log);
  run(b, log);
  EXPECT_EQ(slurp(dir.path() / "a" / "epochs.csv"), slurp(dir.path() / "b" / "epochs.csv"));
  EXPECT_EQ(slurp(dir.path() / "a" / "steps.csv"), slurp(dir.path() / "b" / "steps.csv"));
  auto c = tiny_run(dir.path() / "data", dir.path() / "c");
  c.seed = 4;
  run(c, log);
  EXPECT_NE(slurp(dir.path() / "a" / "steps.csv"), slurp(dir.path() / "c" / "steps.csv"));
}

TEST_F(SyntheticRun, ZeroEpochsEvaluatesUntrainedModel) {
  auto cfg = tiny_run(dir.path() / "data", dir.path() / "zero");
  cfg.epochs = 0;
  std::ostringstream log;
  auto r = run(cfg, log);
  EXPECT_TRUE(r.steps.empty());
  EXPECT_TRUE(r.epochs.empty());
  EXPECT_EQ(lines(slurp(dir.path() / "zero" / "steps.csv")).size(), 1u);
  EXPECT_LE(r.final_test_accuracy, 0.5);
}

TEST_F(SyntheticRun, CnnOnSyntheticDigits) {
  key_values kv{{"model", "cnn"},      {"dataset", "mnist"},     {"epochs", "1"},
                {"batch_size", "16"},  {"cnn_widths", "4,8"},    {"wall_time", "off"},
                {"log_every", "0"}};
  kv["data_dir"] = (dir.path() / "data").string();
  kv["out_dir"] = (dir.path() / "cnn").string();
  auto cfg = run_config::resolve(kv);
  std::ostringstream log;
  auto r = run(cfg, log);
  EXPECT_EQ(r.steps.size(), 3u);
  EXPECT_EQ(r.parameter_count, cfg.cnn_model_config().parameter_count());
  std::ostringstream eval_log;
  EXPECT_DOUBLE_EQ(evaluate_checkpoint(dir.path() / "cnn" / "checkpoint.txt", {}, eval_log).accuracy,
                   r.final_test_accuracy);
}

TEST_F(SyntheticRun, MissingDataNamesTheExpectedFiles) {
  auto cfg = tiny_run(dir.path() / "nowhere", dir.path() / "out");
  std::ostringstream log;
  try {
    run(cfg, log);
    FAIL() << "expected data_error";
  } catch (const data_error& e) {
    EXPECT_NE(std::string(e.what()).find("train-images-idx3-ubyte"), std::string::npos);
  }
}

TEST(Pipeline, NoAugmentationBatchesAreVerbatimStandardizedPixels) {
  temp_dir dir("noaug");
  write_synthetic_mnist(dir.path() / "mnist", "train", 40, 4);
  run_config cfg = run_config::defaults(model_kind::hrm, dataset_kind::mnist);
  cfg.data_dir = dir.path();
  auto d = load_split(cfg, split::train);
  auto reference = d;
  const auto s = compute_stats(d);
  standardize(d, s);
  const auto plan = batch_indices(d.size(), 16, 1, true);
  for (const auto& idx : plan) {
    auto b = make_batch<float>(d, idx);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t p = 0; p < 784; ++p) {
        const double expect = (reference.pixels[idx[i] * 784 + p] - s.mean[0]) / s.stddev[0];
        ASSERT_NEAR(b.images.at(i * 784 + p), expect, 1e-5);
      }
  }
}
