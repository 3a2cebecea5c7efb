// Copyright 2026 The hrm-vision Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "hrm_oracle.hpp"

using namespace hrm;
using namespace hrm::testing;

namespace {

std::vector<double> vec(const tensor64& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST(InitStates, RangeDeterminismAndIndependence) {
  auto a = init_states<double>(8, 25, 50, 3);
  auto b = init_states<double>(8, 25, 50, 3);
  EXPECT_EQ(vec(a.z_low), vec(b.z_low));
  EXPECT_EQ(vec(a.z_high), vec(b.z_high));
  const auto l = vec(a.z_low), h = vec(a.z_high);
  ASSERT_EQ(l.size(), 10000u);
  for (std::size_t i = 0; i < l.size(); ++i) {
    ASSERT_LE(std::abs(l[i]), 2.0);
    ASSERT_LE(std::abs(h[i]), 2.0);
  }
  double ml = 0, mh = 0;
  for (std::size_t i = 0; i < l.size(); ++i) ml += l[i], mh += h[i];
  ml /= l.size();
  mh /= h.size();
  double cov = 0, vl = 0, vh = 0;
  for (std::size_t i = 0; i < l.size(); ++i) {
    cov += (l[i] - ml) * (h[i] - mh);
    vl += (l[i] - ml) * (l[i] - ml);
    vh += (h[i] - mh) * (h[i] - mh);
  }
  EXPECT_LT(std::abs(cov / std::sqrt(vl * vh)), 0.05);
  auto other = init_states<double>(8, 25, 50, 4);
  EXPECT_NE(vec(other.z_low), l);
}

TEST(InitStates, SmallerBatchIsPrefixAndCacheIsStable) {
  auto big = init_states<float>(4, 3, 8, 9), small = init_states<float>(2, 3, 8, 9);
  for (std::size_t i = 0; i < small.z_low.size(); ++i) EXPECT_EQ(small.z_low.at(i), big.z_low.at(i));
  hrm_model<double> m(tiny(2, 2));
  auto s1 = m.initial_state(2), s2 = m.initial_state(2);
  EXPECT_EQ(s1.z_low.ptr(), s2.z_low.ptr());
  EXPECT_FALSE(s1.z_low.requires_grad());
}

TEST(Steps, LowAndHighMatchComposedOracleBitForBit) {
  hrm_model<double> m(tiny(2, 3));
  auto s = m.initial_state(2);
  auto x = m.tokenize(random64({2, 2, 4, 1}, 1));
  EXPECT_EQ(vec(m.low_step(s, x)), vec(m.low_module()(add(add(s.z_low, s.z_high), x))));
  EXPECT_EQ(vec(m.high_step(s)), vec(m.high_module()(add(s.z_high, s.z_low))));
  EXPECT_EQ(m.low_step(s, x).shape(), x.shape());
}

TEST(Steps, IdentityEncodersReduceToElementwiseFusion) {
  hrm_model<double> m(tiny(2, 3));
  for (auto* stack : {&m.low_module(), &m.high_module()})
    for (auto& l : stack->layers()) {
      for (double& v : l.w_o.data()) v = 0;
      for (double& v : l.w_out.data()) v = 0;
    }
  auto s = m.initial_state(2);
  auto x = m.tokenize(random64({2, 2, 4, 1}, 2));
  const auto zl = vec(m.low_step(s, x)), zh = vec(m.high_step(s));
  for (std::size_t i = 0; i < zl.size(); ++i) {
    EXPECT_DOUBLE_EQ(zl[i], s.z_low.at(i) + s.z_high.at(i) + x.at(i));
    EXPECT_DOUBLE_EQ(zh[i], s.z_high.at(i) + s.z_low.at(i));
  }
}

TEST(Steps, ShapeMismatchIsAConfigError) {
  hrm_model<double> m(tiny(2, 3));
  auto s = m.initial_state(2);
  EXPECT_THROW(m.low_step(s, m.tokenize(random64({3, 2, 4, 1}, 3))), config_error);
  hrm_state<double> bad{s.z_low, init_states<double>(1, 3, 8, 1).z_high};
  EXPECT_THROW(m.high_step(bad), config_error);
}

TEST(Segment, CallsPerSegmentAreNTimesTAndN) {
  hrm_config cfg;
  cfg.low = {16, 2, 1, 2};
  cfg.high = cfg.low;
  hrm_model<float> m(cfg);
  auto x = m.tokenize(cast<float>(random64({1, 28, 28, 1}, 4)));
  for (auto mode : {segment_mode::train, segment_mode::eval}) {
    m.reset_calls();
    grad_tape<float> tape;
    m.run_segment(m.initial_state(1), x, mode);
    EXPECT_EQ(m.calls().low, 6u);
    EXPECT_EQ(m.calls().high, 2u);
  }
}

TEST(Segment, OneStepGradientMatchesConstantSubstitutionOracle) {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    auto cfg = tiny(2, 2);
    cfg.init_seed = seed;
    hrm_model<double> m(cfg);
    auto images = random64({2, 2, 4, 1}, seed + 100);
    auto s0 = m.initial_state(2);
    ASSERT_EQ(s0.z_low.extent(1), 3u);
    const auto expected = constant_substitution_grads(m, images, s0);
    const auto actual = segment_grads(m, images, s0);
    EXPECT_LT(worst_relative(actual, expected), 1e-6) << "seed " << seed;
  }
}

TEST(Segment, SingleCycleSingleStepIsFullBackprop) {
  hrm_model<double> m(tiny(1, 1));
  auto images = random64({2, 2, 4, 1}, 21);
  auto s0 = m.initial_state(2);
  auto params = trainable_values(m);
  zero(params);
  {
    grad_tape<double> tape;
    auto x = m.tokenize(images);
    auto zl = m.low_module()(add(add(s0.z_low, s0.z_high), x));
    auto zh = m.high_module()(add(s0.z_high, zl));
    tape.backward(label_smoothed_ce(m.head()(zh), labels2, 0.05));
  }
  const auto full = grads_of(params);
  EXPECT_LT(worst_relative(segment_grads(m, images, s0), full), 1e-12);
}

TEST(Segment, OneStepGradientDiffersFromFullUnroll) {
  hrm_model<double> m(tiny(2, 2));
  auto images = random64({2, 2, 4, 1}, 22);
  auto s0 = m.initial_state(2);
  auto params = trainable_values(m);
  zero(params);
  {
    grad_tape<double> tape;
    auto x = m.tokenize(images);
    auto zl = s0.z_low, zh = s0.z_high;
    for (int i = 0; i < 2; ++i) {
      for (int t = 0; t < 2; ++t) zl = m.low_module()(add(add(zl, zh), x));
      zh = m.high_module()(add(zh, zl));
    }
    tape.backward(label_smoothed_ce(m.head()(zh), labels2, 0.05));
  }
  EXPECT_GT(worst_relative(segment_grads(m, images, s0), grads_of(params)), 1e-3);
}

TEST(Segment, TapeSizeIsIndependentOfScheduleLength) {
  std::vector<std::size_t> sizes;
  for (auto [n, t] : {std::pair<std::size_t, std::size_t>{1, 1}, {2, 3}, {4, 5}}) {
    hrm_model<double> m(tiny(n, t));
    auto x = m.tokenize(random64({2, 2, 4, 1}, 23));
    grad_tape<double> tape;
    const auto before = tape.size();
    m.run_segment(m.initial_state(2), x, segment_mode::train);
    sizes.push_back(tape.size() - before);
  }
  EXPECT_EQ(sizes[0], sizes[1]);
  EXPECT_EQ(sizes[1], sizes[2]);
}

TEST(Segment, EvalModeRecordsNothingAndMatchesTrainValues) {
  hrm_model<double> m(tiny(2, 3));
  auto x = m.tokenize(random64({2, 2, 4, 1}, 24));
  grad_tape<double> tape;
  auto s = m.initial_state(2);
  const auto base = tape.size();
  auto e = m.run_segment(s, stop_gradient(x), segment_mode::eval);
  EXPECT_EQ(tape.size(), base);
  auto t = m.run_segment(s, x, segment_mode::train);
  EXPECT_EQ(vec(e.logits), vec(t.logits));
  EXPECT_EQ(vec(e.state.z_high), vec(t.state.z_high));
}

TEST(Segment, AttachedStateIsRejectedAndOutputStateIsDetached) {
  hrm_model<double> m(tiny(2, 2));
  auto x = m.tokenize(random64({2, 2, 4, 1}, 25));
  grad_tape<double> tape;
  auto out = m.run_segment(m.initial_state(2), x, segment_mode::train);
  EXPECT_FALSE(out.state.z_low.requires_grad());
  EXPECT_FALSE(out.state.z_high.requires_grad());
  auto attached = m.low_step(m.initial_state(2), x);
  ASSERT_TRUE(attached.requires_grad());
  EXPECT_THROW(m.run_segment({attached, out.state.z_high}, x, segment_mode::train), contract_error);
  auto again = m.run_segment(out.state, x, segment_mode::train);
  EXPECT_EQ(again.state.z_low.shape(), out.state.z_low.shape());
}

TEST(Segment, PerturbingEarlierSegmentActivationsLeavesGradientsUnchanged) {
  hrm_model<double> m(tiny(2, 2));
  auto images = random64({2, 2, 4, 1}, 26);
  hrm_state<double> carry;
  tensor64 seg1_logits;
  {
    grad_tape<double> tape;
    auto out = m.run_segment(m.initial_state(2), m.tokenize(images), segment_mode::train);
    carry = out.state;
    seg1_logits = out.logits;
  }
  const auto g1 = segment_grads(m, images, carry);
  for (double& v : seg1_logits.data()) v += 1e3;
  const auto g2 = segment_grads(m, images, carry);
  EXPECT_EQ(g1, g2);
  auto moved = carry;
  moved.z_high = carry.z_high.clone();
  moved.z_high.data()[0] += 0.5;
  EXPECT_NE(segment_grads(m, images, moved), g1);
}

TEST(DeepSupervision, TwoOptimizerStepsAndZeroLrReplay) {
  hrm_model<double> m(tiny(2, 3));
  auto images = random64({2, 2, 4, 1}, 27);
  const auto params = m.parameters();
  std::vector<std::vector<double>> before;
  for (const auto& p : params) before.emplace_back(p.value.values().begin(), p.value.values().end());
  adamw<double> opt(params);
  std::size_t calls = 0;
  auto res = deep_supervised_step(m, images, labels2, opt, [&] { ++calls; return 0.0; });
  EXPECT_EQ(calls, 2u);
  EXPECT_EQ(opt.steps(), 2u);
  ASSERT_EQ(res.segments.size(), 2u);
  for (std::size_t i = 0; i < params.size(); ++i) EXPECT_EQ(vec(params[i].value), before[i]);

  auto x = m.tokenize(images);
  auto s1 = m.run_segment(m.initial_state(2), x, segment_mode::eval);
  auto s2 = m.run_segment(s1.state, x, segment_mode::eval);
  EXPECT_EQ(vec(res.state.z_low), vec(s2.state.z_low));
  EXPECT_EQ(vec(res.state.z_high), vec(s2.state.z_high));
  EXPECT_EQ(vec(res.final_logits), vec(s2.logits));
  EXPECT_NEAR(res.segments[0].loss, label_smoothed_ce(s1.logits, labels2, 0.05).item(), 1e-12);
  EXPECT_NEAR(res.segments[1].loss, label_smoothed_ce(s2.logits, labels2, 0.05).item(), 1e-12);
}

TEST(DeepSupervision, ParametersMoveAndHaltingHeadIsFrozen) {
  hrm_model<double> m(tiny(2, 2));
  const auto halt_before = vec(m.halting().weight);
  const auto head_before = vec(m.head().weight);
  adamw<double> opt(m.parameters());
  deep_supervised_step(m, random64({2, 2, 4, 1}, 28), labels2, opt, [] { return 1e-2; });
  EXPECT_EQ(vec(m.halting().weight), halt_before);
  EXPECT_NE(vec(m.head().weight), head_before);
  for (const auto& p : m.all_parameters())
    for (double g : p.value.grad()) EXPECT_EQ(g, 0.0) << p.name;
}

TEST(DeepSupervision, OptimizerForAnotherModelIsAContractError) {
  hrm_model<double> m(tiny(2, 2));
  parameter_list<double> wrong{{"x", tensor64::parameter({1}, {0.0})}};
  adamw<double> opt(wrong);
  EXPECT_THROW(deep_supervised_step(m, random64({2, 2, 4, 1}, 29), labels2, opt, [] { return 1e-3; }),
               contract_error);
}

TEST(Evaluate, DeterministicAndAccuracyMatchesLoop) {
  hrm_model<double> m(tiny(2, 2));
  auto images = random64({5, 2, 4, 1}, 30);
  auto a = m.evaluate(images), b = m.evaluate(images, 7);
  EXPECT_EQ(vec(a.logits), vec(b.logits));
  EXPECT_EQ(a.predictions, b.predictions);
  for (std::size_t i = 0; i < 5; ++i) {
    int best = 0;
    for (int k = 1; k < 3; ++k)
      if (a.logits.at(i * 3 + k) > a.logits.at(i * 3 + best)) best = k;
    EXPECT_EQ(a.predictions[i], best);
  }
}

TEST(Evaluate, ChainsMEvalSegmentsAndSingleSegmentMatchesForward) {
  auto cfg = tiny(2, 2);
  cfg.m_eval = 1;
  hrm_model<double> one(cfg);
  auto images = random64({2, 2, 4, 1}, 31);
  auto seg = one.run_segment(one.initial_state(2), one.tokenize(images), segment_mode::eval);
  EXPECT_EQ(vec(one.evaluate(images).logits), vec(seg.logits));

  hrm_model<double> three(tiny(2, 2));
  three.reset_calls();
  auto r = three.evaluate(images);
  EXPECT_EQ(three.calls().low, 3u * 4u);
  auto s = three.initial_state(2);
  auto x = three.tokenize(images);
  segment_output<double> out;
  for (int i = 0; i < 3; ++i) s = (out = three.run_segment(s, x, segment_mode::eval)).state;
  EXPECT_EQ(vec(r.logits), vec(out.logits));
}

TEST(Evaluate, ResampledStatesDifferPerBatchButAreReproducible) {
  auto cfg = tiny(2, 2);
  cfg.eval_states = eval_state_mode::resample;
  hrm_model<double> m(cfg);
  auto images = random64({2, 2, 4, 1}, 32);
  EXPECT_EQ(vec(m.evaluate(images, 1).logits), vec(m.evaluate(images, 1).logits));
  EXPECT_NE(vec(m.evaluate(images, 1).logits), vec(m.evaluate(images, 2).logits));
}

TEST(Halting, RangeZeroWeightsAndThresholdOneIsFixedSchedule) {
  hrm_model<double> m(tiny(2, 2));
  auto z = random64({4, 3, 8}, 33, 3.0);
  for (double v : vec(m.halting_head(z))) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  auto images = random64({4, 2, 4, 1}, 34);
  auto fixed = m.evaluate(images);
  auto capped = m.evaluate(images, 0, 1.0);
  EXPECT_EQ(vec(fixed.logits), vec(capped.logits));
  EXPECT_EQ(fixed.predictions, capped.predictions);
  for (auto n : capped.segments_used) EXPECT_EQ(n, 3u);

  for (double& w : m.halting().weight.data()) w = 0.0;
  for (double v : vec(m.halting_head(z))) EXPECT_EQ(v, 0.5);
  auto early = m.evaluate(images, 0, 0.4);
  for (auto n : early.segments_used) EXPECT_EQ(n, 1u);
  auto seg = m.run_segment(m.initial_state(4), m.tokenize(images), segment_mode::eval);
  EXPECT_EQ(vec(early.logits), vec(seg.logits));
}

TEST(Config, ValidationRejectsBadSchedules) {
  auto cfg = tiny(2, 2);
  cfg.n_cycles = 0;
  EXPECT_THROW(hrm_model<double>{cfg}, config_error);
  cfg = tiny(2, 2);
  cfg.high.d_model = 16;
  EXPECT_THROW(hrm_model<double>{cfg}, config_error);
  cfg = tiny(2, 2);
  cfg.image_width = 5;
  EXPECT_THROW(hrm_model<double>{cfg}, config_error);
  EXPECT_THROW(parse_eval_state_mode("sometimes"), config_error);
}

TEST(Config, ParameterCountExcludesHaltingHead) {
  hrm_model<float> m(hrm_config{});
  EXPECT_EQ(parameter_count(m.parameters()), 1053056u);
  EXPECT_EQ(parameter_count(m.all_parameters()), 1053056u + 128u * 2u);
}
