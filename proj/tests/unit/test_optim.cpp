// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "pmae/error.hpp"
#include "pmae/optim.hpp"

using namespace pmae;

namespace {

ParamList<double> single(double value, bool decay = true, int layer = 0) {
  return {{"p", Tensor<double>({1}, {value}, true), decay, layer}};
}

}  // namespace

TEST(AdamW, FirstStepMovesByLearningRate) {
  auto params = single(1.0);
  AdamW<double> opt(params, AdamWConfig{0.9, 0.999, 1e-8, 0.0});
  params[0].tensor.mutable_grad()[0] = 1.0;
  opt.step(0.1);
  EXPECT_NEAR(params[0].tensor.values()[0], 1.0 - 0.1 / (1.0 + 1e-8), 1e-12);
  EXPECT_EQ(opt.step_count(), 1u);
}

TEST(AdamW, DecayOnlyStep) {
  auto params = single(2.0);
  AdamW<double> opt(params, AdamWConfig{0.9, 0.95, 1e-8, 0.05});
  params[0].tensor.mutable_grad()[0] = 0.0;
  opt.step(0.1);
  EXPECT_NEAR(params[0].tensor.values()[0], 2.0 * (1.0 - 0.005), 1e-15);
}

TEST(AdamW, NoDecayGroupSkipsDecay) {
  auto params = single(2.0, false);
  AdamW<double> opt(params, AdamWConfig{0.9, 0.95, 1e-8, 0.05});
  params[0].tensor.mutable_grad()[0] = 0.0;
  opt.step(0.1);
  EXPECT_EQ(params[0].tensor.values()[0], 2.0);
}

TEST(AdamW, IdenticalInputsIdenticalUpdates) {
  ParamList<double> params = {{"a", Tensor<double>({2}, {0.5, -1.0}, true)},
                              {"b", Tensor<double>({2}, {0.5, -1.0}, true)}};
  AdamW<double> opt(params, AdamWConfig{});
  for (int s = 0; s < 5; ++s) {
    for (auto& p : params) {
      p.tensor.mutable_grad()[0] = 0.3 * s;
      p.tensor.mutable_grad()[1] = -0.7;
    }
    opt.step(0.01);
    opt.zero_grad();
  }
  EXPECT_EQ(params[0].tensor.values()[0], params[1].tensor.values()[0]);
  EXPECT_EQ(params[0].tensor.values()[1], params[1].tensor.values()[1]);
}

TEST(AdamW, ConvergesOnQuadratic) {
  auto params = single(5.0);
  AdamW<double> opt(params, AdamWConfig{0.9, 0.999, 1e-8, 0.0});
  for (int s = 0; s < 2000; ++s) {
    auto& t = params[0].tensor;
    opt.zero_grad();
    backward(sum(mul(add(t, Tensor<double>({1}, {-3.0})), add(t, Tensor<double>({1}, {-3.0})))));
    opt.step(0.05);
  }
  EXPECT_NEAR(params[0].tensor.values()[0], 3.0, 1e-3);
}

TEST(AdamW, NonFiniteGradientLeavesStateUntouched) {
  ParamList<double> params = {{"a", Tensor<double>({1}, {1.0}, true)}, {"b", Tensor<double>({1}, {1.0}, true)}};
  AdamW<double> opt(params, AdamWConfig{});
  params[0].tensor.mutable_grad()[0] = 0.5;
  params[1].tensor.mutable_grad()[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(opt.step(0.1), NumericError);
  EXPECT_EQ(params[0].tensor.values()[0], 1.0);
  EXPECT_EQ(opt.step_count(), 0u);
  EXPECT_EQ(opt.first_moment(0)[0], 0.0);
  params[1].tensor.mutable_grad()[0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(opt.step(0.1), NumericError);
}

TEST(AdamW, AppliedLearningRateFollowsPlan) {
  ParamList<double> params = {{"embed", Tensor<double>({1}, {1.0}, true), true, 0},
                              {"b1", Tensor<double>({1}, {1.0}, true), true, 1},
                              {"head", Tensor<double>({1}, {1.0}, true), true, 5}};
  AdamW<double> opt(params, AdamWConfig{});
  for (auto& p : params) p.tensor.mutable_grad()[0] = 1.0;
  const auto plan = llrd_multipliers(4, 0.75);
  opt.step(2e-3, &plan);
  const auto& lr = opt.last_applied_lr();
  ASSERT_EQ(lr.size(), 3u);
  EXPECT_DOUBLE_EQ(lr[0], 2e-3 * 0.2373046875);
  EXPECT_DOUBLE_EQ(lr[1], 2e-3 * 0.31640625);
  EXPECT_DOUBLE_EQ(lr[2], 2e-3);
}

TEST(Llrd, PowersOfDecay) {
  const auto plan = llrd_multipliers(4, 0.75);
  ASSERT_EQ(plan.multipliers.size(), 6u);
  const double expect[] = {0.2373046875, 0.31640625, 0.421875, 0.5625, 0.75, 1.0};
  for (int i = 0; i < 6; ++i) EXPECT_EQ(plan.multiplier(i), expect[i]);
  for (double m : llrd_multipliers(4, 1.0).multipliers) EXPECT_EQ(m, 1.0);
  EXPECT_THROW(llrd_multipliers(4, 0.0), ConfigError);
}

TEST(Schedule, ScaledBaseLearningRate) {
  EXPECT_NEAR(scaled_base_lr(1.5e-4, 4096), 2.4e-3, 1e-18);
  EXPECT_EQ(scaled_base_lr(1.5e-4, 256), 1.5e-4);
  EXPECT_EQ(scaled_base_lr(1.5e-4, 128), 0.75e-4);
  EXPECT_THROW(scaled_base_lr(1.5e-4, 0), ConfigError);
}

TEST(Schedule, WarmupAndCosineEndpoints) {
  Schedule s{2e-3, 5.0, 50.0, 10, 0.0};
  EXPECT_EQ(s.total_steps(), 500u);
  EXPECT_EQ(cosine_warmup_lr(s, 0), 0.0);
  EXPECT_DOUBLE_EQ(cosine_warmup_lr(s, 25), 1e-3);
  EXPECT_DOUBLE_EQ(cosine_warmup_lr(s, 50), 2e-3);
  EXPECT_NEAR(cosine_warmup_lr(s, 275), 1e-3, 1e-15);
  EXPECT_NEAR(cosine_warmup_lr(s, 500), 0.0, 1e-18);
  EXPECT_THROW(cosine_warmup_lr(s, 501), ConfigError);

  Schedule floor{1e-3, 1.0, 4.0, 4, 1e-4};
  EXPECT_NEAR(cosine_warmup_lr(floor, 16), 1e-4, 1e-18);
  Schedule bad{1e-3, 4.0, 4.0, 4, 0.0};
  EXPECT_THROW(cosine_warmup_lr(bad, 0), ConfigError);
}

TEST(Schedule, MonotoneOnEachSide) {
  Schedule s{1.0, 3.0, 20.0, 7, 0.0};
  const auto w = static_cast<std::size_t>(s.warmup_steps());
  for (std::size_t t = 1; t <= w; ++t) EXPECT_GT(cosine_warmup_lr(s, t), cosine_warmup_lr(s, t - 1));
  for (std::size_t t = w + 1; t <= s.total_steps(); ++t) EXPECT_LT(cosine_warmup_lr(s, t), cosine_warmup_lr(s, t - 1));
}

TEST(Accumulation, FourTimesTwoMatchesBatchOfEight) {
  Rng rng(1);
  std::vector<double> xs(8 * 3), ys(8);
  for (auto& v : xs) v = standard_normal(rng);
  for (auto& v : ys) v = standard_normal(rng);
  auto make = [] {
    return ParamList<double>{{"w", Tensor<double>({3, 1}, {0.1, -0.2, 0.3}, true)},
                             {"b", Tensor<double>({1}, {0.05}, true), false}};
  };
  auto loss_on = [&](const ParamList<double>& p, std::size_t first, std::size_t count) {
    Tensor<double> x({count, 3}, std::vector<double>(xs.begin() + first * 3, xs.begin() + (first + count) * 3));
    Tensor<double> y({count, 1}, std::vector<double>(ys.begin() + first, ys.begin() + first + count));
    auto r = sub(add_bias(matmul(x, p[0].tensor), p[1].tensor), y);
    return mean(mul(r, r));
  };
  auto full = make();
  auto split = make();
  AdamW<double> a(full, AdamWConfig{});
  AdamW<double> b(split, AdamWConfig{});
  for (int s = 0; s < 3; ++s) {
    accumulate_gradients<double>(a, 1, [&](std::size_t) { return loss_on(full, 0, 8); }, 1e-2);
    accumulate_gradients<double>(b, 4, [&](std::size_t i) { return loss_on(split, 2 * i, 2); }, 1e-2);
  }
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < full[i].tensor.numel(); ++j) {
      EXPECT_NEAR(full[i].tensor.values()[j], split[i].tensor.values()[j], 1e-5);
    }
  }
}

TEST(Accumulation, SingleMicroBatchEqualsPlainStep) {
  auto p1 = single(1.0);
  auto p2 = single(1.0);
  AdamW<double> a(p1, AdamWConfig{});
  AdamW<double> b(p2, AdamWConfig{});
  accumulate_gradients<double>(a, 1, [&](std::size_t) { return sum(mul(p1[0].tensor, p1[0].tensor)); }, 0.1);
  backward(sum(mul(p2[0].tensor, p2[0].tensor)));
  b.step(0.1);
  EXPECT_EQ(p1[0].tensor.values()[0], p2[0].tensor.values()[0]);
}
