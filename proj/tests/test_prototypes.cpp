#include <gtest/gtest.h>

#include "oracles.hpp"
#include "tcsa/common.hpp"
#include "tcsa/prototypes.hpp"

using namespace tcsa;
using namespace tcsa::proto;

namespace {

ClassMeans means_of(std::vector<int64_t> present, torch::Tensor rows) {
  ClassMeans m;
  m.present = std::move(present);
  m.means = std::move(rows);
  return m;
}

}  // namespace

TEST(PseudoLabels, ArgmaxWithLowestIndexOnTies) {
  auto probs = torch::zeros({1, 3, 1, 3});
  probs[0][1][0][0] = 0.7;
  probs[0][0][0][0] = 0.3;
  probs[0][0][0][1] = 0.5;
  probs[0][2][0][1] = 0.5;
  probs.select(3, 2).fill_(1.0 / 3.0);
  auto y = pseudo_labels(probs);
  EXPECT_EQ(y[0][0][0].item<int64_t>(), 1);
  EXPECT_EQ(y[0][0][1].item<int64_t>(), 0);
  EXPECT_EQ(y[0][0][2].item<int64_t>(), 0);
}

TEST(PseudoLabels, ThresholdMarksIgnored) {
  auto probs = torch::zeros({1, 2, 1, 2});
  probs[0][0][0][0] = 0.95;
  probs[0][1][0][0] = 0.05;
  probs[0][0][0][1] = 0.55;
  probs[0][1][0][1] = 0.45;
  auto y = pseudo_labels(probs, 0.9, -1);
  EXPECT_EQ(y[0][0][0].item<int64_t>(), 0);
  EXPECT_EQ(y[0][0][1].item<int64_t>(), -1);
}

TEST(BatchPrototypes, MatchOracleAndIgnoreInvalidPixels) {
  torch::manual_seed(1);
  auto f = torch::randn({2, 8, 3, 3}, torch::kDouble);
  auto y = torch::randint(-1, 4, {2, 3, 3}, torch::kLong);
  auto got = batch_prototypes(f, y, 4);
  auto expected = oracle::class_means(f, y, 4);
  ASSERT_EQ(got.present.size(), expected.size());
  size_t k = 0;
  for (const auto& [c, mean] : expected) {
    EXPECT_EQ(got.present[k], c);
    for (size_t d = 0; d < mean.size(); ++d)
      EXPECT_NEAR(got.means[static_cast<int64_t>(k)][static_cast<int64_t>(d)].item<double>(), mean[d], 1e-12);
    ++k;
  }
}

TEST(Ema, LiteralMomentumKeepsBetaOfHistory) {
  PrototypeState s(2, 3, torch::kDouble);
  ema_update(s, Domain::Source, means_of({0}, torch::full({1, 3}, 1.0, torch::kDouble)), 0.01);
  EXPECT_TRUE(s.source_init[0]);
  EXPECT_FALSE(s.source_init[1]);
  EXPECT_FALSE(s.target_init[0]);
  ema_update(s, Domain::Source, means_of({0}, torch::full({1, 3}, 3.0, torch::kDouble)), 0.01);
  auto expected = oracle::ema({1, 1, 1}, {3, 3, 3}, 0.01);
  for (int64_t d = 0; d < 3; ++d) EXPECT_NEAR(s.source[0][d].item<double>(), expected[d], 1e-12);
  EXPECT_EQ(s.source[1].abs().sum().item<double>(), 0.0);
}

TEST(Ema, SwapMomentumKeepsOneMinusBeta) {
  EXPECT_EQ(history_weight(0.01, false), 0.01);
  EXPECT_EQ(history_weight(0.01, true), 0.99);
  PrototypeState s(1, 2, torch::kDouble);
  ema_update(s, Domain::Target, means_of({0}, torch::zeros({1, 2}, torch::kDouble)), 0.01, true);
  ema_update(s, Domain::Target, means_of({0}, torch::ones({1, 2}, torch::kDouble)), 0.01, true);
  EXPECT_NEAR(s.target[0][0].item<double>(), 0.01, 1e-12);
}

TEST(Ema, BetaOutOfRangeRejected) {
  PrototypeState s(1, 2);
  auto b = means_of({0}, torch::zeros({1, 2}));
  EXPECT_THROW(ema_update(s, Domain::Source, b, 1.01), ConfigError);
  EXPECT_THROW(current_prototypes(s, Domain::Source, b, -0.5), ConfigError);
}

TEST(Ema, ConvexHullProperty) {
  PrototypeState s(1, 1, torch::kDouble);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (double beta : {0.0, 0.01, 0.5, 0.99, 1.0}) {
    s = PrototypeState(1, 1, torch::kDouble);
    double lo = 1e9, hi = -1e9;
    for (int i = 0; i < 30; ++i) {
      const double x = u(rng);
      lo = std::min(lo, x);
      hi = std::max(hi, x);
      ema_update(s, Domain::Source, means_of({0}, torch::full({1, 1}, x, torch::kDouble)), beta);
      const double v = s.source[0][0].item<double>();
      EXPECT_GE(v, lo - 1e-12) << beta;
      EXPECT_LE(v, hi + 1e-12) << beta;
    }
  }
}

TEST(CurrentPrototypes, GradientThroughBatchTermOnly) {
  PrototypeState s(3, 2, torch::kDouble);
  s.source.fill_(5.0);
  s.source_init = {true, true, false};
  auto rows = torch::ones({2, 2}, torch::kDouble).requires_grad_(true);
  auto cur = current_prototypes(s, Domain::Source, means_of({1, 2}, rows), 0.01);
  EXPECT_NEAR(cur[0][0].item<double>(), 5.0, 1e-12);
  EXPECT_NEAR(cur[1][0].item<double>(), 0.01 * 5.0 + 0.99, 1e-12);
  EXPECT_NEAR(cur[2][0].item<double>(), 1.0, 1e-12);
  cur.sum().backward();
  EXPECT_NEAR(rows.grad()[0][0].item<double>(), 0.99, 1e-12);
  EXPECT_NEAR(rows.grad()[1][0].item<double>(), 1.0, 1e-12);
  auto init = initialized_after(s, Domain::Source, means_of({1, 2}, rows));
  EXPECT_EQ(init, (std::vector<bool>{true, true, true}));
}

TEST(ProtoLoss, SumOverCommonClassesMatchesOracle) {
  torch::manual_seed(2);
  auto zs = torch::randn({4, 6}, torch::kDouble);
  auto zt = torch::randn({4, 6}, torch::kDouble);
  const std::vector<bool> si{true, true, false, true}, ti{true, false, true, true};
  auto r = proto_loss(zs, si, zt, ti);
  EXPECT_FALSE(r.skipped);
  EXPECT_EQ(r.common_classes, 2);
  EXPECT_NEAR(r.value.item<double>(), oracle::proto_loss(oracle::rows_of(zs), si, oracle::rows_of(zt), ti), 1e-12);
}

TEST(ProtoLoss, SkippedWhenNoCommonClass) {
  auto r = proto_loss(torch::ones({2, 3}), {true, false}, torch::zeros({2, 3}), {false, true});
  EXPECT_TRUE(r.skipped);
  EXPECT_EQ(r.value.item<float>(), 0.0f);
}

TEST(ProtoLoss, ZeroForIdenticalPrototypesAndGradientMatches) {
  torch::manual_seed(3);
  auto z = torch::randn({3, 5}, torch::kDouble);
  std::vector<bool> all(3, true);
  EXPECT_EQ(proto_loss(z, all, z.clone(), all).value.item<double>(), 0.0);
  auto f = torch::randn({2, 5, 3, 3}, torch::kDouble).requires_grad_(true);
  auto y = torch::randint(0, 3, {2, 3, 3}, torch::kLong);
  PrototypeState s(3, 5, torch::kDouble);
  s.target = torch::randn({3, 5}, torch::kDouble);
  s.target_init = all;
  s.source_init = {true, false, true};
  auto loss = [&] {
    auto cur = current_prototypes(s, Domain::Source, batch_prototypes(f, y, 3), 0.01);
    return proto_loss(cur, initialized_after(s, Domain::Source, batch_prototypes(f, y, 3)), s.target, all).value;
  };
  double worst = 0;
  EXPECT_TRUE(oracle::gradients_match(oracle::gradient_samples(loss, f, 20, 4, 1e-6), 1e-4, 1e-11, &worst)) << worst;
}
