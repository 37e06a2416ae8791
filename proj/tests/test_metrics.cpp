#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "tcsa/common.hpp"
#include "tcsa/metrics.hpp"

using namespace tcsa;
using namespace tcsa::metrics;

namespace {

torch::Tensor random_mask(int64_t h, int64_t w, double p, uint64_t seed) {
  torch::manual_seed(seed);
  return torch::rand({h, w}) < p;
}

torch::Tensor disk(int64_t size, double cy, double cx, double r) {
  auto ys = torch::arange(size, torch::kDouble).view({-1, 1});
  auto xs = torch::arange(size, torch::kDouble).view({1, -1});
  return ((ys - cy).pow(2) + (xs - cx).pow(2)) <= r * r;
}

}  // namespace

TEST(Dice, MatchesOracleOnRandomMasks) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    auto a = random_mask(12, 9, 0.4, seed);
    auto b = random_mask(12, 9, 0.3, seed + 50);
    EXPECT_NEAR(dice_score(a, b), oracle::dice_score(oracle::mask_of(a), oracle::mask_of(b)), 1e-9);
  }
}

TEST(Dice, EdgeCases) {
  auto empty = torch::zeros({4, 4}, torch::kBool);
  auto full = torch::ones({4, 4}, torch::kBool);
  EXPECT_EQ(dice_score(empty, empty), 100.0);
  EXPECT_EQ(dice_score(full, full), 100.0);
  EXPECT_EQ(dice_score(full, empty), 0.0);
  EXPECT_THROW(dice_score(full, torch::ones({3, 4}, torch::kBool)), ConfigError);
}

TEST(Dice, SymmetricAndBounded) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    auto a = random_mask(8, 8, 0.5, seed);
    auto b = random_mask(8, 8, 0.5, seed + 7);
    const double d = dice_score(a, b);
    EXPECT_EQ(d, dice_score(b, a));
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 100.0);
  }
}

TEST(Surface, SquareBorder) {
  auto m = torch::zeros({6, 6}, torch::kBool);
  m.slice(0, 1, 5).slice(1, 1, 5).fill_(true);
  EXPECT_EQ(surface_pixels(m).size(), 12u);
  auto full = torch::ones({3, 3}, torch::kBool);
  EXPECT_EQ(surface_pixels(full).size(), 8u);  // image edge counts as outside
}

TEST(Asd, MatchesOracleOnRandomMasks) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    auto a = random_mask(10, 11, 0.35, seed);
    auto b = random_mask(10, 11, 0.35, seed + 100);
    const Spacing sp{1.5, 0.7};
    auto got = asd(a, b, sp);
    auto expected = oracle::asd(oracle::mask_of(a), oracle::mask_of(b), sp.row, sp.col);
    ASSERT_EQ(got.has_value(), expected.has_value());
    if (got) EXPECT_NEAR(*got, *expected, 1e-9);
  }
}

TEST(Asd, PropertiesOnDisks) {
  auto a = disk(40, 20, 20, 8);
  EXPECT_EQ(*asd(a, a), 0.0);
  auto b = disk(40, 20, 23, 8);
  EXPECT_NEAR(*asd(a, b), *asd(b, a), 1e-12);
  EXPECT_GT(*asd(a, b), 0.0);
  EXPECT_LE(*asd(a, b), 3.0 + 1e-9);
  auto c = disk(40, 20, 26, 8);
  EXPECT_LT(*asd(a, b), *asd(a, c));
  EXPECT_NEAR(*asd(a, b, {2.0, 2.0}), 2.0 * *asd(a, b), 1e-9);
}

TEST(Asd, EmptyMaskUndefined) {
  auto a = disk(10, 5, 5, 2);
  auto e = torch::zeros({10, 10}, torch::kBool);
  EXPECT_FALSE(asd(a, e).has_value());
  EXPECT_FALSE(asd(e, e).has_value());
}

TEST(Volume, PerfectPredictionAndBackgroundExcluded) {
  torch::manual_seed(1);
  SubjectSlices s{"s1", {}, {}};
  for (int i = 0; i < 3; ++i) {
    auto gt = torch::zeros({16, 16}, torch::kLong);
    gt.slice(0, 2, 8).slice(1, 2, 8).fill_(1);
    gt.slice(0, 9, 14).slice(1, 9, 14).fill_(2);
    s.ground_truth.push_back(gt);
    s.predictions.push_back(gt.clone());
  }
  auto r = evaluate_volume({s}, 3, {}, {"bg", "a", "b"});
  EXPECT_EQ(r.classes, (std::vector<int64_t>{1, 2}));
  EXPECT_EQ(r.class_names, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(r.mean_dice, 100.0);
  ASSERT_TRUE(r.mean_asd.has_value());
  EXPECT_EQ(*r.mean_asd, 0.0);
  EXPECT_EQ(r.undefined_asd, 0);
}

TEST(Volume, DiceIsVolumeLevelAndAveragedOverSubjects) {
  auto gt = torch::zeros({2, 4, 4}, torch::kLong);
  gt[0].slice(0, 0, 2).fill_(1);  // 8 pixels in slice 0 only
  auto pred = gt.clone();
  pred[1][0][0] = 1;  // one false positive on a slice with no ground truth
  SubjectSlices s1{"a", {pred[0], pred[1]}, {gt[0], gt[1]}};
  SubjectSlices s2{"b", {gt[0], gt[1]}, {gt[0], gt[1]}};
  auto r = evaluate_volume({s1, s2}, 2, {});
  const double d1 = 100.0 * 2 * 8 / (9 + 8);
  EXPECT_NEAR(r.subjects[0].dice[0], d1, 1e-9);
  EXPECT_NEAR(r.dice[0], 0.5 * (d1 + 100.0), 1e-9);
  // Slice 1 of subject a has an empty ground truth: ASD undefined there, defined on slice 0.
  ASSERT_TRUE(r.subjects[0].asd[0].has_value());
  EXPECT_EQ(*r.subjects[0].asd[0], 0.0);
}

TEST(Volume, UndefinedAsdIsCounted) {
  auto gt = torch::zeros({4, 4}, torch::kLong);
  gt.slice(0, 0, 2).fill_(1);
  auto pred = torch::zeros({4, 4}, torch::kLong);
  auto r = evaluate_volume({{"x", {pred}, {gt}}}, 2, {});
  EXPECT_EQ(r.dice[0], 0.0);
  EXPECT_FALSE(r.asd[0].has_value());
  EXPECT_FALSE(r.mean_asd.has_value());
  EXPECT_EQ(r.undefined_asd, 1);
}

TEST(Volume, ShapeMismatchRejected) {
  SubjectSlices s{"x", {torch::zeros({4, 4}, torch::kLong)}, {torch::zeros({4, 5}, torch::kLong)}};
  EXPECT_THROW(evaluate_volume({s}, 2, {}), ConfigError);
  SubjectSlices t{"y", {torch::zeros({4, 4}, torch::kLong)}, {}};
  EXPECT_THROW(evaluate_volume({t}, 2, {}), ConfigError);
}

TEST(Report, JsonSchemaTableAndCsv) {
  auto gt = torch::zeros({8, 8}, torch::kLong);
  gt.slice(0, 1, 4).slice(1, 1, 4).fill_(1);
  auto pred = gt.clone();
  pred[1][1] = 0;
  auto r = evaluate_volume({{"subj", {pred}, {gt}}}, 3, {0.8, 0.8}, {"bg", "one", "two"});
  auto j = r.to_json();
  EXPECT_TRUE(validate_report_json(j).empty());
  EXPECT_EQ(j["per_class"].size(), 2u);
  EXPECT_TRUE(j["per_class"][1]["asd_mm"].is_null());
  auto round = nlohmann::json::parse(j.dump());
  EXPECT_EQ(round, j);
  EXPECT_NE(r.to_table().find("one"), std::string::npos);
  EXPECT_NE(r.to_table().find("n/a"), std::string::npos);
  auto csv = r.to_csv();
  EXPECT_EQ(csv.rfind("subject,class,name,dice,asd_mm\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(Report, ValidatorFlagsProblems) {
  nlohmann::json bad = {{"mean_dice", 140.0}, {"per_class", nlohmann::json::array({{{"class", 1}}})}};
  auto problems = validate_report_json(bad);
  EXPECT_GE(problems.size(), 4u);
}
