#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "cascadelab/error.hpp"
#include "cascadelab/metrics.hpp"
#include "cascadelab/random.hpp"

using namespace cascadelab;
using namespace cascadelab::metrics;

TEST(NormalizedEntropy, BaseRatePredictorIsOne) {
  const std::vector<double> y{1, 0, 0, 1, 0, 0, 0, 1};
  const std::vector<double> p(8, 3.0 / 8.0);
  EXPECT_EQ(normalized_entropy(y, p).ne, 1.0);
  const std::vector<double> soft{0.2, 0.7, 0.1, 0.4};
  const std::vector<double> q(4, 0.35);
  EXPECT_EQ(normalized_entropy(soft, q, TargetKind::teacher_prediction).ne, 1.0);
}

TEST(NormalizedEntropy, TwoPointHandValue) {
  const std::vector<double> y{1, 0};
  const std::vector<double> p{0.8, 0.2};
  const double hand = (2.0 * -std::log(0.8)) / (2.0 * std::log(2.0));
  EXPECT_NEAR(normalized_entropy(y, p).ne, hand, 1e-15);
  EXPECT_NEAR(normalized_entropy(y, p).ne, 0.321928, 1e-6);
}

TEST(NormalizedEntropy, PerfectHardPredictions) {
  const std::vector<double> y{1, 0, 1, 1, 0};
  EXPECT_LT(normalized_entropy(y, y).ne, 1e-6);
}

TEST(NormalizedEntropy, Errors) {
  const std::vector<double> ones(3, 1.0);
  const std::vector<double> zeros(3, 0.0);
  const std::vector<double> p(3, 0.5);
  EXPECT_THROW(normalized_entropy(ones, p), DegenerateError);
  EXPECT_THROW(normalized_entropy(zeros, p), DegenerateError);
  EXPECT_THROW(normalized_entropy(std::vector<double>{1, 0}, p), DimensionError);
  EXPECT_THROW(normalized_entropy(std::vector<double>{}, std::vector<double>{}), DimensionError);
}

TEST(NormalizedEntropy, PermutationInvariant) {
  SplitMix64 rng(3);
  std::vector<double> y(200), p(200);
  for (std::size_t i = 0; i < 200; ++i) {
    y[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
    p[i] = 0.05 + 0.9 * rng.uniform();
  }
  const double base = normalized_entropy(y, p).ne;
  const auto order = random_permutation(200, 11);
  std::vector<double> y2(200), p2(200);
  for (std::size_t i = 0; i < 200; ++i) {
    y2[i] = y[order[i]];
    p2[i] = p[order[i]];
  }
  EXPECT_NEAR(normalized_entropy(y2, p2).ne, base, 1e-12);
}

TEST(NormalizedEntropy, MovingTowardTargetHelps) {
  SplitMix64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> y(20), p(20);
    for (std::size_t i = 0; i < 20; ++i) {
      y[i] = rng.uniform();
      p[i] = 0.01 + 0.98 * rng.uniform();
    }
    y[0] = 0.9;
    y[1] = 0.1;
    const double before = normalized_entropy(y, p).ne;
    const std::size_t i = static_cast<std::size_t>(rng.uniform() * 20);
    p[i] += 0.5 * (y[i] - p[i]);
    if (p[i] == y[i] || std::fabs(y[i] - p[i]) < 1e-9) continue;
    EXPECT_LT(normalized_entropy(y, p).ne, before);
  }
}

TEST(CalibrationRatio, IdentityAndScaling) {
  const std::vector<double> a{0.1, 0.25, 0.4, 0.05};
  std::vector<double> twice(a);
  for (double& v : twice) v *= 2.0;
  EXPECT_EQ(calibration_ratio(a, a).ratio, 1.0);
  EXPECT_EQ(calibration_ratio(twice, a).ratio, 2.0);
  const auto r = calibration_ratio(twice, a, ReferenceKind::ground_truth);
  EXPECT_EQ(r.ratio, r.numerator_mean / r.denominator_mean);
}

TEST(CalibrationRatio, ReciprocalProperty) {
  SplitMix64 rng(9);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> a(30), b(30);
    for (std::size_t i = 0; i < 30; ++i) {
      a[i] = rng.uniform();
      b[i] = rng.uniform();
    }
    EXPECT_NEAR(calibration_ratio(a, b).ratio * calibration_ratio(b, a).ratio, 1.0, 1e-14);
  }
}

TEST(CalibrationRatio, Errors) {
  const std::vector<double> zero(3, 0.0);
  const std::vector<double> a(3, 0.5);
  EXPECT_THROW(calibration_ratio(a, zero), DegenerateError);
  EXPECT_THROW(calibration_ratio(a, std::vector<double>{1.0}), DimensionError);
}

TEST(RelativeChange, Arithmetic) {
  EXPECT_EQ(relative_change(0.8, 0.8), 0.0);
  EXPECT_NEAR(relative_change(0.7984, 0.8), -0.2, 1e-12);
  EXPECT_THROW(relative_change(1.0, 0.0), DegenerateError);
  EXPECT_EQ(format_pct(-1.98, 2), "-1.98%");
  EXPECT_EQ(format_pct(-0.0000001), "0.000%");
  EXPECT_EQ(format_pct(0.209), "0.209%");
}

TEST(Reports, JsonFieldNames) {
  const std::vector<double> y{1, 0};
  const std::vector<double> p{0.8, 0.2};
  const auto base = normalized_entropy(y, p);
  const std::vector<double> q{0.7, 0.3};
  const auto cand = compared_to(normalized_entropy(y, q), base, "baseline");
  const auto j = to_json(cand);
  EXPECT_TRUE(j.contains("ne"));
  EXPECT_TRUE(j.contains("ne_relative_change_pct"));
  EXPECT_EQ(j["n"], 2);
  EXPECT_GT(j["ne_relative_change_pct"].get<double>(), 0.0);
  const auto c = to_json(calibration_ratio(p, q));
  EXPECT_EQ(c["calibration_ratio"], 1.0);
}
