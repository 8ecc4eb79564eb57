#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>
#include <utility>

#include "cascadelab/error.hpp"
#include "cascadelab/order_stats.hpp"
#include "oracles.hpp"

namespace os = cascadelab::order_stats;

TEST(InvNormCdf, Median) { EXPECT_EQ(os::inv_norm_cdf(0.5), 0.0); }

TEST(InvNormCdf, MatchesBisectionOracle) {
  const double oracle = oracle::quantile_bisect(0.975);
  EXPECT_NEAR(os::inv_norm_cdf(0.975), oracle, 1e-9);
  // Frozen from the bisection oracle above.
  EXPECT_NEAR(os::inv_norm_cdf(0.975), 1.959963984540054, 1e-12);
}

TEST(InvNormCdf, InvertsPhiOfOne) {
  const double p = static_cast<double>(oracle::phi_series(1.0L));
  EXPECT_NEAR(p, 0.841344746, 1e-9);
  EXPECT_NEAR(os::inv_norm_cdf(p), 1.0, 1e-12);
  // The rounded probability from the worked example maps back to 1 within
  // the rounding of its ninth digit.
  EXPECT_NEAR(os::inv_norm_cdf(0.841344746), 1.0, 1e-8);
}

TEST(InvNormCdf, RejectsClosedEndpoints) {
  EXPECT_THROW(os::inv_norm_cdf(0.0), std::domain_error);
  EXPECT_THROW(os::inv_norm_cdf(1.0), std::domain_error);
  EXPECT_THROW(os::inv_norm_cdf(-0.1), std::domain_error);
  EXPECT_THROW(os::inv_norm_cdf(1.5), std::domain_error);
  EXPECT_THROW(os::inv_norm_cdf(std::nan("")), std::domain_error);
}

TEST(InvNormCdf, PhiRoundTripAcrossRange) {
  // Log-spaced tail probabilities and a uniform grid through the body.
  for (double e = -10.0; e <= -0.31; e += 0.05) {
    for (double p : {std::pow(10.0, e), 1.0 - std::pow(10.0, e)}) {
      const double z = os::inv_norm_cdf(p);
      EXPECT_LE(std::fabs(static_cast<double>(oracle::phi_series(z) - p)), 1e-12) << "p=" << p;
    }
  }
  for (int j = 1; j < 1000; ++j) {
    const double p = j / 1000.0;
    const double z = os::inv_norm_cdf(p);
    EXPECT_LE(std::fabs(static_cast<double>(oracle::phi_series(z) - p)), 1e-12) << "p=" << p;
  }
}

TEST(InvNormCdf, OddSymmetryIsExact) {
  // For p in [0.5, 1) the complement 1 - p is exact in binary floating point.
  for (int j = 0; j < 5000; ++j) {
    const double p = 0.5 + j / 10000.0 + 1.234e-7;
    EXPECT_EQ(os::inv_norm_cdf(1.0 - p), -os::inv_norm_cdf(p)) << "p=" << p;
  }
}

TEST(NormCdf, AgreesWithSeries) {
  for (double z = -8.0; z <= 8.0; z += 0.25) {
    EXPECT_NEAR(os::norm_cdf(z), static_cast<double>(oracle::phi_series(z)), 1e-15);
  }
}

TEST(ExpectedOrderStat, MiddleRankIsMean) {
  os::GaussianRankingSpec spec{.n = 101, .mu = 10.0, .sigma = 2.0, .sigma_model = 1.0};
  EXPECT_EQ(os::expected_order_stat(spec, 51), 10.0);
}

TEST(ExpectedOrderStat, MaxOfHundred) {
  os::GaussianRankingSpec spec{.n = 100, .mu = 0.0, .sigma = 1.0, .sigma_model = 0.0};
  const double value = os::expected_order_stat(spec, 1);
  EXPECT_NEAR(value, oracle::quantile_bisect(99.625 / 100.25), 1e-9);
  EXPECT_NEAR(value, 2.498, 1e-3);
  EXPECT_NEAR(value, 2.4985906, 1e-7);
  // Exact expectation from numerical integration is 2.5076.
  EXPECT_NEAR(value, 2.5076, 0.011);
}

TEST(ExpectedOrderStat, MaxOfTwoVersusClosedForm) {
  const double exact = 1.0 / std::sqrt(M_PI);
  os::GaussianRankingSpec two{.n = 2, .mu = 0.0, .sigma = 1.0, .sigma_model = 0.0};
  EXPECT_NEAR(os::expected_order_stat(two, 1), 0.5895, 1e-4);
  const double gap2 = std::fabs(os::expected_order_stat(two, 1) - exact);
  EXPECT_LT(gap2, 0.03);
  // Exact maxima of n standard normals by numerical integration. The top-rank
  // error is largest at n = 2 but is not monotone beyond n = 10.
  const std::pair<std::size_t, double> exact_max[] = {{10, 1.5387527}, {100, 2.5075936}, {1000, 3.2414358}};
  for (const auto& [n, value] : exact_max) {
    os::GaussianRankingSpec spec{.n = n, .mu = 0.0, .sigma = 1.0, .sigma_model = 0.0};
    EXPECT_LT(std::fabs(os::expected_order_stat(spec, 1) - value), gap2) << "n=" << n;
  }
}

TEST(ExpectedOrderStat, RejectsBadRank) {
  os::GaussianRankingSpec spec{.n = 5};
  EXPECT_THROW(os::expected_order_stat(spec, 0), cascadelab::ConfigError);
  EXPECT_THROW(os::expected_order_stat(spec, 6), cascadelab::ConfigError);
}

TEST(ExpectedOrderStat, RejectsBadSpec) {
  EXPECT_THROW(os::expected_order_stat({.n = 0}, 1), cascadelab::ConfigError);
  EXPECT_THROW(os::expected_order_stat({.n = 3, .sigma = -1.0}, 1), cascadelab::ConfigError);
  EXPECT_THROW(os::expected_order_stat({.n = 3, .sigma_model = -0.5}, 1), cascadelab::ConfigError);
}

TEST(ExpectedOrderStat, PrintedAlphaIsUndefinedAtTopRanks) {
  os::GaussianRankingSpec spec{.n = 100};
  for (std::size_t i = 1; i <= 3; ++i) {
    EXPECT_GE(os::plotting_position(100, i, 3.375), 1.0);
    EXPECT_THROW(os::expected_order_stat(spec, i, 3.375), std::domain_error);
  }
  EXPECT_NO_THROW(os::expected_order_stat(spec, 4, 3.375));
}

TEST(ExpectedOrderStat, ArgumentsInsideUnitInterval) {
  for (std::size_t n : {1u, 2u, 3u, 7u, 100u, 1001u}) {
    for (std::size_t i = 1; i <= n; ++i) {
      const double p = os::plotting_position(n, i);
      EXPECT_GT(p, 0.0);
      EXPECT_LT(p, 1.0);
    }
  }
}

TEST(ExpectedOrderStat, AntisymmetryAndMonotonicity) {
  for (std::size_t n : {2u, 9u, 50u, 333u}) {
    os::GaussianRankingSpec spec{.n = n, .mu = 3.0, .sigma = 1.5, .sigma_model = 0.7};
    os::GaussianRankingSpec wider = spec;
    wider.sigma_model = 1.4;
    for (std::size_t i = 1; i <= n; ++i) {
      const double a = os::expected_order_stat(spec, i);
      EXPECT_NEAR(a + os::expected_order_stat(spec, n + 1 - i), 2.0 * spec.mu, 1e-12);
      if (i < n) {
        EXPECT_GT(a, os::expected_order_stat(spec, i + 1));
      }
      if (2 * i < n + 1) {
        EXPECT_GT(os::expected_order_stat(wider, i), a);
      }
    }
  }
}

TEST(ExpectedTopkSum, FullSumIsNMu) {
  for (std::size_t n : {1u, 2u, 5u, 101u, 1000u}) {
    os::GaussianRankingSpec spec{.n = n, .mu = 2.5, .sigma = 1.0, .sigma_model = 0.3};
    EXPECT_NEAR(os::expected_topk_sum(spec, n), static_cast<double>(n) * 2.5, 1e-9);
  }
}

TEST(ExpectedTopkSum, TopTenOfHundredAgainstMonteCarlo) {
  os::GaussianRankingSpec spec{.n = 100, .mu = 0.0, .sigma = 1.0, .sigma_model = 0.0};
  const double analytic = os::expected_topk_sum(spec, 10);
  const auto means = oracle::sorted_normal_means(100, 200000, 7);
  double mc = 0.0;
  for (std::size_t i = 0; i < 10; ++i) mc += means[i];
  EXPECT_NEAR(analytic / mc, 1.0, 0.005);
  // Frozen after the comparison above.
  EXPECT_NEAR(analytic, 17.2547, 1e-4);
}

TEST(ExpectedTopkSum, IncreasesWithModelNoise) {
  os::GaussianRankingSpec spec{.n = 100, .mu = 0.0, .sigma = 1.0, .sigma_model = 0.0};
  const double exact_scores = os::expected_topk_sum(spec, 10);
  spec.sigma_model = 1.0;
  EXPECT_GT(os::expected_topk_sum(spec, 10), exact_scores);
  EXPECT_NEAR(os::expected_topk_sum(spec, 10), std::sqrt(2.0) * exact_scores, 1e-12);
}

TEST(OrderStatTable, MatchesPointwise) {
  os::GaussianRankingSpec spec{.n = 40, .mu = 1.0, .sigma = 0.5, .sigma_model = 0.2};
  const auto table = os::order_stat_table(spec, 7);
  ASSERT_EQ(table.expected_prediction.size(), 7u);
  for (std::size_t i = 0; i < 7; ++i) {
    EXPECT_EQ(table.expected_prediction[i], os::expected_order_stat(spec, i + 1));
  }
  EXPECT_THROW(os::order_stat_table(spec, 0), cascadelab::ConfigError);
  EXPECT_THROW(os::order_stat_table(spec, 41), cascadelab::ConfigError);
}
