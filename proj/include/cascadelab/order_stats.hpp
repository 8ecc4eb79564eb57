#pragma once

// Expected order statistics of Gaussian scores under top-k selection.
//
// With true values y ~ N(mu, sigma^2) and an unbiased predictor whose error is
// N(0, sigma_model^2), predicted scores are N(mu, sigma^2 + sigma_model^2). The
// expected i-th largest score is approximated with Blom plotting positions:
//
//   E(z_i) = mu + sqrt(sigma^2 + sigma_model^2) * PhiInv((n - i - alpha + 1) / (n - 2 alpha + 1))
//
// Rank 1 is the largest score.

#include <cstddef>
#include <vector>

namespace cascadelab::order_stats {

/// Blom's plotting-position constant. With this value the quantile argument
/// stays inside (0, 1) for every rank of every n >= 1.
inline constexpr double kBlomAlpha = 0.375;

struct GaussianRankingSpec {
  std::size_t n = 1;
  double mu = 0.0;
  double sigma = 1.0;
  double sigma_model = 0.0;

  /// Throws ConfigError unless n >= 1 and both deviations are finite and >= 0.
  void validate() const;
  /// sqrt(sigma^2 + sigma_model^2): deviation of the predicted scores.
  double prediction_sd() const;
};

struct OrderStatTable {
  GaussianRankingSpec spec;
  std::size_t k = 0;
  std::vector<double> expected_prediction;  // index 0 is rank 1 (largest)
  double alpha = kBlomAlpha;
};

/// Standard normal CDF.
double norm_cdf(double z);

/// Standard normal quantile (Wichura's AS 241, PPND16). Throws
/// std::domain_error for p outside the open interval (0, 1).
double inv_norm_cdf(double p);

/// (n - i - alpha + 1) / (n - 2 alpha + 1), the quantile argument for rank i.
double plotting_position(std::size_t n, std::size_t i, double alpha = kBlomAlpha);

/// Expected i-th largest predicted score, 1 <= i <= n. Throws ConfigError for
/// an invalid spec or rank and std::domain_error when the plotting position
/// leaves (0, 1), which happens for alpha = 3.375 at the top ranks.
double expected_order_stat(const GaussianRankingSpec& spec, std::size_t i,
                           double alpha = kBlomAlpha);

/// Sum of expected_order_stat over ranks 1..k. With sigma_model = 0 this is the
/// optimal return of a perfect top-k selector.
double expected_topk_sum(const GaussianRankingSpec& spec, std::size_t k,
                         double alpha = kBlomAlpha);

OrderStatTable order_stat_table(const GaussianRankingSpec& spec, std::size_t k,
                                double alpha = kBlomAlpha);

}  // namespace cascadelab::order_stats
