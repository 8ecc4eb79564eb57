#pragma once

// Monte Carlo simulation of one- and two-stage top-k selection with unbiased
// Gaussian predictors.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cascadelab/order_stats.hpp"

namespace cascadelab::sim {

struct OneStageReport {
  std::size_t k = 0;
  std::size_t trials = 0;
  // Rank-wise means across trials; index 0 is rank 1.
  std::vector<double> mean_pred;
  std::vector<double> mean_true;
  std::vector<double> stderr_pred;
  std::vector<double> stderr_true;
  // Per-trial sums over the selected set, averaged over trials.
  double total_pred = 0.0;
  double total_true = 0.0;
  double total_pred_stderr = 0.0;
  double total_true_stderr = 0.0;
};

/// Draws n truths from N(mu, sigma^2), adds N(0, sigma_model^2) errors, keeps
/// the top-k by prediction and averages rank-wise over trials.
OneStageReport simulate_one_stage(const order_stats::GaussianRankingSpec& spec, std::size_t k,
                                  std::size_t trials, std::uint64_t seed, std::size_t threads = 1);

struct RankMoments {
  std::size_t trials = 0;
  std::vector<double> mean;    // index 0 is the maximum
  std::vector<double> stderr;
};

/// Monte Carlo means of the descending order statistics of n standard normal
/// draws. Used as the reference for the plotting-position approximation.
RankMoments standard_normal_order_stats(std::size_t n, std::size_t trials, std::uint64_t seed,
                                        std::size_t threads = 1);

struct TwoStageSpec {
  std::size_t n = 1000;
  std::size_t k1 = 100;
  std::size_t k2 = 10;
  double mu = 5.0;
  double sigma = 1.0;
  double sigma1 = 0.8;
  double sigma2 = 0.3;
  std::size_t trials = 10000;
  std::uint64_t seed = 0;

  void validate() const;
};

/// One simulated request: truths and both stages' predictions for all n
/// candidates, S1 (top-k1 by stage 1) and S2 (top-k2 of S1 by stage 2), both
/// in descending score order.
struct TwoStageTrial {
  std::vector<double> truth;
  std::vector<double> pred1;
  std::vector<double> pred2;
  std::vector<std::size_t> stage1;
  std::vector<std::size_t> stage2;
};

TwoStageTrial sample_two_stage_trial(const TwoStageSpec& spec, std::uint64_t trial);

/// cal(i, j) ratios on S1. Stage 0 is the ground truth.
struct CalibrationEstimate {
  double cal_1_2 = 0.0;
  double cal_1_0 = 0.0;
  double cal_2_0 = 0.0;
  double stderr_1_2 = 0.0;
  double stderr_1_0 = 0.0;
  double stderr_2_0 = 0.0;
  double mean_true_topk = 0.0;
  double mean_pred_stage1 = 0.0;
  double mean_pred_stage2 = 0.0;
};

inline constexpr std::size_t kBootstrapResamples = 200;

/// Ratio of grand means over all selected items in all trials, with standard
/// errors from resampling whole trials. Throws DegenerateError when the mean
/// truth or mean stage-2 prediction on S1 is within 1e-12 of zero.
CalibrationEstimate simulate_two_stage(const TwoStageSpec& spec, std::size_t threads = 1);

struct CalibrationCurve {
  std::string sweep_name;
  std::vector<double> sweep_values;
  std::vector<CalibrationEstimate> estimates;
};

/// One estimate per value of k1, sigma1 or sigma2. Every point reuses the base
/// seed, so the points share their random draws.
CalibrationCurve sweep_two_stage(const TwoStageSpec& base, std::string_view sweep_name,
                                 std::span<const double> sweep_values, std::size_t threads = 1);

/// `sweep_value,cal_1_2,cal_1_0,cal_2_0,stderr_1_2,stderr_1_0,stderr_2_0` with
/// six significant digits.
void write_curve_csv(std::ostream& out, const CalibrationCurve& curve);

std::string format_sig6(double value);

}  // namespace cascadelab::sim
