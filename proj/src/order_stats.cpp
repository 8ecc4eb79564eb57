#include "cascadelab/order_stats.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "cascadelab/error.hpp"

namespace cascadelab::order_stats {

namespace {

// AS 241 for p <= 0.5. Returns a value <= 0.
double lower_quantile(double p) {
  const double q = p - 0.5;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((r * 2509.0809287301226727 + 33430.575583588128105) * r + 67265.770927008700853) * r +
                45921.953931549871457) * r + 13731.693765509461125) * r + 1971.5909503065514427) * r +
             133.14166789178437745) * r + 3.387132872796366608) /
           (((((((r * 5226.495278852545925 + 28729.085735721942674) * r + 39307.89580009271061) * r +
                21213.794301586595867) * r + 5394.1960214247511077) * r + 687.1870074920579083) * r +
             42.313330701600911252) * r + 1.0);
  }
  double r = std::sqrt(-std::log(p));
  double value;
  if (r <= 5.0) {
    r -= 1.6;
    value = (((((((r * 7.7454501427834140764e-4 + 0.0227238449892691845833) * r + 0.24178072517745061177) * r +
                 1.27045825245236838258) * r + 3.64784832476320460504) * r + 5.7694972214606914055) * r +
              4.6303378461565452959) * r + 1.42343711074968357734) /
            (((((((r * 1.05075007164441684324e-9 + 5.475938084995344946e-4) * r + 0.0151986665636164571966) * r +
                 0.14810397642748007459) * r + 0.68976733498510000455) * r + 1.6763848301838038494) * r +
              2.05319162663775882187) * r + 1.0);
  } else {
    r -= 5.0;
    value = (((((((r * 2.01033439929228813265e-7 + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r +
                 0.026532189526576123093) * r + 0.29656057182850489123) * r + 1.7848265399172913358) * r +
              5.4637849111641143699) * r + 6.6579046435011037772) /
            (((((((r * 2.04426310338993978564e-15 + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5) * r +
                 7.868691311456132591e-4) * r + 0.0148753612908506148525) * r + 0.13692988092273580531) * r +
              0.59983220655588793769) * r + 1.0);
  }
  return -value;
}

void check_rank(const GaussianRankingSpec& spec, std::size_t i) {
  if (i < 1 || i > spec.n) {
    throw ConfigError("rank " + std::to_string(i) + " outside 1.." + std::to_string(spec.n));
  }
}

}  // namespace

void GaussianRankingSpec::validate() const {
  if (n < 1) throw ConfigError("GaussianRankingSpec: n must be >= 1");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("GaussianRankingSpec: sigma must be >= 0");
  if (!(sigma_model >= 0.0) || !std::isfinite(sigma_model)) {
    throw ConfigError("GaussianRankingSpec: sigma_model must be >= 0");
  }
  if (!std::isfinite(mu)) throw ConfigError("GaussianRankingSpec: mu must be finite");
}

double GaussianRankingSpec::prediction_sd() const { return std::hypot(sigma, sigma_model); }

double norm_cdf(double z) { return 0.5 * std::erfc(-z * 0.70710678118654752440); }

double inv_norm_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::domain_error("inv_norm_cdf: p = " + std::to_string(p) + " is outside (0, 1)");
  }
  // 1 - p is exact for p in [0.5, 1), which makes the odd symmetry exact.
  if (p > 0.5) return -lower_quantile(1.0 - p);
  return lower_quantile(p);
}

double plotting_position(std::size_t n, std::size_t i, double alpha) {
  const double denom = static_cast<double>(n) - 2.0 * alpha + 1.0;
  return (static_cast<double>(n + 1 - i) - alpha) / denom;
}

double expected_order_stat(const GaussianRankingSpec& spec, std::size_t i, double alpha) {
  spec.validate();
  check_rank(spec, i);
  const double upper = plotting_position(spec.n, i, alpha);
  if (!(upper > 0.0 && upper < 1.0)) {
    throw std::domain_error("expected_order_stat: plotting position " + std::to_string(upper) +
                            " for rank " + std::to_string(i) + " of " + std::to_string(spec.n) +
                            " is outside (0, 1) with alpha = " + std::to_string(alpha));
  }
  // Ranks i and n+1-i share the lower-tail argument (i - alpha)/denom, so the
  // two expectations are mirror images around mu bit for bit.
  const double denom = static_cast<double>(spec.n) - 2.0 * alpha + 1.0;
  const double scale = spec.prediction_sd();
  if (2 * i <= spec.n + 1) {
    const double lower = (static_cast<double>(i) - alpha) / denom;
    return spec.mu - scale * inv_norm_cdf(lower);
  }
  return spec.mu + scale * inv_norm_cdf(upper);
}

double expected_topk_sum(const GaussianRankingSpec& spec, std::size_t k, double alpha) {
  spec.validate();
  if (k < 1 || k > spec.n) {
    throw ConfigError("expected_topk_sum: k = " + std::to_string(k) + " outside 1.." + std::to_string(spec.n));
  }
  double total = 0.0;
  for (std::size_t i = 1; i <= k; ++i) total += expected_order_stat(spec, i, alpha);
  return total;
}

OrderStatTable order_stat_table(const GaussianRankingSpec& spec, std::size_t k, double alpha) {
  spec.validate();
  if (k < 1 || k > spec.n) {
    throw ConfigError("order_stat_table: k = " + std::to_string(k) + " outside 1.." + std::to_string(spec.n));
  }
  OrderStatTable table{spec, k, {}, alpha};
  table.expected_prediction.reserve(k);
  for (std::size_t i = 1; i <= k; ++i) table.expected_prediction.push_back(expected_order_stat(spec, i, alpha));
  return table;
}

}  // namespace cascadelab::order_stats
