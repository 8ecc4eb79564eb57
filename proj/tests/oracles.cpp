#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

namespace oracle {

long double phi_series(long double z) {
  const long double x = std::fabs(z);
  long double term = x;
  long double sum = x;
  for (int k = 1; k < 2000; ++k) {
    term *= x * x / (2.0L * k + 1.0L);
    sum += term;
    if (term < sum * 1e-21L) break;
  }
  const long double density = std::exp(-0.5L * x * x) / std::sqrt(2.0L * 3.14159265358979323846264338327950288L);
  const long double upper = 0.5L + density * sum;
  return z >= 0 ? upper : 1.0L - upper;
}

double quantile_bisect(double p, double tol) {
  long double lo = -40.0L, hi = 40.0L;
  while (hi - lo > tol) {
    const long double mid = 0.5L * (lo + hi);
    if (phi_series(mid) < p) lo = mid; else hi = mid;
  }
  return static_cast<double>(0.5L * (lo + hi));
}

std::vector<double> sorted_normal_means(std::size_t n, std::size_t trials, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal;
  std::vector<double> draws(n), sums(n, 0.0);
  for (std::size_t t = 0; t < trials; ++t) {
    for (double& x : draws) x = normal(gen);
    std::sort(draws.begin(), draws.end(), std::greater<>());
    for (std::size_t i = 0; i < n; ++i) sums[i] += draws[i];
  }
  for (double& s : sums) s /= static_cast<double>(trials);
  return sums;
}

}  // namespace oracle
