#pragma once

// Independent reference implementations used only by tests.

#include <cstddef>
#include <cstdint>
#include <vector>

namespace oracle {

// Standard normal CDF from the positive-term Taylor series
// Phi(z) = 1/2 + phi(z) * sum z^(2n+1) / (1*3*...*(2n+1)), in long double.
long double phi_series(long double z);

// Bisection on phi_series.
double quantile_bisect(double p, double tol = 1e-13);

// Means of the descending order statistics of n standard normals, by sorting
// trials draws from std::mt19937_64.
std::vector<double> sorted_normal_means(std::size_t n, std::size_t trials, std::uint64_t seed);

}  // namespace oracle
