#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

namespace cascadelab {

/// Positions of the k largest scores, in descending score order. Ties go to
/// the smaller key; with no keys the position itself is the key.
inline std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k,
                                      std::span<const std::uint64_t> keys = {}) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  k = std::min(k, order.size());
  auto before = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return keys.empty() ? a < b : keys[a] < keys[b];
  };
  if (k < order.size()) {
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), before);
    order.resize(k);
  }
  std::sort(order.begin(), order.end(), before);
  return order;
}

}  // namespace cascadelab
