#pragma once

#include <cstdint>
#include <random>

#include "mtscan/tensor.hpp"

namespace mtscan {

using Rng = std::mt19937_64;

/// Leaf tensor with i.i.d. N(0, stddev^2) entries.
Tensor normal_tensor(Shape shape, double stddev, Rng& rng, bool requires_grad = false);
/// Leaf tensor with i.i.d. U(lo, hi) entries.
Tensor uniform_tensor(Shape shape, double lo, double hi, Rng& rng, bool requires_grad = false);

/// Derives an independent stream from a seed and a stream tag.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

}  // namespace mtscan
