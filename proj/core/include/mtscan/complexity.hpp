#pragma once

#include <cstddef>
#include <cstdint>

// Analytic operation counts. One FLOP is one scalar multiply-add, add,
// multiply or transcendental evaluation; index permutations (serialisation,
// window tokenisation, pixel shuffle) are free.
namespace mtscan::flops {

using Count = std::uint64_t;

/// Selective scan over L tokens of width d with state n. The constant term is
/// the T-independent A = -exp(a_log) evaluation.
constexpr Count selective_scan(Count length, Count dim, Count state) {
  const Count per_token = 7 * dim * state + 5 * dim;
  return length * per_token + dim * state;
}

constexpr Count ss2d(Count channels, Count height, Count width, Count state) {
  return 4 * selective_scan(height * width, channels, state) + 3 * channels * height * width;
}

constexpr Count channel_linear(Count in, Count out, Count positions, bool bias = true) {
  return out * in * positions + (bias ? out * positions : 0);
}

constexpr Count layer_norm(Count channels, Count positions) { return 6 * channels * positions; }

constexpr Count elementwise(Count n) { return n; }

constexpr Count bilinear_restore(Count channels, Count height, Count width) { return 9 * channels * height * width; }

}  // namespace mtscan::flops
