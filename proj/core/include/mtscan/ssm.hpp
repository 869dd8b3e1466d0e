#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mtscan/random.hpp"
#include "mtscan/tensor.hpp"

namespace mtscan {

/// Learnable parameters of one selective-scan head with token width d and
/// state size n.
///
///   A      = -exp(a_log)                           (d x n, strictly negative)
///   r_t    = <x_t, w_delta>                         (rank-1 step projection)
///   Delta_t = softplus(r_t * delta_up + delta_bias) (d, strictly positive)
///   B_t    = x_t w_b,  C_t = x_t w_c                (n each)
struct SSMParams {
  Tensor a_log;       // d x n
  Tensor d_skip;      // d
  Tensor w_b;         // d x n
  Tensor w_c;         // d x n
  Tensor w_delta;     // d
  Tensor delta_up;    // d
  Tensor delta_bias;  // d

  std::size_t dim() const { return a_log.dim(0); }
  std::size_t state() const { return a_log.dim(1); }

  /// Mamba-style initialisation: A_k = -(k+1), D = 1, step sizes in [1e-3, 1e-1].
  static SSMParams init(std::size_t dim, std::size_t state, Rng& rng);

  std::vector<Tensor> tensors() const;
  static std::size_t parameter_count(std::size_t dim, std::size_t state) { return 3 * dim * state + 4 * dim; }
};

/// Zero-order-hold A and Euler B, laid out [t][c][k].
struct Discretized {
  std::size_t length = 0, dim = 0, state = 0;
  std::vector<double> a_bar;
  std::vector<double> b_bar;
  double a(std::size_t t, std::size_t c, std::size_t k) const { return a_bar[(t * dim + c) * state + k]; }
  double b(std::size_t t, std::size_t c, std::size_t k) const { return b_bar[(t * dim + c) * state + k]; }
};

/// A_bar[t] = exp(delta[t] (x) A), B_bar[t] = delta[t] (x) B[t], with A = -exp(a_log).
/// delta is L x d (must be > 0), a_log d x n, b L x n.
Discretized discretize(std::span<const double> delta, std::span<const double> a_log, std::span<const double> b,
                       std::size_t length, std::size_t dim, std::size_t state);

/// Selective scan over x (L x d), strictly left to right from h_0 = 0:
///   h_t = A_bar_t * h_{t-1} + B_bar_t x_t,   y_t = <C_t, h_t> + D * x_t.
/// Differentiable in x and every parameter.
Tensor selective_scan(const Tensor& x, const SSMParams& params);

enum class ScanDirection { row_fwd, row_rev, col_fwd, col_rev };

inline constexpr std::array<ScanDirection, 4> kAllDirections = {ScanDirection::row_fwd, ScanDirection::row_rev,
                                                                 ScanDirection::col_fwd, ScanDirection::col_rev};

std::string to_string(ScanDirection dir);
ScanDirection parse_direction(const std::string& name);

/// Visiting order of the H*W row-major positions for one direction.
std::vector<std::size_t> direction_indices(ScanDirection dir, std::size_t height, std::size_t width);

/// C x H x W map -> (H*W) x C token sequence visiting positions in `order`.
Tensor serialize_map(const Tensor& x, std::span<const std::size_t> order);
/// Inverse of serialize_map.
Tensor restore_map(const Tensor& tokens, std::span<const std::size_t> order, std::size_t height, std::size_t width);

using SS2DHeads = std::array<SSMParams, 4>;

SS2DHeads init_ss2d_heads(std::size_t dim, std::size_t state, Rng& rng);

/// Four-direction scan: each direction serialises, scans with its own head,
/// restores; results are summed in direction order.
Tensor ss2d(const Tensor& x, const SS2DHeads& heads);

}  // namespace mtscan
