#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mtscan/ssm.hpp"

namespace mtscan {

/// Scale layout of one multi-scale scan: the input's C channels are split
/// into N = scales.size() equal slabs of width m = C / N, and branch i scans
/// its slab at window scale scales[i] with its own four-direction heads.
struct ScaleConfig {
  std::size_t channels = 0;
  std::vector<std::size_t> scales;
  /// Heads sized for dilated sampling (token width m) instead of window
  /// stacking (token width m * s^2).
  bool dilated = false;
  std::vector<SS2DHeads> branches;

  std::size_t branch_width() const { return channels / scales.size(); }
  std::size_t head_width(std::size_t branch) const;

  static ScaleConfig make(std::size_t channels, std::vector<std::size_t> scales, std::size_t state, bool dilated,
                          Rng& rng);
  /// Throws ConfigError unless C % N == 0 and every scale divides H and W.
  void validate(std::size_t height, std::size_t width) const;
  std::vector<Tensor> parameters() const;

  static std::size_t parameter_count(std::size_t channels, std::span<const std::size_t> scales, std::size_t state,
                                     bool dilated);
};

/// Contiguous channel slabs, in order. Throws ConfigError when C % parts != 0.
std::vector<Tensor> channel_split(const Tensor& x, std::size_t parts);
Tensor channel_concat(std::span<const Tensor> parts);

/// Element index map of window_tokenize for an m x H x W input.
std::vector<std::size_t> window_token_indices(std::size_t channels, std::size_t height, std::size_t width,
                                              std::size_t scale);

/// m x H x W -> (m s^2) x (H/s) x (W/s). Each non-overlapping s x s patch
/// becomes one token holding its pixels' features in row-major patch order.
Tensor window_tokenize(const Tensor& x, std::size_t scale);
/// (m s^2) x h x w -> m x (h s) x (w s); exact inverse of window_tokenize.
Tensor window_untokenize(const Tensor& x, std::size_t scale);

/// Positions (row, col) kept by dilated sampling: the top-left of every window.
std::vector<std::pair<std::size_t, std::size_t>> dilated_sample_positions(std::size_t height, std::size_t width,
                                                                          std::size_t scale);
/// m x H x W -> m x (H/s) x (W/s), keeping the top-left pixel of each window.
Tensor dilated_sample(const Tensor& x, std::size_t scale);

/// Window-stacking multi-scale scan; output shape equals input shape.
Tensor ms_scan(const Tensor& x, const ScaleConfig& cfg);
/// Dilated multi-scale scan: per branch with s > 1, scan the sampled coarse
/// grid at width m and bilinearly restore to H x W.
Tensor dms_scan(const Tensor& x, const ScaleConfig& cfg);

/// Dispatches on cfg.dilated.
inline Tensor multi_scale_scan(const Tensor& x, const ScaleConfig& cfg) {
  return cfg.dilated ? dms_scan(x, cfg) : ms_scan(x, cfg);
}

}  // namespace mtscan
