#include "mtscan/ms_scan.hpp"

#include <string>

#include "mtscan/error.hpp"
#include "mtscan/ops.hpp"

namespace mtscan {

std::size_t ScaleConfig::head_width(std::size_t branch) const {
  const std::size_t s = scales.at(branch);
  return dilated ? branch_width() : branch_width() * s * s;
}

ScaleConfig ScaleConfig::make(std::size_t channels, std::vector<std::size_t> scales, std::size_t state, bool dilated,
                              Rng& rng) {
  if (scales.empty()) throw ConfigError("multi-scale scan needs at least one scale");
  for (auto s : scales)
    if (s == 0) throw ConfigError("scan scales must be positive");
  if (channels % scales.size() != 0)
    throw ConfigError("channel count " + std::to_string(channels) + " not divisible by branch count " +
                      std::to_string(scales.size()));
  ScaleConfig cfg;
  cfg.channels = channels;
  cfg.scales = std::move(scales);
  cfg.dilated = dilated;
  for (std::size_t i = 0; i < cfg.scales.size(); ++i) cfg.branches.push_back(init_ss2d_heads(cfg.head_width(i), state, rng));
  return cfg;
}

void ScaleConfig::validate(std::size_t height, std::size_t width) const {
  if (scales.empty() || channels % scales.size() != 0)
    throw ConfigError("channel count " + std::to_string(channels) + " not divisible into " +
                      std::to_string(scales.size()) + " branches");
  for (auto s : scales)
    if (s == 0 || height % s != 0 || width % s != 0)
      throw ConfigError("scan scale " + std::to_string(s) + " does not divide grid " + std::to_string(height) + "x" +
                        std::to_string(width));
  if (branches.size() != scales.size()) throw ConfigError("one set of heads per branch is required");
}

std::vector<Tensor> ScaleConfig::parameters() const {
  std::vector<Tensor> out;
  for (const auto& heads : branches)
    for (const auto& h : heads)
      for (auto& t : h.tensors()) out.push_back(t);
  return out;
}

std::size_t ScaleConfig::parameter_count(std::size_t channels, std::span<const std::size_t> scales, std::size_t state,
                                         bool dilated) {
  const std::size_t m = channels / scales.size();
  std::size_t total = 0;
  for (auto s : scales) total += 4 * SSMParams::parameter_count(dilated ? m : m * s * s, state);
  return total;
}

std::vector<Tensor> channel_split(const Tensor& x, std::size_t parts) {
  if (parts == 0 || x.rank() < 1 || x.dim(0) % parts != 0)
    throw ConfigError("cannot split " + shape_str(x.shape()) + " into " + std::to_string(parts) + " channel slabs");
  const std::size_t m = x.dim(0) / parts;
  if (parts == 1) return {x};
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < parts; ++i) out.push_back(slice(x, i * m, (i + 1) * m));
  return out;
}

Tensor channel_concat(std::span<const Tensor> parts) {
  if (parts.size() == 1) return parts[0];
  return concat(parts);
}

std::vector<std::size_t> window_token_indices(std::size_t channels, std::size_t height, std::size_t width,
                                              std::size_t scale) {
  if (scale == 0 || height % scale != 0 || width % scale != 0)
    throw ConfigError("window scale " + std::to_string(scale) + " does not divide " + std::to_string(height) + "x" +
                      std::to_string(width));
  const std::size_t gh = height / scale, gw = width / scale, cells = gh * gw;
  std::vector<std::size_t> idx(channels * height * width);
  for (std::size_t i = 0; i < scale; ++i)
    for (std::size_t j = 0; j < scale; ++j)
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t out_c = (i * scale + j) * channels + c;
        for (std::size_t y = 0; y < gh; ++y)
          for (std::size_t x = 0; x < gw; ++x)
            idx[out_c * cells + y * gw + x] = (c * height + y * scale + i) * width + x * scale + j;
      }
  return idx;
}

Tensor window_tokenize(const Tensor& x, std::size_t scale) {
  if (x.rank() != 3) throw ShapeError("window_tokenize expects m x H x W");
  if (scale == 1) return x;
  const std::size_t m = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto idx = window_token_indices(m, h, w, scale);
  return gather_permute(x, idx, {m * scale * scale, h / scale, w / scale});
}

Tensor window_untokenize(const Tensor& x, std::size_t scale) {
  if (x.rank() != 3) throw ShapeError("window_untokenize expects (m s^2) x h x w");
  if (scale == 1) return x;
  const std::size_t s2 = scale * scale;
  if (scale == 0 || x.dim(0) % s2 != 0)
    throw ConfigError("token width " + std::to_string(x.dim(0)) + " not divisible by " + std::to_string(s2));
  const std::size_t m = x.dim(0) / s2, h = x.dim(1) * scale, w = x.dim(2) * scale;
  const auto inv = inverse_permutation(window_token_indices(m, h, w, scale));
  return gather_permute(x, inv, {m, h, w});
}

std::vector<std::pair<std::size_t, std::size_t>> dilated_sample_positions(std::size_t height, std::size_t width,
                                                                          std::size_t scale) {
  if (scale == 0 || height % scale != 0 || width % scale != 0)
    throw ConfigError("dilation scale " + std::to_string(scale) + " does not divide the grid");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t y = 0; y < height; y += scale)
    for (std::size_t x = 0; x < width; x += scale) out.emplace_back(y, x);
  return out;
}

Tensor dilated_sample(const Tensor& x, std::size_t scale) {
  if (x.rank() != 3) throw ShapeError("dilated_sample expects m x H x W");
  if (scale == 1) return x;
  const std::size_t m = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto pos = dilated_sample_positions(h, w, scale);
  std::vector<std::size_t> idx;
  idx.reserve(m * pos.size());
  for (std::size_t c = 0; c < m; ++c)
    for (const auto& [y, xx] : pos) idx.push_back((c * h + y) * w + xx);
  return gather(x, idx, {m, h / scale, w / scale});
}

Tensor ms_scan(const Tensor& x, const ScaleConfig& cfg) {
  if (x.rank() != 3 || x.dim(0) != cfg.channels)
    throw ShapeError("ms_scan input " + shape_str(x.shape()) + " does not match " + std::to_string(cfg.channels) +
                     " channels");
  if (cfg.dilated) throw ConfigError("ms_scan needs window-stacking heads; use dms_scan for a dilated config");
  cfg.validate(x.dim(1), x.dim(2));
  const auto parts = channel_split(x, cfg.scales.size());
  std::vector<Tensor> outs;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::size_t s = cfg.scales[i];
    outs.push_back(window_untokenize(ss2d(window_tokenize(parts[i], s), cfg.branches[i]), s));
  }
  return channel_concat(outs);
}

Tensor dms_scan(const Tensor& x, const ScaleConfig& cfg) {
  if (x.rank() != 3 || x.dim(0) != cfg.channels)
    throw ShapeError("dms_scan input " + shape_str(x.shape()) + " does not match " + std::to_string(cfg.channels) +
                     " channels");
  if (!cfg.dilated) throw ConfigError("dms_scan needs dilated heads of width C/N");
  cfg.validate(x.dim(1), x.dim(2));
  const std::size_t h = x.dim(1), w = x.dim(2);
  const auto parts = channel_split(x, cfg.scales.size());
  std::vector<Tensor> outs;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::size_t s = cfg.scales[i];
    if (s == 1) {
      outs.push_back(ss2d(parts[i], cfg.branches[i]));
    } else {
      outs.push_back(bilinear_restore(ss2d(dilated_sample(parts[i], s), cfg.branches[i]), s, h, w));
    }
  }
  return channel_concat(outs);
}

}  // namespace mtscan
