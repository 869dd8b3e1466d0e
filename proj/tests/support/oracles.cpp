#include "oracles.hpp"

#include <algorithm>
#include <cmath>

namespace oracle {

std::vector<double> selective_scan(const mtscan::Tensor& x, const mtscan::SSMParams& p) {
  const std::size_t L = x.dim(0), d = x.dim(1), n = p.state();
  auto X = [&](std::size_t t, std::size_t c) { return x.data()[t * d + c]; };
  std::vector<double> delta(L * d), B(L * n, 0.0), C(L * n, 0.0);
  for (std::size_t t = 0; t < L; ++t) {
    double r = 0.0;
    for (std::size_t j = 0; j < d; ++j) r += X(t, j) * p.w_delta.data()[j];
    for (std::size_t c = 0; c < d; ++c)
      delta[t * d + c] = std::log1p(std::exp(r * p.delta_up.data()[c] + p.delta_bias.data()[c]));
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t j = 0; j < d; ++j) {
        B[t * n + k] += X(t, j) * p.w_b.data()[j * n + k];
        C[t * n + k] += X(t, j) * p.w_c.data()[j * n + k];
      }
  }
  std::vector<double> y(L * d, 0.0);
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t c = 0; c < d; ++c) {
      double acc = p.d_skip.data()[c] * X(t, c);
      for (std::size_t s = 0; s <= t; ++s) {
        double span_delta = 0.0;
        for (std::size_t r = s + 1; r <= t; ++r) span_delta += delta[r * d + c];
        for (std::size_t k = 0; k < n; ++k) {
          const double A = -std::exp(p.a_log.data()[c * n + k]);
          acc += C[t * n + k] * std::exp(A * span_delta) * delta[s * d + c] * B[s * n + k] * X(s, c);
        }
      }
      y[t * d + c] = acc;
    }
  return y;
}

std::vector<std::uint16_t> label_change_mask(std::span<const std::uint16_t> labels, std::size_t height,
                                             std::size_t width) {
  std::vector<std::uint16_t> out(height * width, 0);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const auto v = labels[y * width + x];
      bool edge = false;
      if (y > 0 && labels[(y - 1) * width + x] != v) edge = true;
      if (y + 1 < height && labels[(y + 1) * width + x] != v) edge = true;
      if (x > 0 && labels[y * width + x - 1] != v) edge = true;
      if (x + 1 < width && labels[y * width + x + 1] != v) edge = true;
      out[y * width + x] = edge ? 1 : 0;
    }
  return out;
}

std::vector<std::size_t> direction_order(mtscan::ScanDirection dir, std::size_t height, std::size_t width) {
  std::vector<std::size_t> out;
  using mtscan::ScanDirection;
  if (dir == ScanDirection::row_fwd || dir == ScanDirection::row_rev) {
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) out.push_back(y * width + x);
  } else {
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t y = 0; y < height; ++y) out.push_back(y * width + x);
  }
  if (dir == ScanDirection::row_rev || dir == ScanDirection::col_rev) std::reverse(out.begin(), out.end());
  return out;
}

std::vector<double> window_tokenize(std::span<const double> x, std::size_t m, std::size_t height, std::size_t width,
                                    std::size_t s) {
  const std::size_t gh = height / s, gw = width / s;
  std::vector<double> out(x.size());
  for (std::size_t c = 0; c < m; ++c)
    for (std::size_t yy = 0; yy < height; ++yy)
      for (std::size_t xx = 0; xx < width; ++xx) {
        const std::size_t i = yy % s, j = xx % s;
        const std::size_t oc = (i * s + j) * m + c;
        out[(oc * gh + yy / s) * gw + xx / s] = x[(c * height + yy) * width + xx];
      }
  return out;
}

double mtl_gain(std::span<const double> model, std::span<const double> stl, std::span<const int> higher_better) {
  double acc = 0.0;
  for (std::size_t t = 0; t < model.size(); ++t) {
    const double sign = higher_better[t] ? 1.0 : -1.0;
    acc += sign * (model[t] - stl[t]) / stl[t];
  }
  return 100.0 * acc / static_cast<double>(model.size());
}

}  // namespace oracle
