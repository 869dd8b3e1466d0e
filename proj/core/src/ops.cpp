#include "mtscan/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "mtscan/error.hpp"

namespace mtscan {

using detail::make_result;

namespace {

double sigmoid_scalar(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

double softplus_scalar(double v) { return v > 20.0 ? v : std::log1p(std::exp(v)); }

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

}  // namespace

Tensor apply_unary(UnaryOp op, const Tensor& x) {
  const auto in = x.data();
  std::vector<double> out(in.size());
  const char* name = "unary";
  switch (op) {
    case UnaryOp::exp:
      name = "exp";
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::exp(in[i]);
      break;
    case UnaryOp::softplus:
      name = "softplus";
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = softplus_scalar(in[i]);
      break;
    case UnaryOp::sigmoid:
      name = "sigmoid";
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = sigmoid_scalar(in[i]);
      break;
    case UnaryOp::silu:
      name = "silu";
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * sigmoid_scalar(in[i]);
      break;
    case UnaryOp::neg:
      name = "neg";
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = -in[i];
      break;
  }
  auto saved_out = (op == UnaryOp::exp || op == UnaryOp::sigmoid) ? std::make_shared<std::vector<double>>(out)
                                                                    : nullptr;
  auto xin = x.node();
  return make_result(
      x.shape(), std::move(out), {&x},
      [op, xin, saved_out](std::span<const double> g, std::span<std::vector<double>* const> pg) {
        auto& gx = *pg[0];
        const auto& xv = xin->data;
        switch (op) {
          case UnaryOp::exp:
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*saved_out)[i];
            break;
          case UnaryOp::softplus:
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * sigmoid_scalar(xv[i]);
            break;
          case UnaryOp::sigmoid:
            for (std::size_t i = 0; i < g.size(); ++i) {
              const double s = (*saved_out)[i];
              gx[i] += g[i] * s * (1.0 - s);
            }
            break;
          case UnaryOp::silu:
            for (std::size_t i = 0; i < g.size(); ++i) {
              const double s = sigmoid_scalar(xv[i]);
              gx[i] += g[i] * (s + xv[i] * s * (1.0 - s));
            }
            break;
          case UnaryOp::neg:
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] -= g[i];
            break;
        }
      },
      name);
}

Tensor affine(const Tensor& x, double scale, double shift) {
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = scale * in[i] + shift;
  return make_result(
      x.shape(), std::move(out), {&x},
      [scale](std::span<const double> g, std::span<std::vector<double>* const> pg) {
        auto& gx = *pg[0];
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += scale * g[i];
      },
      "affine");
}

namespace {

Tensor matmul_impl(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || (b.rank() != 1 && b.rank() != 2))
    throw ShapeError("matmul expects (M x K)(K x N) or (M x K)(K), got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1);
  const bool vec = b.rank() == 1;
  const std::size_t n = vec ? 1 : b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul inner extents differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  Shape shape = vec ? Shape{m} : Shape{m, n};
  auto an = a.node();
  auto bn = b.node();
  return make_result(
      std::move(shape), std::move(out), {&a, &b},
      [an, bn, m, k, n](std::span<const double> g, std::span<std::vector<double>* const> pg) {
        const auto& av = an->data;
        const auto& bv = bn->data;
        if (pg[0]) {
          auto& ga = *pg[0];
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
              ga[i * k + p] += acc;
            }
        }
        if (pg[1]) {
          auto& gb = *pg[1];
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = av[i * k + p];
              for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
            }
        }
      },
      "matmul");
}

}  // namespace

Tensor apply_binary(BinaryOp op, const Tensor& a, const Tensor& b) {
  if (op == BinaryOp::matmul) return matmul_impl(a, b);

  const bool a_big = is_suffix(b.shape(), a.shape());
  if (!a_big && !is_suffix(a.shape(), b.shape()))
    throw ShapeError("elementwise op on incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const Shape out_shape = a_big ? a.shape() : b.shape();
  const std::size_t n = shape_numel(out_shape);
  const std::size_t na = a.numel(), nb = b.numel();
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(n);
  const char* name = "add";
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[i % na], y = bv[i % nb];
    switch (op) {
      case BinaryOp::add: out[i] = x + y; break;
      case BinaryOp::sub: out[i] = x - y; break;
      default: out[i] = x * y; break;
    }
  }
  if (op == BinaryOp::sub) name = "sub";
  if (op == BinaryOp::mul) name = "mul";
  auto an = a.node();
  auto bn = b.node();
  return make_result(
      out_shape, std::move(out), {&a, &b},
      [op, an, bn, n, na, nb](std::span<const double> g, std::span<std::vector<double>* const> pg) {
        if (pg[0]) {
          auto& ga = *pg[0];
          for (std::size_t i = 0; i < n; ++i) ga[i % na] += op == BinaryOp::mul ? g[i] * bn->data[i % nb] : g[i];
        }
        if (pg[1]) {
          auto& gb = *pg[1];
          for (std::size_t i = 0; i < n; ++i) {
            const double d = op == BinaryOp::mul ? g[i] * an->data[i % na] : (op == BinaryOp::sub ? -g[i] : g[i]);
            gb[i % nb] += d;
          }
        }
      },
      name);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(
      std::move(shape), std::move(out), {&x},
      [](std::span<const double> g, std::span<std::vector<double>* const> pg) {
        auto& gx = *pg[0];
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      },
      "reshape");
}

Tensor gather(const Tensor& x, std::span<const std::size_t> idx, Shape out_shape) {
  if (shape_numel(out_shape) != idx.size())
    throw ShapeError("gather index length " + std::to_string(idx.size()) + " does not match " + shape_str(out_shape));
  const auto in = x.data();
  std::vector<double> out(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= in.size()) throw ShapeError("gather index out of range");
    out[k] = in[idx[k]];
  }
  auto index = std::make_shared<std::vector<std::size_t>>(idx.begin(), idx.end());
  return make_result(
      std::move(out_shape), std::move(out), {&x},
      [index](std::span<const double> g, std::span<std::vector<double>* const> pg) {
        auto& gx = *pg[0];
        const auto& ix = *index;
        for (std::size_t k = 0; k < ix.size(); ++k) gx[ix[k]] += g[k];
      },
      "gather");
}

bool is_permutation(std::span<const std::size_t> idx) {
  std::vector<char> hit(idx.size(), 0);
  for (auto i : idx) {
    if (i >= idx.size() || hit[i]) return false;
    hit[i] = 1;
  }
  return true;
}

std::vector<std::size_t> inverse_permutation(std::span<const std::size_t> idx) {
  if (!is_permutation(idx)) throw PermutationError("index map is not a bijection");
  std::vector<std::size_t> inv(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) inv[idx[k]] = k;
  return inv;
}

Tensor gather_permute(const Tensor& x, std::span<const std::size_t> idx, Shape out_shape) {
  if (idx.size() != x.numel() || !is_permutation(idx))
    throw PermutationError("gather_permute index of length " + std::to_string(idx.size()) +
                           " is not a bijection on " + std::to_string(x.numel()) + " elements");
  if (shape_numel(out_shape) != idx.size())
    throw ShapeError("gather_permute output shape " + shape_str(out_shape) + " has wrong size");
  const auto in = x.data();
  std::vector<double> out(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) out[k] = in[idx[k]];
  auto index = std::make_shared<std::vector<std::size_t>>(idx.begin(), idx.end());
  return make_result(
      std::move(out_shape), std::move(out), {&x},
      [index](std::span<const double> g, std::span<std::vector<double>* const> pg) {
        auto& gx = *pg[0];
        const auto& ix = *index;
        for (std::size_t k = 0; k < ix.size(); ++k) gx[ix[k]] += g[k];
      },
      "gather_permute");
}

Tensor gather_permute_axis(const Tensor& x, std::size_t axis, std::span<const std::size_t> idx) {
  const auto& s = x.shape();
  if (axis >= s.size()) throw ShapeError("axis out of range in gather_permute_axis");
  if (idx.size() != s[axis] || !is_permutation(idx))
    throw PermutationError("axis permutation is not a bijection on extent " + std::to_string(s[axis]));
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= s[a];
  for (std::size_t a = axis + 1; a < s.size(); ++a) inner *= s[a];
  const std::size_t ext = s[axis];
  std::vector<std::size_t> full(x.numel());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < ext; ++k)
      for (std::size_t i = 0; i < inner; ++i) full[(o * ext + k) * inner + i] = (o * ext + idx[k]) * inner + i;
  return gather_permute(x, full, s);
}

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t lead = 0;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    if (p.rank() != tail.size() + 1 || !std::equal(tail.begin(), tail.end(), p.shape().begin() + 1))
      throw ShapeError("concat parts disagree on trailing extents: " + shape_str(p.shape()));
    lead += p.dim(0);
    sizes.push_back(p.numel());
  }
  std::vector<double> out;
  out.reserve(lead * shape_numel(tail));
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Shape shape{lead};
  shape.insert(shape.end(), tail.begin(), tail.end());
  return make_result(
      std::move(shape), std::move(out), parts,
      [sizes](std::span<const double> g, std::span<std::vector<double>* const> pg) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < sizes.size(); ++i) {
          if (pg[i])
            for (std::size_t k = 0; k < sizes[i]; ++k) (*pg[i])[k] += g[off + k];
          off += sizes[i];
        }
      },
      "concat");
}

Tensor slice(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() == 0 || begin >= end || end > x.dim(0))
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
                     shape_str(x.shape()));
  Shape shape = x.shape();
  const std::size_t row = x.numel() / shape[0];
  shape[0] = end - begin;
  std::vector<double> out(x.data().begin() + begin * row, x.data().begin() + end * row);
  const std::size_t off = begin * row;
  return make_result(
      std::move(shape), std::move(out), {&x},
      [off](std::span<const double> g, std::span<std::vector<double>* const> pg) {
        auto& gx = *pg[0];
        for (std::size_t k = 0; k < g.size(); ++k) gx[off + k] += g[k];
      },
      "slice");
}

Tensor channel_linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() < 1 || weight.rank() != 2 || weight.dim(1) != x.dim(0))
    throw ShapeError("channel_linear: weight " + shape_str(weight.shape()) + " does not match input " +
                     shape_str(x.shape()));
  const std::size_t cin = x.dim(0), cout = weight.dim(0), pos = x.numel() / cin;
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout))
    throw ShapeError("channel_linear: bias must have length " + std::to_string(cout));
  const auto xv = x.data();
  const auto wv = weight.data();
  std::vector<double> out(cout * pos, 0.0);
  for (std::size_t o = 0; o < cout; ++o) {
    double* row = out.data() + o * pos;
    if (bias.defined()) std::fill(row, row + pos, bias.data()[o]);
    for (std::size_t c = 0; c < cin; ++c) {
      const double w = wv[o * cin + c];
      if (w == 0.0) continue;
      const double* xr = xv.data() + c * pos;
      for (std::size_t p = 0; p < pos; ++p) row[p] += w * xr[p];
    }
  }
  Shape shape = x.shape();
  shape[0] = cout;
  auto xn = x.node();
  auto wn = weight.node();
  return make_result(
      std::move(shape), std::move(out), {&x, &weight, &bias},
      [xn, wn, cin, cout, pos](std::span<const double> g, std::span<std::vector<double>* const> pg) {
        const auto& xv = xn->data;
        const auto& wv = wn->data;
        if (pg[0]) {
          auto& gx = *pg[0];
          for (std::size_t o = 0; o < cout; ++o) {
            const double* gr = g.data() + o * pos;
            for (std::size_t c = 0; c < cin; ++c) {
              const double w = wv[o * cin + c];
              double* gxr = gx.data() + c * pos;
              for (std::size_t p = 0; p < pos; ++p) gxr[p] += w * gr[p];
            }
          }
        }
        if (pg[1]) {
          auto& gw = *pg[1];
          for (std::size_t o = 0; o < cout; ++o) {
            const double* gr = g.data() + o * pos;
            for (std::size_t c = 0; c < cin; ++c) {
              const double* xr = xv.data() + c * pos;
              double acc = 0.0;
              for (std::size_t p = 0; p < pos; ++p) acc += gr[p] * xr[p];
              gw[o * cin + c] += acc;
            }
          }
        }
        if (pg[2]) {
          auto& gb = *pg[2];
          for (std::size_t o = 0; o < cout; ++o) {
            const double* gr = g.data() + o * pos;
            gb[o] += std::accumulate(gr, gr + pos, 0.0);
          }
        }
      },
      "channel_linear");
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  const std::size_t c = x.dim(0), pos = x.numel() / c;
  if (gamma.numel() != c || beta.numel() != c)
    throw ShapeError("layer_norm: gamma/beta length must equal channel extent " + std::to_string(c));
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(pos);
  std::vector<double> mu(pos, 0.0), var(pos, 0.0);
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t p = 0; p < pos; ++p) mu[p] += xv[k * pos + p];
  for (auto& m : mu) m /= static_cast<double>(c);
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t p = 0; p < pos; ++p) {
      const double d = xv[k * pos + p] - mu[p];
      var[p] += d * d;
    }
  for (std::size_t p = 0; p < pos; ++p) (*inv_std)[p] = 1.0 / std::sqrt(var[p] / static_cast<double>(c) + kLayerNormEps);
  std::vector<double> out(x.numel());
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t p = 0; p < pos; ++p) {
      const double h = (xv[k * pos + p] - mu[p]) * (*inv_std)[p];
      (*xhat)[k * pos + p] = h;
      out[k * pos + p] = gv[k] * h + bv[k];
    }
  auto gn = gamma.node();
  return make_result(
      x.shape(), std::move(out), {&x, &gamma, &beta},
      [gn, xhat, inv_std, c, pos](std::span<const double> g, std::span<std::vector<double>* const> pg) {
        const auto& h = *xhat;
        const auto& gv = gn->data;
        if (pg[1]) {
          auto& gg = *pg[1];
          for (std::size_t k = 0; k < c; ++k) {
            double acc = 0.0;
            for (std::size_t p = 0; p < pos; ++p) acc += g[k * pos + p] * h[k * pos + p];
            gg[k] += acc;
          }
        }
        if (pg[2]) {
          auto& gb = *pg[2];
          for (std::size_t k = 0; k < c; ++k) {
            double acc = 0.0;
            for (std::size_t p = 0; p < pos; ++p) acc += g[k * pos + p];
            gb[k] += acc;
          }
        }
        if (pg[0]) {
          auto& gx = *pg[0];
          std::vector<double> m1(pos, 0.0), m2(pos, 0.0);
          for (std::size_t k = 0; k < c; ++k)
            for (std::size_t p = 0; p < pos; ++p) {
              const double gh = g[k * pos + p] * gv[k];
              m1[p] += gh;
              m2[p] += gh * h[k * pos + p];
            }
          const double inv_c = 1.0 / static_cast<double>(c);
          for (std::size_t k = 0; k < c; ++k)
            for (std::size_t p = 0; p < pos; ++p) {
              const double gh = g[k * pos + p] * gv[k];
              gx[k * pos + p] += (*inv_std)[p] * (gh - m1[p] * inv_c - h[k * pos + p] * m2[p] * inv_c);
            }
        }
      },
      "layer_norm");
}

Tensor sum(const Tensor& x) {
  const auto v = x.data();
  const double s = std::accumulate(v.begin(), v.end(), 0.0);
  return make_result(
      {1}, {s}, {&x},
      [](std::span<const double> g, std::span<std::vector<double>* const> pg) {
        for (auto& e : *pg[0]) e += g[0];
      },
      "sum");
}

Tensor mean(const Tensor& x) { return affine(sum(x), 1.0 / static_cast<double>(x.numel()), 0.0); }

Tensor upsample_nearest(const Tensor& x, std::size_t factor) {
  if (x.rank() != 3) throw ShapeError("upsample_nearest expects C x H x W");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = h * factor, ow = w * factor;
  std::vector<std::size_t> idx(c * oh * ow);
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) idx[(k * oh + y) * ow + xx] = (k * h + y / factor) * w + xx / factor;
  return gather(x, idx, {c, oh, ow});
}

namespace {

struct Tap {
  std::size_t lo, hi;
  double frac;
};

std::vector<Tap> axis_taps(std::size_t coarse, std::size_t stride, std::size_t fine) {
  std::vector<Tap> taps(fine);
  for (std::size_t y = 0; y < fine; ++y) {
    const std::size_t lo = std::min(y / stride, coarse - 1);
    if (lo + 1 < coarse) {
      taps[y] = {lo, lo + 1, static_cast<double>(y - lo * stride) / static_cast<double>(stride)};
    } else {
      taps[y] = {lo, lo, 0.0};
    }
  }
  return taps;
}

}  // namespace

Tensor bilinear_restore(const Tensor& x, std::size_t stride, std::size_t height, std::size_t width) {
  if (x.rank() != 3 || stride == 0) throw ShapeError("bilinear_restore expects C x h x w and stride > 0");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto ty = std::make_shared<std::vector<Tap>>(axis_taps(h, stride, height));
  auto tx = std::make_shared<std::vector<Tap>>(axis_taps(w, stride, width));
  const auto in = x.data();
  std::vector<double> out(c * height * width);
  for (std::size_t k = 0; k < c; ++k) {
    const double* src = in.data() + k * h * w;
    for (std::size_t y = 0; y < height; ++y) {
      const Tap& a = (*ty)[y];
      for (std::size_t xx = 0; xx < width; ++xx) {
        const Tap& b = (*tx)[xx];
        const double top = (1.0 - b.frac) * src[a.lo * w + b.lo] + b.frac * src[a.lo * w + b.hi];
        const double bot = (1.0 - b.frac) * src[a.hi * w + b.lo] + b.frac * src[a.hi * w + b.hi];
        out[(k * height + y) * width + xx] = (1.0 - a.frac) * top + a.frac * bot;
      }
    }
  }
  return make_result(
      {c, height, width}, std::move(out), {&x},
      [ty, tx, c, h, w, height, width](std::span<const double> g, std::span<std::vector<double>* const> pg) {
        auto& gx = *pg[0];
        for (std::size_t k = 0; k < c; ++k) {
          double* dst = gx.data() + k * h * w;
          for (std::size_t y = 0; y < height; ++y) {
            const Tap& a = (*ty)[y];
            for (std::size_t xx = 0; xx < width; ++xx) {
              const Tap& b = (*tx)[xx];
              const double gv = g[(k * height + y) * width + xx];
              dst[a.lo * w + b.lo] += gv * (1.0 - a.frac) * (1.0 - b.frac);
              dst[a.lo * w + b.hi] += gv * (1.0 - a.frac) * b.frac;
              dst[a.hi * w + b.lo] += gv * a.frac * (1.0 - b.frac);
              dst[a.hi * w + b.hi] += gv * a.frac * b.frac;
            }
          }
        }
      },
      "bilinear_restore");
}

}  // namespace mtscan
