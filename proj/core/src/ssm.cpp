#include "mtscan/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "mtscan/error.hpp"
#include "mtscan/ops.hpp"

namespace mtscan {

using detail::make_result;

namespace {

double sigmoid_scalar(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

double softplus_scalar(double v) { return v > 20.0 ? v : std::log1p(std::exp(v)); }

double inverse_softplus(double y) { return y + std::log(-std::expm1(-y)); }

}  // namespace

SSMParams SSMParams::init(std::size_t dim, std::size_t state, Rng& rng) {
  if (dim == 0 || state == 0) throw ConfigError("SSM head needs positive width and state size");
  SSMParams p;
  std::vector<double> a(dim * state);
  for (std::size_t c = 0; c < dim; ++c)
    for (std::size_t k = 0; k < state; ++k) a[c * state + k] = std::log(static_cast<double>(k + 1));
  p.a_log = Tensor::from_data({dim, state}, std::move(a), true);
  p.d_skip = Tensor::full({dim}, 1.0, true);
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(dim));
  p.w_b = normal_tensor({dim, state}, proj_std, rng, true);
  p.w_c = normal_tensor({dim, state}, proj_std, rng, true);
  p.w_delta = normal_tensor({dim}, proj_std, rng, true);
  p.delta_up = uniform_tensor({dim}, -0.5, 0.5, rng, true);
  std::uniform_real_distribution<double> log_dt(std::log(1e-3), std::log(1e-1));
  std::vector<double> bias(dim);
  for (auto& b : bias) b = inverse_softplus(std::exp(log_dt(rng)));
  p.delta_bias = Tensor::from_data({dim}, std::move(bias), true);
  return p;
}

std::vector<Tensor> SSMParams::tensors() const { return {a_log, d_skip, w_b, w_c, w_delta, delta_up, delta_bias}; }

Discretized discretize(std::span<const double> delta, std::span<const double> a_log, std::span<const double> b,
                       std::size_t length, std::size_t dim, std::size_t state) {
  if (delta.size() != length * dim || a_log.size() != dim * state || b.size() != length * state)
    throw ShapeError("discretize: inconsistent extents");
  Discretized out;
  out.length = length;
  out.dim = dim;
  out.state = state;
  out.a_bar.resize(length * dim * state);
  out.b_bar.resize(length * dim * state);
  for (std::size_t t = 0; t < length; ++t)
    for (std::size_t c = 0; c < dim; ++c) {
      const double dt = delta[t * dim + c];
      if (!(dt > 0.0)) throw NumericalError("discretize: step size must be positive");
      for (std::size_t k = 0; k < state; ++k) {
        const double a = -std::exp(a_log[c * state + k]);
        out.a_bar[(t * dim + c) * state + k] = std::exp(dt * a);
        out.b_bar[(t * dim + c) * state + k] = dt * b[t * state + k];
      }
    }
  return out;
}

namespace {

struct ScanCache {
  std::size_t length, dim, state;
  std::vector<double> r;      // L
  std::vector<double> z;      // L x d, pre-softplus
  std::vector<double> delta;  // L x d
  std::vector<double> bv;     // L x n
  std::vector<double> cv;     // L x n
  std::vector<double> a;      // d x n, A = -exp(a_log)
  std::vector<double> abar;   // L x d x n
  std::vector<double> h;      // L x d x n
};

}  // namespace

Tensor selective_scan(const Tensor& x, const SSMParams& p) {
  if (x.rank() != 2) throw ShapeError("selective_scan expects L x d input, got " + shape_str(x.shape()));
  const std::size_t L = x.dim(0), d = x.dim(1), n = p.state();
  if (p.dim() != d)
    throw ShapeError("selective_scan: token width " + std::to_string(d) + " but head width " +
                     std::to_string(p.dim()));
  const auto xv = x.data();
  const auto alog = p.a_log.data();
  const auto dskip = p.d_skip.data();
  const auto wb = p.w_b.data();
  const auto wc = p.w_c.data();
  const auto wdel = p.w_delta.data();
  const auto up = p.delta_up.data();
  const auto dbias = p.delta_bias.data();

  auto cache = std::make_shared<ScanCache>();
  auto& cc = *cache;
  cc.length = L;
  cc.dim = d;
  cc.state = n;
  cc.r.assign(L, 0.0);
  cc.z.resize(L * d);
  cc.delta.resize(L * d);
  cc.bv.assign(L * n, 0.0);
  cc.cv.assign(L * n, 0.0);
  cc.a.resize(d * n);
  cc.abar.resize(L * d * n);
  cc.h.resize(L * d * n);
  for (std::size_t i = 0; i < d * n; ++i) cc.a[i] = -std::exp(alog[i]);

  std::vector<double> y(L * d, 0.0);
  for (std::size_t t = 0; t < L; ++t) {
    const double* xt = xv.data() + t * d;
    double r = 0.0;
    for (std::size_t j = 0; j < d; ++j) r += xt[j] * wdel[j];
    cc.r[t] = r;
    double* bt = cc.bv.data() + t * n;
    double* ct = cc.cv.data() + t * n;
    for (std::size_t j = 0; j < d; ++j) {
      const double xj = xt[j];
      for (std::size_t k = 0; k < n; ++k) {
        bt[k] += xj * wb[j * n + k];
        ct[k] += xj * wc[j * n + k];
      }
    }
    for (std::size_t c = 0; c < d; ++c) {
      const double z = r * up[c] + dbias[c];
      const double dt = softplus_scalar(z);
      cc.z[t * d + c] = z;
      cc.delta[t * d + c] = dt;
      const double bx = dt * xt[c];
      double* ht = cc.h.data() + (t * d + c) * n;
      double* at = cc.abar.data() + (t * d + c) * n;
      const double* hp = t ? cc.h.data() + ((t - 1) * d + c) * n : nullptr;
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double abar = std::exp(dt * cc.a[c * n + k]);
        at[k] = abar;
        ht[k] = (hp ? abar * hp[k] : 0.0) + bx * bt[k];
        acc += ct[k] * ht[k];
      }
      y[t * d + c] = acc + dskip[c] * xt[c];
    }
  }

  auto xn = x.node();
  auto params = std::make_shared<SSMParams>(p);
  const auto ins = std::vector<Tensor>{x, p.a_log, p.d_skip, p.w_b, p.w_c, p.w_delta, p.delta_up, p.delta_bias};
  return make_result(
      {L, d}, std::move(y), std::span<const Tensor>(ins),
      [xn, params, cache](std::span<const double> gy, std::span<std::vector<double>* const> pg) {
        const auto& cc = *cache;
        const std::size_t L = cc.length, d = cc.dim, n = cc.state;
        const auto& xv = xn->data;
        const auto dskip = params->d_skip.data();
        const auto wb = params->w_b.data();
        const auto wc = params->w_c.data();
        const auto wdel = params->w_delta.data();
        const auto up = params->delta_up.data();

        std::vector<double> gx(L * d, 0.0), ga(d * n, 0.0), gdskip(d, 0.0), gwb(d * n, 0.0), gwc(d * n, 0.0),
            gwdel(d, 0.0), gup(d, 0.0), gbias(d, 0.0);
        std::vector<double> carry(d * n, 0.0), gdelta(d), gbv(n), gcv(n);

        for (std::size_t tt = L; tt-- > 0;) {
          const double* xt = xv.data() + tt * d;
          const double* bt = cc.bv.data() + tt * n;
          const double* ct = cc.cv.data() + tt * n;
          std::fill(gdelta.begin(), gdelta.end(), 0.0);
          std::fill(gbv.begin(), gbv.end(), 0.0);
          std::fill(gcv.begin(), gcv.end(), 0.0);
          for (std::size_t c = 0; c < d; ++c) {
            const double g = gy[tt * d + c];
            gdskip[c] += g * xt[c];
            gx[tt * d + c] += g * dskip[c];
            const double dt = cc.delta[tt * d + c];
            const double* ht = cc.h.data() + (tt * d + c) * n;
            const double* at = cc.abar.data() + (tt * d + c) * n;
            const double* hp = tt ? cc.h.data() + ((tt - 1) * d + c) * n : nullptr;
            double* cr = carry.data() + c * n;
            double gd = 0.0, gxc = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
              gcv[k] += g * ht[k];
              const double gh = g * ct[k] + cr[k];
              if (hp) {
                const double gab = gh * hp[k] * at[k];
                gd += gab * cc.a[c * n + k];
                ga[c * n + k] += gab * dt;
              }
              gd += gh * bt[k] * xt[c];
              gbv[k] += gh * dt * xt[c];
              gxc += gh * dt * bt[k];
              cr[k] = gh * at[k];
            }
            gdelta[c] = gd;
            gx[tt * d + c] += gxc;
          }
          double gr = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            const double gz = gdelta[c] * sigmoid_scalar(cc.z[tt * d + c]);
            gup[c] += gz * cc.r[tt];
            gbias[c] += gz;
            gr += gz * up[c];
          }
          for (std::size_t j = 0; j < d; ++j) {
            double acc = gr * wdel[j];
            gwdel[j] += gr * xt[j];
            for (std::size_t k = 0; k < n; ++k) {
              acc += gbv[k] * wb[j * n + k] + gcv[k] * wc[j * n + k];
              gwb[j * n + k] += xt[j] * gbv[k];
              gwc[j * n + k] += xt[j] * gcv[k];
            }
            gx[tt * d + j] += acc;
          }
        }
        auto accumulate = [](std::vector<double>* dst, const std::vector<double>& src) {
          if (!dst) return;
          for (std::size_t i = 0; i < src.size(); ++i) (*dst)[i] += src[i];
        };
        accumulate(pg[0], gx);
        if (pg[1])
          for (std::size_t i = 0; i < d * n; ++i) (*pg[1])[i] += ga[i] * cc.a[i];
        accumulate(pg[2], gdskip);
        accumulate(pg[3], gwb);
        accumulate(pg[4], gwc);
        accumulate(pg[5], gwdel);
        accumulate(pg[6], gup);
        accumulate(pg[7], gbias);
      },
      "selective_scan");
}

std::string to_string(ScanDirection dir) {
  switch (dir) {
    case ScanDirection::row_fwd: return "row_fwd";
    case ScanDirection::row_rev: return "row_rev";
    case ScanDirection::col_fwd: return "col_fwd";
    case ScanDirection::col_rev: return "col_rev";
  }
  return "?";
}

ScanDirection parse_direction(const std::string& name) {
  for (auto d : kAllDirections)
    if (to_string(d) == name) return d;
  throw ConfigError("unknown scan direction '" + name + "'");
}

std::vector<std::size_t> direction_indices(ScanDirection dir, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw ShapeError("direction_indices needs a non-empty grid");
  const std::size_t hw = height * width;
  std::vector<std::size_t> idx(hw);
  const bool by_column = dir == ScanDirection::col_fwd || dir == ScanDirection::col_rev;
  for (std::size_t k = 0; k < hw; ++k) idx[k] = by_column ? (k % height) * width + k / height : k;
  if (dir == ScanDirection::row_rev || dir == ScanDirection::col_rev) std::reverse(idx.begin(), idx.end());
  return idx;
}

Tensor serialize_map(const Tensor& x, std::span<const std::size_t> order) {
  if (x.rank() != 3) throw ShapeError("serialize_map expects C x H x W");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  if (order.size() != hw) throw PermutationError("scan order length does not match the grid");
  std::vector<std::size_t> idx(c * hw);
  for (std::size_t l = 0; l < hw; ++l)
    for (std::size_t k = 0; k < c; ++k) idx[l * c + k] = k * hw + order[l];
  return gather_permute(x, idx, {hw, c});
}

Tensor restore_map(const Tensor& tokens, std::span<const std::size_t> order, std::size_t height, std::size_t width) {
  if (tokens.rank() != 2) throw ShapeError("restore_map expects L x C tokens");
  const std::size_t hw = height * width, c = tokens.dim(1);
  if (tokens.dim(0) != hw || order.size() != hw) throw ShapeError("restore_map: sequence length mismatch");
  std::vector<std::size_t> idx(c * hw);
  for (std::size_t l = 0; l < hw; ++l)
    for (std::size_t k = 0; k < c; ++k) idx[k * hw + order[l]] = l * c + k;
  return gather_permute(tokens, idx, {c, height, width});
}

SS2DHeads init_ss2d_heads(std::size_t dim, std::size_t state, Rng& rng) {
  return {SSMParams::init(dim, state, rng), SSMParams::init(dim, state, rng), SSMParams::init(dim, state, rng),
          SSMParams::init(dim, state, rng)};
}

Tensor ss2d(const Tensor& x, const SS2DHeads& heads) {
  if (x.rank() != 3) throw ShapeError("ss2d expects C x H x W, got " + shape_str(x.shape()));
  const std::size_t h = x.dim(1), w = x.dim(2);
  Tensor total;
  for (std::size_t i = 0; i < kAllDirections.size(); ++i) {
    const auto order = direction_indices(kAllDirections[i], h, w);
    Tensor y = restore_map(selective_scan(serialize_map(x, order), heads[i]), order, h, w);
    total = total.defined() ? add(total, y) : y;
  }
  return total;
}

}  // namespace mtscan
