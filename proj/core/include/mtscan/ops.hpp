#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mtscan/tensor.hpp"

namespace mtscan {

enum class UnaryOp { exp, softplus, sigmoid, silu, neg };

Tensor apply_unary(UnaryOp op, const Tensor& x);
inline Tensor exp(const Tensor& x) { return apply_unary(UnaryOp::exp, x); }
inline Tensor softplus(const Tensor& x) { return apply_unary(UnaryOp::softplus, x); }
inline Tensor sigmoid(const Tensor& x) { return apply_unary(UnaryOp::sigmoid, x); }
inline Tensor silu(const Tensor& x) { return apply_unary(UnaryOp::silu, x); }
inline Tensor neg(const Tensor& x) { return apply_unary(UnaryOp::neg, x); }

/// scale * x + shift, elementwise.
Tensor affine(const Tensor& x, double scale, double shift);

enum class BinaryOp { add, sub, mul, matmul };

/// Elementwise ops accept equal shapes, or one operand whose shape is a
/// trailing suffix of the other's (broadcast over the leading axes).
/// matmul takes (M x K)(K x N) or (M x K)(K).
Tensor apply_binary(BinaryOp op, const Tensor& a, const Tensor& b);
inline Tensor add(const Tensor& a, const Tensor& b) { return apply_binary(BinaryOp::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return apply_binary(BinaryOp::sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return apply_binary(BinaryOp::mul, a, b); }
inline Tensor matmul(const Tensor& a, const Tensor& b) { return apply_binary(BinaryOp::matmul, a, b); }

Tensor reshape(const Tensor& x, Shape shape);

/// out[k] = x[idx[k]] for an arbitrary index map (repeats allowed); the
/// backward pass scatter-adds.
Tensor gather(const Tensor& x, std::span<const std::size_t> idx, Shape out_shape);

/// out[k] = x[idx[k]] where idx must be a bijection on [0, numel). The
/// backward pass routes gradients through the inverse permutation. Throws
/// PermutationError otherwise.
Tensor gather_permute(const Tensor& x, std::span<const std::size_t> idx, Shape out_shape);

/// Permutes one axis of x: out[..., k, ...] = x[..., idx[k], ...].
Tensor gather_permute_axis(const Tensor& x, std::size_t axis, std::span<const std::size_t> idx);

bool is_permutation(std::span<const std::size_t> idx);
std::vector<std::size_t> inverse_permutation(std::span<const std::size_t> idx);

/// Concatenation / slicing along axis 0.
Tensor concat(std::span<const Tensor> parts);
Tensor slice(const Tensor& x, std::size_t begin, std::size_t end);

/// Per-position linear map over the leading (channel) axis:
/// x is C x (spatial...), weight O x C, bias O or undefined. Result O x (spatial...).
Tensor channel_linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

inline constexpr double kLayerNormEps = 1e-5;

/// Normalises over axis 0 independently at each position, then applies
/// gamma/beta (length C).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Nearest-neighbour upsampling of C x h x w by an integer factor.
Tensor upsample_nearest(const Tensor& x, std::size_t factor);

/// Bilinear restore of a coarse C x h x w grid whose cell (i, j) sits at
/// fine pixel (i*stride, j*stride). Pixels past the last anchor clamp to it.
Tensor bilinear_restore(const Tensor& x, std::size_t stride, std::size_t height, std::size_t width);

}  // namespace mtscan
