#pragma once

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "mtscan/tensor.hpp"

namespace mtscan {

/// dLoss/dLeaf for every leaf reached by `backward`.
class Gradients {
 public:
  /// Null when the tensor was not reached.
  const std::vector<double>* find(const Tensor& t) const;
  /// Gradient values; zeros for tensors the loss does not depend on.
  std::vector<double> of(const Tensor& t) const;
  std::size_t size() const { return grads_.size(); }

 private:
  friend Gradients backward(const Tensor& loss);
  std::unordered_map<const detail::Node*, std::vector<double>> grads_;
};

/// Reverse-mode sweep from a scalar loss. Each node on the tape is visited
/// once in reverse topological order; fan-out accumulates. Throws ShapeError
/// when `loss` is not a scalar.
Gradients backward(const Tensor& loss);

/// Central-difference check of a scalar function of one tensor. Returns
/// max_i |analytic_i - numeric_i| / max(1, |analytic_i|).
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

struct GradCheckOptions {
  double step = 1e-5;
  /// Per-tensor cap on checked coordinates; chosen uniformly at random when
  /// the tensor is larger. 0 checks everything.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

/// Same measure over the coordinates of several leaf tensors, perturbed in
/// place (and restored) while `loss_fn` is re-evaluated.
double grad_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> leaves,
                  const GradCheckOptions& options = {});

}  // namespace mtscan
