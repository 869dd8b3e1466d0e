#include "mtscan/random.hpp"

namespace mtscan {

Tensor normal_tensor(Shape shape, double stddev, Rng& rng, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (auto& e : v) e = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

Tensor uniform_tensor(Shape shape, double lo, double hi, Rng& rng, bool requires_grad) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& e : v) e = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

}  // namespace mtscan
