#include "mtscan/tensor.hpp"

#include <cmath>
#include <sstream>

#include "mtscan/error.hpp"

namespace mtscan {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  for (auto e : shape)
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
}

void check_finite(std::span<const double> data, const char* op) {
  for (double v : data)
    if (!std::isfinite(v)) throw NumericalError(std::string("non-finite value produced by ") + op);
}

}  // namespace

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

Tensor make_result(Shape shape, std::vector<double> data, std::span<const Tensor> inputs, BackwardFn backward,
                   const char* op) {
  check_finite(data, op);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool any = false;
  if (grad_enabled())
    for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
  if (any) {
    node->requires_grad = true;
    node->backward = std::move(backward);
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.node());
  }
  return Tensor(std::move(node));
}

Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<const Tensor*> inputs,
                   BackwardFn backward, const char* op) {
  std::vector<Tensor> copies;
  copies.reserve(inputs.size());
  for (const Tensor* t : inputs) copies.push_back(t ? *t : Tensor());
  return make_result(std::move(shape), std::move(data), std::span<const Tensor>(copies), std::move(backward), op);
}

}  // namespace detail

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != data.size())
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_shape(shape);
  const auto n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

const Shape& Tensor::shape() const {
  if (!node_) throw ProtocolError("use of an undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return node_ ? node_->data.size() : 0; }

std::span<const double> Tensor::data() const {
  if (!node_) throw ProtocolError("use of an undefined tensor");
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) throw ProtocolError("use of an undefined tensor");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

Tensor Tensor::detach(bool requires_grad) const { return from_data(shape(), node_->data, requires_grad); }

}  // namespace mtscan
