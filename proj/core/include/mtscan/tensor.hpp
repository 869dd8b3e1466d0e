#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mtscan {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// Receives dLoss/dOutput and one accumulation buffer per parent. A buffer is
// null when that parent does not take part in differentiation.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<std::vector<double>* const> parent_grads)>;

// One vertex of the tape. Parents are owned, so holding the loss keeps the
// whole graph alive until backward has run.
struct Node {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<NodePtr> parents;
  BackwardFn backward;
};

// Creates an op result. Throws NumericalError if `data` holds NaN/Inf. The
// backward closure and parent links are dropped when no input requires grad.
Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<const Tensor*> inputs,
                   BackwardFn backward, const char* op);
Tensor make_result(Shape shape, std::vector<double> data, std::span<const Tensor> inputs, BackwardFn backward,
                   const char* op);

}  // namespace detail

bool grad_enabled();

/// While alive, op results on this thread are not recorded on a tape.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major float64 tensor. Copies share storage; values are not
/// modified after creation except through `mutable_data()`, which is reserved
/// for parameter initialisation and optimizer updates.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double at(std::size_t flat_index) const { return data()[flat_index]; }
  double item() const;

  bool requires_grad() const;
  const char* op_name() const;

  /// Copy of the values as a fresh leaf that is not on any tape.
  Tensor detach(bool requires_grad = false) const;

  const detail::Node* id() const { return node_.get(); }
  const detail::NodePtr& node() const { return node_; }

 private:
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}
  friend Tensor detail::make_result(Shape, std::vector<double>, std::span<const Tensor>, detail::BackwardFn,
                                    const char*);

  detail::NodePtr node_;
};

}  // namespace mtscan
