#include "mtscan/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_set>

#include "mtscan/error.hpp"

namespace mtscan {

const std::vector<double>* Gradients::find(const Tensor& t) const {
  auto it = grads_.find(t.id());
  return it == grads_.end() ? nullptr : &it->second;
}

std::vector<double> Gradients::of(const Tensor& t) const {
  if (const auto* g = find(t)) return *g;
  return std::vector<double>(t.numel(), 0.0);
}

namespace {

// Post-order DFS restricted to nodes that take part in differentiation.
std::vector<detail::Node*> topo_order(detail::Node* root) {
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p && p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

Gradients backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ShapeError("backward requires a scalar loss, got " + (loss.defined() ? shape_str(loss.shape()) : "undefined"));
  Gradients out;
  if (!loss.requires_grad()) return out;

  auto* root = const_cast<detail::Node*>(loss.id());
  const auto order = topo_order(root);
  auto& grads = out.grads_;
  grads[root] = {1.0};

  std::vector<std::vector<double>*> parent_bufs;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    auto git = grads.find(node);
    if (git == grads.end()) continue;
    if (!node->backward) continue;  // leaf: keep its gradient

    const std::vector<double> g = std::move(git->second);
    grads.erase(git);
    parent_bufs.assign(node->parents.size(), nullptr);
    for (std::size_t i = 0; i < node->parents.size(); ++i) {
      detail::Node* p = node->parents[i].get();
      if (!p || !p->requires_grad) continue;
      auto& buf = grads[p];
      if (buf.empty()) buf.assign(p->data.size(), 0.0);
      parent_bufs[i] = &buf;
    }
    node->backward(g, parent_bufs);
  }
  for (const auto& [node, g] : grads)
    for (double v : g)
      if (!std::isfinite(v)) throw NumericalError("non-finite gradient");
  return out;
}

namespace {

double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  const Tensor leaf = x.detach(true);
  const auto grads = backward(f(leaf));
  const auto analytic = grads.of(leaf);
  double worst = 0.0;
  std::vector<double> probe(leaf.data().begin(), leaf.data().end());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double up = f(Tensor::from_data(leaf.shape(), probe)).item();
    probe[i] = saved - h;
    const double down = f(Tensor::from_data(leaf.shape(), probe)).item();
    probe[i] = saved;
    worst = std::max(worst, rel_err(analytic[i], (up - down) / (2.0 * h)));
  }
  return worst;
}

double grad_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> leaves,
                  const GradCheckOptions& options) {
  const auto grads = backward(loss_fn());
  std::mt19937_64 rng(options.seed);
  double worst = 0.0;
  for (auto& leaf : leaves) {
    const auto analytic = grads.of(leaf);
    std::vector<std::size_t> coords(leaf.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_tensor && coords.size() > options.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_tensor);
    }
    auto data = leaf.mutable_data();
    for (auto i : coords) {
      const double saved = data[i];
      data[i] = saved + options.step;
      const double up = loss_fn().item();
      data[i] = saved - options.step;
      const double down = loss_fn().item();
      data[i] = saved;
      worst = std::max(worst, rel_err(analytic[i], (up - down) / (2.0 * options.step)));
    }
  }
  return worst;
}

}  // namespace mtscan
