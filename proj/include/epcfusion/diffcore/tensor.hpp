#pragma once

// Tape-free reverse-mode autodiff: every op output owns a closure that pushes
// its gradient into its parents. backward() orders the graph topologically.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "epcfusion/error.hpp"

namespace epcfusion::diffcore {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct Node {
  Matrix value;
  Matrix grad;  // empty until first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Matrix& delta) {
    if (!requires_grad) return;
    if (grad.size() == 0) {
      grad = delta;
    } else {
      grad += delta;
    }
  }

  void accumulate(Matrix&& delta) {
    if (!requires_grad) return;
    if (grad.size() == 0) {
      grad = std::move(delta);
    } else {
      grad += delta;
    }
  }
};

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Matrix value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Tensor(std::move(node));
  }

  static Tensor parameter(Matrix value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    return Tensor(std::move(node));
  }

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Matrix& mutable_grad() { return node_->grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  bool requires_grad() const { return node_->requires_grad; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  double item() const {
    if (node_->value.size() != 1) fail(ErrorKind::ShapeError, "item() on non-scalar tensor");
    return node_->value(0, 0);
  }
  void zero_grad() { node_->grad.resize(0, 0); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;

  template <typename Backward>
  friend Tensor make_result(Matrix value, std::vector<Tensor> parents, Backward backward);
};

// Builds an op output. The graph edge is only recorded when gradients are
// enabled and some parent needs them.
template <typename Backward>
Tensor make_result(Matrix value, std::vector<Tensor> parents, Backward backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->is_leaf = false;
  if (grad_enabled()) {
    for (const Tensor& p : parents) {
      if (p.defined() && p.requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
  }
  if (node->requires_grad) {
    node->parents.reserve(parents.size());
    for (Tensor& p : parents) node->parents.push_back(p.node_);
    node->backward_fn = std::move(backward);
  }
  return Tensor(std::move(node));
}

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) fail(ErrorKind::ShapeError, what);
}

/// Reverse pass from `root`, seeded with `seed` (ones when omitted).
/// Intermediate gradients are reset first so the same graph can be
/// differentiated more than once; leaf gradients accumulate.
inline void backward(const Tensor& root, const Matrix* seed = nullptr) {
  if (!root.defined() || !root.requires_grad()) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.push_back({parent, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* node : order) {
    if (!node->is_leaf) node->grad.resize(0, 0);
  }
  Node& top = *root.node();
  if (seed != nullptr) {
    require_shape(seed->rows() == top.value.rows() && seed->cols() == top.value.cols(),
                  "backward seed shape mismatch");
    top.grad = *seed;
  } else {
    top.grad = Matrix::Ones(top.value.rows(), top.value.cols());
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->is_leaf || !node->backward_fn) continue;
    if (node->grad.size() == 0) node->grad = Matrix::Zero(node->value.rows(), node->value.cols());
    node->backward_fn(*node);
  }
}

}  // namespace epcfusion::diffcore
