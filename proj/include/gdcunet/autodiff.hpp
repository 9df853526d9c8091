// SPDX-License-Identifier: Apache-2.0
/**
 * @file   autodiff.hpp
 * @brief  Reverse-mode differentiation over a recorded operation graph.
 *
 * A Var is a handle to a graph node holding a forward value, an optional
 * gradient and the closure that propagates the node's gradient into its
 * parents. Leaves created with Var::parameter persist across steps; every
 * other node is released after backward() has consumed it.
 *
 * A graph belongs to one thread. Recording can be suspended with NoGradGuard
 * for pure evaluation.
 */
#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "gdcunet/tensor.hpp"

namespace gdc {

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
  bool previous_;
};

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
  const Tensor<T>& input(std::size_t i) const { return parents[i]->value; }
  bool wants_grad(std::size_t i) const { return parents[i]->requires_grad; }
  Tensor<T>& input_grad(std::size_t i) { return parents[i]->grad_buffer(); }
};

template <class T>
class Var {
public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  /// A persistent trainable leaf.
  static Var parameter(Tensor<T> value) { return Var(std::move(value), true); }

  bool valid() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }

  /// Gradient accumulated by backward(); a zero tensor if none reached this node.
  const Tensor<T>& grad() const { return node_->grad_buffer(); }
  Tensor<T>& mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.fill(T(0));
  }

  Node<T>& node() const { return *node_; }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

private:
  std::shared_ptr<Node<T>> node_;
};

/// Creates a graph node. Recording only happens when some input requires a
/// gradient and grad mode is on; otherwise the result is a constant.
template <class T>
Var<T> make_op(const char* name, Tensor<T> value, std::initializer_list<Var<T>> inputs,
               std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->op = name;
  n->leaf = false;
  bool needs = false;
  if (detail::grad_mode())
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (const auto& in : inputs) n->parents.push_back(in.node_ptr());
    n->backward_fn = std::move(backward_fn);
  }
  return Var<T>(std::move(n));
}

/// Propagates d(loss)/d(node) to every node reachable from a scalar loss.
/// Intermediate nodes are detached afterwards; leaf gradients accumulate.
template <class T>
void backward(const Var<T>& loss) {
  if (loss.shape().numel() != 1)
    throw UsageError("backward: loss must be a scalar, got shape " + loss.shape().str());
  if (!loss.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{&loss.node(), 0}};
  seen.insert(&loss.node());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  loss.node().grad_buffer().fill(T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  for (Node<T>* n : order) {
    if (n->leaf) continue;
    n->backward_fn = nullptr;
    n->parents.clear();
    n->grad = Tensor<T>();
  }
}

}  // namespace gdc
