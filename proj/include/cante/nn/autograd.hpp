#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cante/nn/tensor.hpp"

namespace cante::nn {

/// Thread-local switch; while disabled, ops record no graph.
class GradMode {
 public:
  static bool enabled() { return flag(); }
  static void set(bool on) { flag() = on; }

 private:
  static bool& flag() {
    thread_local bool on = true;
    return on;
  }
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set(false); }
  ~NoGradGuard() { GradMode::set(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor<Scalar>& ensure_grad() {
    if (grad.size() != value.size()) grad = Tensor<Scalar>::zeros(value.shape());
    return grad;
  }
};

/// Handle to a node of the autodiff graph.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<Scalar>> node) : node_(std::move(node)) {}

  static Var leaf(Tensor<Scalar> value, bool requires_grad = false) {
    auto n = std::make_shared<Node<Scalar>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<Scalar>& value() const { return node_->value; }
  Tensor<Scalar>& mutable_value() { return node_->value; }
  const Tensor<Scalar>& grad() const { return node_->grad; }
  Tensor<Scalar>& mutable_grad() { return node_->ensure_grad(); }
  bool requires_grad() const { return node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  Index dim(int i) const { return node_->value.dim(i); }
  Node<Scalar>* node() const { return node_.get(); }
  const std::shared_ptr<Node<Scalar>>& ptr() const { return node_; }

  void zero_grad() {
    if (node_->grad.size()) node_->grad.array().setZero();
  }

 private:
  std::shared_ptr<Node<Scalar>> node_;
};

/// Creates an op result. The backward closure receives the result node and
/// must push gradients into its parents with accumulate().
template <typename Scalar>
Var<Scalar> make_op(Tensor<Scalar> value, std::vector<Var<Scalar>> parents,
                    std::function<void(Node<Scalar>&)> backward) {
  auto node = std::make_shared<Node<Scalar>>();
  node->value = std::move(value);
  node->leaf = false;
  if (GradMode::enabled()) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      node->requires_grad = true;
      for (auto& p : parents) node->parents.push_back(p.ptr());
      node->backward = std::move(backward);
    }
  }
  return Var<Scalar>(std::move(node));
}

/// Adds `delta` into parent i's gradient if that parent tracks gradients.
template <typename Scalar, typename Expr>
void accumulate(Node<Scalar>& self, std::size_t i, const Expr& delta) {
  Node<Scalar>& p = *self.parents[i];
  if (!p.requires_grad) return;
  p.ensure_grad().array() += delta;
}

template <typename Scalar>
bool wants_grad(const Node<Scalar>& self, std::size_t i) {
  return self.parents[i]->requires_grad;
}

/// Reverse-mode sweep from `root` seeded with `seed` (ones for a scalar root
/// when omitted). Gradients accumulate into leaves; the recorded graph is
/// released afterwards.
template <typename Scalar>
void backward(const Var<Scalar>& root, const Tensor<Scalar>* seed = nullptr) {
  if (!root.requires_grad()) return;
  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> visited;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack{{root.node(), 0}};
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Scalar>* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  Tensor<Scalar>& g = root.node()->ensure_grad();
  if (seed != nullptr) {
    if (seed->size() != g.size()) throw ShapeError("backward seed shape mismatch");
    g.array() += seed->array();
  } else {
    if (g.size() != 1) throw ShapeError("backward without a seed needs a scalar root");
    g.array() += Scalar(1);
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* n = *it;
    if (n->backward && n->grad.size()) n->backward(*n);
    if (!n->leaf) n->grad = Tensor<Scalar>();
  }
  for (Node<Scalar>* n : order) {
    if (n->leaf) continue;
    n->backward = nullptr;
    n->parents.clear();
  }
}

}  // namespace cante::nn
