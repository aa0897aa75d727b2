#pragma once

#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

#include "eegdm/numerics/tensor.hpp"

namespace eegdm {

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

// Disables graph recording for its lifetime (inference, finite differences).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <class T>
struct Node {
  using BackwardFn = std::function<void(Node&)>;

  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;

  bool is_leaf() const noexcept { return !backward; }

  Tensor<T>& ensure_grad() {
    if (grad.size() != value.size()) grad = Tensor<T>(value.shape());
    return grad;
  }

  // Gradient buffer of parent i, or nullptr when that input is constant.
  Tensor<T>* parent_grad(std::size_t i) {
    auto& p = parents[i];
    return p && p->requires_grad ? &p->ensure_grad() : nullptr;
  }

  const Tensor<T>& parent_value(std::size_t i) const { return parents[i]->value; }
};

// Handle to a node of the reverse-mode tape. Copies share the node.
template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Var parameter(Tensor<T> value) { return Var(std::move(value), true); }

  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(std::size_t i) const { return node_->value.dim(i); }
  bool requires_grad() const { return node_->requires_grad; }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  const Tensor<T>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  Tensor<T>& mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() {
    if (has_grad()) node_->grad.fill(T{});
  }

  const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Builds the result of a differentiable op. The backward closure is recorded
// only when grad mode is on and at least one input requires a gradient.
template <class T>
Var<T> record(Tensor<T> value, std::span<const Var<T>> inputs, typename Node<T>::BackwardFn backward) {
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || (in.defined() && in.requires_grad());
  }
  Var<T> out(std::move(value), needs);
  if (needs) {
    auto& node = *out.node();
    node.parents.reserve(inputs.size());
    for (const auto& in : inputs) node.parents.push_back(in.defined() ? in.node() : nullptr);
    node.backward = std::move(backward);
  }
  return out;
}

template <class T>
Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, typename Node<T>::BackwardFn backward) {
  return record<T>(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()), std::move(backward));
}

template <class T>
Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, typename Node<T>::BackwardFn backward) {
  return record<T>(std::move(value), std::span<const Var<T>>(inputs), std::move(backward));
}

// Reverse sweep from a scalar loss. Intermediate gradients are reset first so
// repeated calls on the same graph after zeroing leaf gradients are idempotent.
template <class T>
void backward(const Var<T>& loss) {
  if (!loss.defined() || loss.size() != 1) throw std::invalid_argument("backward: loss must be a scalar");
  if (!loss.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<T>* n : order) {
    if (!n->is_leaf()) n->ensure_grad().fill(T{});
  }
  loss.node()->ensure_grad()[0] = T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (!n->is_leaf()) n->backward(*n);
  }
}

}  // namespace eegdm
