#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "eraw/tensor.hpp"

namespace eraw {

/// A named trainable tensor owned by a module.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
};

template <class T>
using ParamRefs = std::vector<Parameter<T>*>;

namespace detail {
inline thread_local bool grad_mode = true;
}

inline bool grad_enabled() { return detail::grad_mode; }

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode) { detail::grad_mode = false; }
  ~NoGradGuard() { detail::grad_mode = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into inputs that require grad.
  std::function<void(Node&)> backward;
  const Parameter<T>* param = nullptr;
  bool requires_grad = false;

  Tensor<T>& grad_buffer() {
    if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }
  bool input_needs_grad(std::size_t i) const { return inputs[i] && inputs[i]->requires_grad; }
  Tensor<T>& input_grad(std::size_t i) { return inputs[i]->grad_buffer(); }
  const Tensor<T>& input_value(std::size_t i) const { return inputs[i]->value; }
};

/// Handle to a node of a dynamically recorded computation graph. Graphs are
/// per-thread objects; parameters are copied into leaves so concurrent
/// forwards on disjoint inputs share no mutable state.
template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  int rank() const { return node_->value.rank(); }
  std::int64_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& grad() const { return node_->grad; }
  Node<T>* get() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <class T>
Var<T> constant(Tensor<T> v) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(v);
  return Var<T>(std::move(n));
}

/// Leaf whose gradient is retained after backward().
template <class T>
Var<T> variable(Tensor<T> v) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(v);
  n->requires_grad = grad_enabled();
  return Var<T>(std::move(n));
}

template <class T>
Var<T> param(const Parameter<T>& p) {
  auto n = std::make_shared<Node<T>>();
  n->value = p.value;
  n->requires_grad = grad_enabled();
  n->param = &p;
  return Var<T>(std::move(n));
}

/// Records an op result. Inputs and the backward closure are dropped when no
/// input requires grad (or recording is disabled), so inference graphs free
/// intermediates as soon as their handles go out of scope.
template <class T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  bool needs = false;
  if (grad_enabled())
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    n->requires_grad = true;
    n->inputs.reserve(inputs.size());
    for (auto& in : inputs) n->inputs.push_back(in.ptr());
    n->backward = std::move(backward);
  }
  return Var<T>(std::move(n));
}

template <class T>
using GradMap = std::unordered_map<const Parameter<T>*, Tensor<T>>;

/// Reverse-mode sweep from `root` seeded with `seed` (ones when empty).
/// Returns the accumulated gradient of every parameter reached.
template <class T>
GradMap<T> backward(const Var<T>& root, const Tensor<T>& seed = Tensor<T>()) {
  GradMap<T> grads;
  if (!root.requires_grad()) return grads;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child && child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  Node<T>* r = root.get();
  if (seed.size() == 0) {
    r->grad_buffer().fill(T(1));
  } else {
    if (seed.shape() != r->value.shape())
      shape_fail("backward seed shape ", shape_str(seed.shape()), " != ", shape_str(r->value.shape()));
    r->grad = seed;
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->grad.size() == 0) continue;
    if (n->backward) n->backward(*n);
    if (n->param) {
      auto found = grads.find(n->param);
      if (found == grads.end())
        grads.emplace(n->param, n->grad);
      else
        found->second += n->grad;
    }
  }
  return grads;
}

}  // namespace eraw
