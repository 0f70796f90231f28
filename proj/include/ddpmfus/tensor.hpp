#pragma once

// Dense row-major tensors with a dynamic reverse-mode autodiff graph.
//
// A Tensor is a cheap handle to a shared node. Operations that consume at
// least one tensor with requires_grad() record a backward closure on the
// result node; backward() replays those closures in reverse topological
// order. Gradients of leaves accumulate across calls until zero_grad().

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ddpmfus/errors.hpp"

namespace ddpmfus {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

template <class T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads the node's own grad and accumulates into parents' grads.
  std::function<void(const std::vector<T>&)> backward;

  bool is_leaf() const { return !backward; }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() : node_(std::make_shared<detail::Node<T>>()) {}

  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<detail::Node<T>>()) {
    node_->data.assign(ddpmfus::numel(shape), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> data) : node_(std::make_shared<detail::Node<T>>()) {
    if (ddpmfus::numel(shape) != data.size()) {
      throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                           std::to_string(ddpmfus::numel(shape)) + " elements, got " +
                           std::to_string(data.size()));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }
  static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  // Mutation is reserved for leaves: parameters (optimizer updates) and
  // freshly built inputs. Mutating a recorded intermediate corrupts backward.
  std::span<T> mutable_data() { return node_->data; }
  const std::vector<T>& vec() const { return node_->data; }

  T operator[](std::size_t i) const { return node_->data[i]; }
  T at(std::size_t c, std::size_t h, std::size_t w) const {
    return node_->data[(c * dim(1) + h) * dim(2) + w];
  }
  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    if (!node_->is_leaf()) throw ContractError("requires_grad can only be toggled on leaf tensors");
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return node_->grad.size() == node_->data.size() && !node_->data.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }

  /// Copy of the data detached from the graph.
  Tensor detach() const { return Tensor(shape(), vec()); }

  const NodePtr& node() const { return node_; }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  /// Builds an op result; records the backward closure when any input is tracked.
  template <class Backward>
  static Tensor make_result(Shape shape, std::vector<T> data, std::initializer_list<Tensor> inputs,
                            Backward&& backward) {
    return make_result(std::move(shape), std::move(data), std::vector<Tensor>(inputs),
                       std::forward<Backward>(backward));
  }

  template <class Backward>
  static Tensor make_result(Shape shape, std::vector<T> data, const std::vector<Tensor>& inputs,
                            Backward&& backward) {
    Tensor out(std::move(shape), std::move(data));
    if (!grad_enabled()) return out;
    bool tracked = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
    if (!tracked) return out;
    out.node_->requires_grad = true;
    for (const auto& in : inputs) out.node_->parents.push_back(in.node_);
    out.node_->backward = std::forward<Backward>(backward);
    return out;
  }

 private:
  NodePtr node_;
};

/// Reverse topological ordering of the graph reachable from a root.
template <class T>
class ComputationTape {
 public:
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  explicit ComputationTape(const Tensor<T>& root) {
    // Iterative post-order DFS; only nodes that take part in differentiation.
    std::unordered_set<const detail::Node<T>*> seen;
    std::vector<std::pair<NodePtr, std::size_t>> stack;
    if (!root.requires_grad()) return;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        NodePtr parent = node->parents[next++];
        if (parent->requires_grad && seen.insert(parent.get()).second) stack.emplace_back(parent, 0);
      } else {
        order_.push_back(node);
        stack.pop_back();
      }
    }
    std::reverse(order_.begin(), order_.end());
  }

  /// Root first, leaves last; each node appears exactly once.
  const std::vector<NodePtr>& nodes() const { return order_; }

 private:
  std::vector<NodePtr> order_;
};

/// Populates grad buffers of all tracked tensors reachable from a scalar loss.
template <class T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  ComputationTape<T> tape(loss);
  const auto& nodes = tape.nodes();
  for (const auto& n : nodes) {
    if (n->is_leaf()) {
      n->ensure_grad();
    } else {
      n->grad.assign(n->data.size(), T(0));
    }
  }
  if (nodes.empty()) return;
  nodes.front()->grad[0] += T(1);
  for (const auto& n : nodes) {
    if (!n->is_leaf()) {
      n->backward(n->grad);
      // Intermediate adjoints are consumed exactly once.
      std::vector<T>().swap(n->grad);
    }
  }
}

}  // namespace ddpmfus
