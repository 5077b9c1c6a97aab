// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
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

#include "vitrain/errors.hpp"

namespace vitrain::numerics {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

#ifdef NDEBUG
inline constexpr bool kFiniteChecksDefault = false;
#else
inline constexpr bool kFiniteChecksDefault = true;
#endif

/// When set, every op scans its output and throws NumericError on NaN/Inf.
/// On by default in debug builds.
inline std::atomic<bool>& finite_checks() {
  static std::atomic<bool> flag{kFiniteChecksDefault};
  return flag;
}

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Dense row-major tensor with an optional reverse-mode gradient.
///
/// A Tensor is a shared handle: copies alias the same node. Values are treated
/// as immutable once an op has consumed them; only initialization and the
/// optimizer write through mutable_data().
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }

  static Tensor full(Shape shape, T value) {
    auto node = std::make_shared<Node<T>>();
    node->data.assign(shape_numel(shape), value);
    node->shape = std::move(shape);
    return Tensor(std::move(node));
  }

  static Tensor from(Shape shape, std::vector<T> values) {
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("Tensor::from: shape " + shape_str(shape) + " needs " +
                           std::to_string(shape_numel(shape)) + " values, got " +
                           std::to_string(values.size()));
    }
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    return Tensor(std::move(node));
  }

  static Tensor scalar(T value) { return from({}, {value}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }
  T item() const {
    if (numel() != 1) throw ContractError("Tensor::item on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }
  T at(std::size_t flat) const { return node_->data.at(flat); }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient values; zeros if nothing has been accumulated yet.
  std::span<const T> grad() const { return node_->ensure_grad(); }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  /// Deep copy without graph history.
  Tensor clone() const {
    auto t = from(shape(), node_->data);
    t.node_->requires_grad = node_->requires_grad;
    return t;
  }

  /// Same values, detached from the graph.
  Tensor detach() const { return from(shape(), node_->data); }

  const char* op_name() const { return node_->op; }
  Node<T>& node() const { return *node_; }
  const NodePtr& node_ptr() const { return node_; }

 private:
  NodePtr node_;
};

/// Builds an op output. Parents are only retained when recording is enabled and
/// at least one parent needs a gradient.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                      std::initializer_list<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->op = op;
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (finite_checks().load(std::memory_order_relaxed)) {
    for (const T v : node->data) {
      if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->parents.push_back(in.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

/// Topologically ordered record of the ops reachable from a root.
///
/// Entries appear after all of their inputs. Running the tape visits every
/// node once, in reverse order, so a node used twice receives the sum of
/// both path gradients before it propagates further.
template <typename T>
class Tape {
 public:
  static Tape record(const Tensor<T>& root) {
    Tape tape;
    std::unordered_set<const Node<T>*> seen;
    // Iterative post-order DFS.
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(&root.node(), 0);
    seen.insert(&root.node());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node<T>* parent = node->parents[next++].get();
        if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
      } else {
        tape.order_.push_back(node);
        stack.pop_back();
      }
    }
    return tape;
  }

  std::size_t size() const { return order_.size(); }
  std::span<Node<T>* const> entries() const { return order_; }

  /// Seeds the last entry (the root) with ones and propagates.
  void run_backward() const {
    if (order_.empty()) return;
    for (Node<T>* node : order_) {
      if (!node->parents.empty()) node->grad.clear();
    }
    Node<T>* root = order_.back();
    auto& g = root->ensure_grad();
    std::fill(g.begin(), g.end(), T(1));
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      Node<T>* node = *it;
      if (node->backward && !node->grad.empty()) node->backward(*node);
    }
  }

 private:
  std::vector<Node<T>*> order_;
};

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires grad.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) throw ContractError("backward: loss is not on the tape");
  Tape<T>::record(loss).run_backward();
}

}  // namespace vitrain::numerics
