#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace stemm {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Graph recording is on by default; NoGradGuard disables it for a scope.
bool grad_enabled() noexcept;

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/**
 * One record of the computation graph. Leaves have no inputs and no backward
 * function; op results keep their inputs alive and a closure that adds this
 * node's gradient into the inputs' gradients.
 */
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

/**
 * Dense row-major tensor with reverse-mode gradient support.
 *
 * Copies share the underlying node. Values of op results are never modified
 * after creation; only leaves (parameters) may be updated in place, and only
 * between graph constructions.
 */
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T fill, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<T>(n, fill), requires_grad);
  }

  static Tensor from_data(Shape shape, std::vector<T> data,
                          bool requires_grad = false);

  static Tensor scalar(T v, bool requires_grad = false) {
    return from_data({1}, {v}, requires_grad);
  }

  bool defined() const noexcept { return node_ != nullptr; }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }
  /// Leading dimension of a matrix.
  std::size_t rows() const { return rank() == 0 ? 1 : node_->shape.front(); }
  /// Trailing dimension of a matrix (1 for vectors).
  std::size_t cols() const { return rank() < 2 ? 1 : node_->shape.back(); }

  std::span<const T> data() const { return node_->value; }
  T at(std::size_t i) const { return node_->value.at(i); }
  T at(std::size_t r, std::size_t c) const {
    return node_->value.at(r * cols() + c);
  }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const T> grad() const { return node_->grad; }

  /// In-place access for optimizers and test perturbations. Leaves only.
  std::span<T> mutable_data();
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  /// Back-propagates from this scalar through every reachable node once.
  void backward() const;

  /// Value copy cut off from the graph.
  Tensor detach() const { return from_data(shape(), node_->value, false); }

  template <typename U>
  Tensor<U> cast(bool requires_grad = false) const {
    std::vector<U> out(node_->value.begin(), node_->value.end());
    return Tensor<U>::from_data(shape(), std::move(out), requires_grad);
  }

  Node<T>& node() const { return *node_; }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Nodes reachable from root that require gradients, inputs before outputs.
template <typename T>
std::vector<Node<T>*> topological_order(const Tensor<T>& root);

namespace detail {

/// Wraps an op result. The backward closure is dropped when no input needs a
/// gradient or recording is disabled.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const char* op,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward);

}  // namespace detail

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace stemm
