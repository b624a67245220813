#include "stemm/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "stemm/errors.hpp"

namespace stemm {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data,
                               bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_string(shape) + " holds " +
                         std::to_string(shape_numel(shape)) +
                         " elements but " + std::to_string(data.size()) +
                         " were given");
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  }
  return node_->value[0];
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (node_->backward) {
    throw Error("mutable_data() is only allowed on leaf tensors");
  }
  return node_->value;
}

template <typename T>
std::vector<Node<T>*> topological_order(const Tensor<T>& root) {
  std::vector<Node<T>*> order;
  if (!root.defined() || !root.requires_grad()) return order;
  std::unordered_set<Node<T>*> visited;
  // Iterative post-order DFS; deep decoder graphs would overflow recursion.
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(&root.node(), 0);
  visited.insert(&root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1) {
    throw DimensionError("backward() needs a scalar, got " +
                         shape_string(shape()));
  }
  if (!requires_grad()) return;
  auto order = topological_order(*this);
  node_->ensure_grad();
  node_->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (!n->backward) continue;
    n->ensure_grad();
    for (auto& in : n->inputs) {
      if (in->requires_grad) in->ensure_grad();
    }
    n->backward(*n);
  }
}

namespace detail {

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const char* op,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

template Tensor<float> make_result(Shape, std::vector<float>, const char*,
                                   std::vector<Tensor<float>>,
                                   std::function<void(Node<float>&)>);
template Tensor<double> make_result(Shape, std::vector<double>, const char*,
                                    std::vector<Tensor<double>>,
                                    std::function<void(Node<double>&)>);

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;
template std::vector<Node<float>*> topological_order(const Tensor<float>&);
template std::vector<Node<double>*> topological_order(const Tensor<double>&);

}  // namespace stemm
