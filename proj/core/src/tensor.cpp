// SPDX-License-Identifier: Apache-2.0
#include "pmae/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "pmae/error.hpp"

namespace pmae {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : node_(std::make_shared<NodeType>()) {
  if (shape.empty()) throw ShapeError("tensor rank must be at least 1");
  for (auto extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                     " values, got " + std::to_string(values.size()));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  }
  return node_->shape[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->value, false);
}

template <typename T>
Tensor<T> Tensor<T>::from_node(std::shared_ptr<NodeType> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

template <typename T>
GradGraph<T>::GradGraph(const Tensor<T>& loss) : root_(loss.node_ptr()) {
  if (!root_) throw ShapeError("backward on an undefined tensor");
  if (root_->value.size() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " + shape_str(root_->shape));
  }
  // Iterative post-order DFS; only nodes that carry gradient are recorded.
  using NodePtr = std::shared_ptr<detail::Node<T>>;
  std::unordered_set<const detail::Node<T>*> visited;
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  if (root_->requires_grad) stack.emplace_back(root_, 0);
  visited.insert(root_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      NodePtr child = node->inputs[next++];
      if (child->requires_grad && visited.insert(child.get()).second) {
        stack.emplace_back(std::move(child), 0);
      }
    } else {
      order_.push_back(node);
      stack.pop_back();
    }
  }
}

template <typename T>
void GradGraph<T>::backward() {
  if (order_.empty()) return;
  for (auto& node : order_) {
    if (!node->is_leaf()) node->grad.assign(node->value.size(), T(0));
  }
  root_->grad_buffer()[0] += T(1);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    auto& node = **it;
    if (!node.is_leaf()) node.backward(node);
  }
}

template <typename T>
void GradGraph<T>::clear() {
  for (auto& node : order_) {
    if (!node->is_leaf()) {
      node->backward = nullptr;
      node->inputs.clear();
      node->requires_grad = false;
    }
  }
  order_.clear();
}

template <typename T>
void backward(const Tensor<T>& loss) {
  GradGraph<T>(loss).backward();
}

template class Tensor<float>;
template class Tensor<double>;
template class GradGraph<float>;
template class GradGraph<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace pmae
