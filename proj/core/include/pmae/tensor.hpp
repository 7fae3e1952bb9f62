// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pmae {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One vertex of the gradient graph. Leaves have no backward function.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }

  // Zero-filled on first use.
  std::vector<T>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Handle to a dense row-major array that may take part in reverse-mode
/// differentiation. Copies share the underlying storage, like a framework
/// tensor; use detach() for an independent copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodeType = detail::Node<T>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> values() const { return node_->value; }
  // Direct write access, for initialisation and optimizer updates. Writing
  // into a tensor that an unreplayed graph still reads is undefined.
  std::span<T> mutable_values() { return node_->value; }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool is_leaf() const { return node_->is_leaf(); }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad();
  void clear_grad() { node_->grad.clear(); }

  Tensor detach() const;
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  // For kernels that extend the graph.
  const std::shared_ptr<NodeType>& node_ptr() const { return node_; }
  static Tensor from_node(std::shared_ptr<NodeType> node);

 private:
  std::shared_ptr<NodeType> node_;
};

/// Topologically ordered record of every operation that produced `loss`.
/// Replaying it in reverse applies each adjoint exactly once.
template <typename T>
class GradGraph {
 public:
  explicit GradGraph(const Tensor<T>& loss);

  // Seeds d(loss)/d(loss) = 1 and accumulates into every reachable
  // requires_grad tensor. Intermediate grads are reset first, so repeated
  // calls add exactly one gradient per call to the leaves.
  void backward();

  // Releases the recorded closures and input links of intermediate nodes.
  // Leaf values and grads are untouched.
  void clear();

  std::size_t size() const { return order_.size(); }

 private:
  std::shared_ptr<detail::Node<T>> root_;
  std::vector<std::shared_ptr<detail::Node<T>>> order_;
};

template <typename T>
void backward(const Tensor<T>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class GradGraph<float>;
extern template class GradGraph<double>;

}  // namespace pmae
