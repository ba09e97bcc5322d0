#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "mtsu/tensor.hpp"

namespace mtsu {

/// Reverse-mode autodiff tape. Single-writer: one training step owns one
/// tape. Op helpers push nodes holding the forward value and a closure that
/// scatters the node's gradient into its parents' gradients.
template <typename T>
class Tape {
 public:
  using BackFn = std::function<void(Tape&, int)>;

  int leaf(Tensor<T> v, bool requires_grad = false) {
    nodes_.push_back(Node{std::move(v), Tensor<T>{}, requires_grad, nullptr});
    return static_cast<int>(nodes_.size()) - 1;
  }

  int push(Tensor<T> v, const std::vector<int>& parents, BackFn back) {
    bool ng = false;
    for (int p : parents) ng = ng || needs_grad(p);
    nodes_.push_back(
        Node{std::move(v), Tensor<T>{}, ng, ng ? std::move(back) : nullptr});
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Tensor<T>& val(int id) const { return nodes_.at(id).value; }

  bool needs_grad(int id) const { return nodes_.at(id).needs_grad; }

  /// Gradient buffer, zero-initialized on first access.
  Tensor<T>& grad(int id) {
    Node& n = nodes_.at(id);
    if (n.grad.data.empty()) n.grad = Tensor<T>::zeros(n.value.shape);
    return n.grad;
  }

  /// Seeds a scalar root with gradient 1 and runs the tape in reverse.
  void backward(int root) {
    if (val(root).numel() != 1)
      throw std::invalid_argument("backward: root must be scalar");
    grad(root).data[0] = T(1);
    for (int i = root; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.needs_grad && n.back && !n.grad.data.empty()) n.back(*this, i);
    }
  }

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad;
    BackFn back;
  };
  std::vector<Node> nodes_;
};

}  // namespace mtsu
