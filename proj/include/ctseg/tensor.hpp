#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "ctseg/error.hpp"

namespace ctseg {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {

// One reverse-mode graph node. Nodes link parent-ward only, so a graph is
// an acyclic DAG that is freed when the tensors holding its outputs die.
template <typename T>
struct Node {
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const std::vector<T>&)> backprop;  // consumes this node's grad
  std::vector<T> grad;
  int64_t size = 0;
  bool leaf = false;

  std::vector<T>& grad_buffer() {
    if (static_cast<int64_t>(grad.size()) != size) grad.assign(static_cast<size_t>(size), T(0));
    return grad;
  }
  bool has_grad() const { return !grad.empty(); }
};

template <typename T>
inline void axpy(std::vector<T>& acc, const std::vector<T>& g) {
  for (size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
}

}  // namespace detail

// Dense N-d array with optional participation in a reverse-mode graph.
// Copies are shallow (storage is shared); clone() deep-copies.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(static_cast<size_t>(numel(shape_)), fill)) {
    check_shape();
  }

  Tensor(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)), data_(std::make_shared<std::vector<T>>(std::move(values))) {
    check_shape();
    require(static_cast<int64_t>(data_->size()) == numel(shape_),
            "tensor data length " + std::to_string(data_->size()) + " does not match shape " +
                shape_str(shape_));
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  const Shape& shape() const { return shape_; }
  int64_t size() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }
  int64_t extent(size_t axis) const { return shape_.at(axis); }
  bool empty() const { return !data_; }

  std::vector<T>& values() { return *data_; }
  const std::vector<T>& values() const { return *data_; }
  T* data() { return data_->data(); }
  const T* data() const { return data_->data(); }

  // Shared handle to the storage, for backward closures: keeps the buffer
  // alive without copying it.
  std::shared_ptr<const std::vector<T>> shared_values() const { return data_; }

  T item() const {
    require(size() == 1, "item() requires a scalar tensor, got shape " + shape_str(shape_));
    return (*data_)[0];
  }

  // --- autodiff ----------------------------------------------------------

  bool tracked() const { return node_ != nullptr; }

  // Same storage, no graph membership: gradients never flow through it.
  Tensor detached() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    return t;
  }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<T>>(*data_);
    return t;
  }

  // Marks this tensor as a learnable leaf; its gradient accumulates across
  // backward passes until zero_grad().
  void set_leaf() {
    require(data_ != nullptr, "cannot make an empty tensor a leaf");
    if (node_ && node_->leaf) return;
    require(node_ == nullptr, "tensor is already part of a graph");
    node_ = std::make_shared<detail::Node<T>>();
    node_->size = size();
    node_->leaf = true;
  }

  bool is_leaf() const { return node_ && node_->leaf; }

  std::span<const T> grad() const {
    require(is_leaf(), "grad() is only available on leaf tensors");
    auto& buf = node_->grad_buffer();
    return {buf.data(), buf.size()};
  }

  void zero_grad() {
    if (node_) node_->grad.clear();
  }

  // True when a backward pass has actually deposited a gradient here.
  bool grad_present() const { return node_ && node_->has_grad(); }

  const std::shared_ptr<detail::Node<T>>& node() const { return node_; }

  void attach_node(std::shared_ptr<detail::Node<T>> n) {
    node_ = std::move(n);
    if (node_) node_->size = size();
  }

 private:
  void check_shape() const {
    for (size_t i = 0; i < shape_.size(); ++i) {
      require(shape_[i] >= 1, "tensor extent must be >= 1 on axis " + std::to_string(i) +
                                  ", got shape " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
  std::shared_ptr<detail::Node<T>> node_;
};

namespace detail {

// Registers a backward rule on `out` when any input is tracked. The closure
// receives out's gradient and accumulates into the captured parent nodes.
template <typename T>
void attach_backward(Tensor<T>& out, std::vector<std::shared_ptr<Node<T>>> parents,
                     std::function<void(const std::vector<T>&)> backprop) {
  parents.erase(std::remove(parents.begin(), parents.end(), nullptr), parents.end());
  if (parents.empty()) return;
  auto node = std::make_shared<Node<T>>();
  node->parents = std::move(parents);
  node->backprop = std::move(backprop);
  out.attach_node(std::move(node));
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Each reachable node is visited
// exactly once; gradients from multiple consumers accumulate additively.
template <typename T>
void backward(const Tensor<T>& loss) {
  require(loss.tracked(), "backward: loss is not connected to a graph");
  require(loss.size() == 1, "backward: loss must be scalar, got shape " + shape_str(loss.shape()));

  using NodeT = detail::Node<T>;
  std::vector<NodeT*> order;  // postorder: parents before children
  std::unordered_set<NodeT*> visited;
  struct Frame {
    NodeT* node;
    size_t next_parent;
  };
  std::vector<Frame> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      NodeT* p = f.node->parents[f.next_parent++].get();
      if (visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* n = *it;
    if (n->backprop && n->has_grad()) n->backprop(n->grad);
  }
}

}  // namespace ctseg
