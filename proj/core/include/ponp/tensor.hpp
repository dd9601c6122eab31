#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ponp/errors.hpp"
#include "ponp/rng.hpp"

namespace ponp {

using Shape = std::vector<int>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

/// One vertex of the computation graph. Owned via shared_ptr by the Tensor
/// handles and by downstream nodes, so a graph lives exactly as long as some
/// tensor still refers to it.
struct Node {
  Shape shape;
  std::vector<float> value;
  std::vector<float> grad;  // allocated lazily by backward()
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  /// Fast reverse pass: consume this->grad, accumulate into parents' grad.
  std::function<void(Node&)> backward_fn;
  /// Graph-building reverse pass used for second-order gradients. Returns
  /// one adjoint tensor per parent. Ops that are first-order only leave
  /// this empty.
  std::function<std::vector<Tensor>(const Tensor& upstream)> backward_graph_fn;

  std::int64_t size() const { return static_cast<std::int64_t>(value.size()); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0f);
  }
};

}  // namespace detail

/// Dense float32 tensor; a value handle onto a graph node. Tensors are
/// immutable once they participate in a graph: mutation is only exposed for
/// freshly created leaves (values_mut) and for optimizer updates applied
/// between graphs.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float v, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<float> data,
                          bool requires_grad = false);
  static Tensor scalar(float v, bool requires_grad = false);
  /// i.i.d. uniform in [lo, hi).
  static Tensor uniform(Shape shape, float lo, float hi, Rng& rng,
                        bool requires_grad = false);
  /// i.i.d. normal with the given mean/stddev.
  static Tensor normal(Shape shape, float mean, float stddev, Rng& rng,
                       bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t size() const { return node_->size(); }

  std::span<const float> values() const { return node_->value; }
  /// Mutable access for leaves that are not yet part of a graph (data
  /// buffers, optimizer updates between steps).
  std::span<float> values_mut() { return node_->value; }

  float item() const;
  float at(int i) const { return node_->value[static_cast<size_t>(i)]; }
  float at(int i, int j) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }

  /// Gradient buffer (empty until backward() touched this tensor).
  std::span<const float> grad() const { return node_->grad; }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0f);
  }

  /// Value copy detached from any graph.
  Tensor detach() const;

  detail::Node* node() const { return node_.get(); }
  std::shared_ptr<detail::Node> node_ptr() const { return node_; }

  static Tensor wrap(std::shared_ptr<detail::Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Reverse-mode gradient of a finite scalar loss. Accumulates into the .grad
/// buffers of every reachable tensor that requires grad. Throws NumericError
/// (naming the op) if a non-finite value or gradient is met.
void backward(const Tensor& loss);

/// Graph-building gradients: returns d loss / d wrt[i] as live graph tensors
/// so a further backward() can differentiate through them (one second-order
/// pass). Only ops that provide a graph reverse rule may appear between loss
/// and wrt.
std::vector<Tensor> grad_graph(const Tensor& loss,
                               const std::vector<Tensor>& wrt);

namespace detail {
/// Throws NumericError naming `op` if x contains a non-finite entry.
void check_finite(std::span<const float> x, const char* op);
}  // namespace detail

}  // namespace ponp
