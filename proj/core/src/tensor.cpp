#include "ponp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "ponp/ops.hpp"

namespace ponp {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace detail {

void check_finite(std::span<const float> x, const char* op) {
  for (float v : x) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by op '") +
                         op + "'");
    }
  }
}

}  // namespace detail

static std::shared_ptr<detail::Node> make_leaf(Shape shape,
                                               std::vector<float> data,
                                               bool requires_grad) {
  auto n = std::make_shared<detail::Node>();
  if (numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("tensor data size " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return n;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<float> d(static_cast<size_t>(numel(shape)), 0.0f);
  return wrap(make_leaf(std::move(shape), std::move(d), requires_grad));
}

Tensor Tensor::full(Shape shape, float v, bool requires_grad) {
  std::vector<float> d(static_cast<size_t>(numel(shape)), v);
  return wrap(make_leaf(std::move(shape), std::move(d), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data,
                         bool requires_grad) {
  return wrap(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(float v, bool requires_grad) {
  return from_data({1}, {v}, requires_grad);
}

Tensor Tensor::uniform(Shape shape, float lo, float hi, Rng& rng,
                       bool requires_grad) {
  std::vector<float> d(static_cast<size_t>(numel(shape)));
  for (auto& v : d) v = rng.uniform(lo, hi);
  return wrap(make_leaf(std::move(shape), std::move(d), requires_grad));
}

Tensor Tensor::normal(Shape shape, float mean, float stddev, Rng& rng,
                      bool requires_grad) {
  std::vector<float> d(static_cast<size_t>(numel(shape)));
  for (auto& v : d) v = rng.normal(mean, stddev);
  return wrap(make_leaf(std::move(shape), std::move(d), requires_grad));
}

float Tensor::item() const {
  if (size() != 1) {
    throw ShapeError("item() on non-scalar tensor of shape " +
                     shape_str(shape()));
  }
  return node_->value[0];
}

float Tensor::at(int i, int j) const {
  const Shape& s = node_->shape;
  if (s.size() != 2) throw ShapeError("at(i,j) requires a 2D tensor");
  return node_->value[static_cast<size_t>(i) * s[1] + j];
}

Tensor Tensor::detach() const {
  return from_data(node_->shape, node_->value, false);
}

// Post-order DFS giving a topological order of the subgraph that can reach
// grad-requiring leaves.
static void topo_order(detail::Node* root,
                       std::vector<detail::Node*>& order) {
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      detail::Node* p = node->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

void backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward() requires a scalar loss, got shape " +
                     shape_str(loss.shape()));
  }
  if (!std::isfinite(loss.item())) {
    throw NumericError(std::string("non-finite loss reached backward() at op '") +
                       loss.node()->op + "'");
  }
  if (!loss.requires_grad()) return;

  std::vector<detail::Node*> order;
  topo_order(loss.node(), order);

  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0f;

  // Reverse topological order: every node's grad is complete before use.
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->backward_fn) continue;
    if (n->grad.empty()) continue;
    detail::check_finite(n->grad, n->op);
    for (auto& p : n->parents) {
      if (p->requires_grad) p->ensure_grad();
    }
    n->backward_fn(*n);
  }
}

std::vector<Tensor> grad_graph(const Tensor& loss,
                               const std::vector<Tensor>& wrt) {
  if (loss.size() != 1) {
    throw ShapeError("grad_graph() requires a scalar loss, got shape " +
                     shape_str(loss.shape()));
  }
  std::vector<detail::Node*> order;
  topo_order(loss.node(), order);

  std::unordered_map<detail::Node*, Tensor> adjoint;
  adjoint[loss.node()] = Tensor::scalar(1.0f);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    auto found = adjoint.find(n);
    if (found == adjoint.end()) continue;
    if (n->parents.empty()) continue;
    if (!n->backward_graph_fn) {
      throw NumericError(std::string("op '") + n->op +
                         "' does not support second-order gradients");
    }
    std::vector<Tensor> parent_adj = n->backward_graph_fn(found->second);
    for (size_t i = 0; i < n->parents.size(); ++i) {
      detail::Node* p = n->parents[i].get();
      if (!p->requires_grad || !parent_adj[i].defined()) continue;
      auto slot = adjoint.find(p);
      if (slot == adjoint.end()) {
        adjoint.emplace(p, parent_adj[i]);
      } else {
        slot->second = add(slot->second, parent_adj[i]);
      }
    }
  }

  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const Tensor& w : wrt) {
    auto found = adjoint.find(w.node());
    if (found == adjoint.end()) {
      out.push_back(Tensor::zeros(w.shape()));
    } else {
      out.push_back(found->second);
    }
  }
  return out;
}

}  // namespace ponp
