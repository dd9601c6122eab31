#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ponp/tensor.hpp"

namespace ponp {

/// Named parameter tensors with a deterministic (insertion) iteration order.
class ParamSet {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const {
    return index_.count(name) != 0;
  }

  size_t size() const { return items_.size(); }
  const std::vector<std::pair<std::string, Tensor>>& items() const {
    return items_;
  }
  std::vector<Tensor> tensors() const;

  /// Deep copy with fresh leaf tensors (requires_grad preserved).
  ParamSet clone() const;
  void zero_grad();
  /// Total scalar count across all parameters.
  std::int64_t scalar_count() const;
  /// Absorb another set under a dotted prefix.
  void merge(const std::string& prefix, const ParamSet& other);
  /// Replace a parameter's tensor handle (e.g. with a graph tensor).
  void replace(const std::string& name, Tensor t);

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, size_t> index_;
};

/// Copies of the current .grad buffers, aligned with the ParamSet order.
std::vector<Tensor> collect_grads(const ParamSet& params);

/// Optimizer state: Adam moments (empty for SGD), step counter, last lr.
struct OptimState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  long step = 0;
  float lr = 0.0f;
};

OptimState make_adam_state(const ParamSet& params);

/// Bias-corrected Adam update, applied in place between graphs.
void adam_step(ParamSet& params, const std::vector<Tensor>& grads,
               OptimState& state, float lr, float beta1 = 0.9f,
               float beta2 = 0.999f, float eps = 1e-8f);

/// p <- p - lr * g
void sgd_step(ParamSet& params, const std::vector<Tensor>& grads, float lr);

/// Geometric interpolation from lr_start (step 0) to lr_end (total_steps).
float exp_decay_lr(long step, long total_steps, float lr_start, float lr_end);

}  // namespace ponp
