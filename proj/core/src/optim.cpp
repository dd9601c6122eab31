#include "ponp/optim.hpp"

#include <cmath>

namespace ponp {

Tensor& ParamSet::add(const std::string& name, Tensor t) {
  if (index_.count(name)) {
    throw ConfigError("duplicate parameter name '" + name + "'");
  }
  t.set_requires_grad(true);
  index_[name] = items_.size();
  items_.emplace_back(name, std::move(t));
  return items_.back().second;
}

Tensor& ParamSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return items_[it->second].second;
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return items_[it->second].second;
}

std::vector<Tensor> ParamSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(items_.size());
  for (const auto& [name, t] : items_) out.push_back(t);
  return out;
}

ParamSet ParamSet::clone() const {
  ParamSet copy;
  for (const auto& [name, t] : items_) {
    copy.add(name, Tensor::from_data(t.shape(),
                                     {t.values().begin(), t.values().end()}));
  }
  return copy;
}

void ParamSet::zero_grad() {
  for (auto& [name, t] : items_) t.zero_grad();
}

std::int64_t ParamSet::scalar_count() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : items_) n += t.size();
  return n;
}

void ParamSet::merge(const std::string& prefix, const ParamSet& other) {
  for (const auto& [name, t] : other.items()) add(prefix + "." + name, t);
}

void ParamSet::replace(const std::string& name, Tensor t) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  if (t.shape() != items_[it->second].second.shape()) {
    throw ShapeError("replace: shape mismatch for parameter '" + name + "'");
  }
  items_[it->second].second = std::move(t);
}

std::vector<Tensor> collect_grads(const ParamSet& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& [name, t] : params.items()) {
    auto g = t.grad();
    if (g.empty()) {
      out.push_back(Tensor::zeros(t.shape()));
    } else {
      out.push_back(Tensor::from_data(t.shape(), {g.begin(), g.end()}));
    }
  }
  return out;
}

OptimState make_adam_state(const ParamSet& params) {
  OptimState s;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const auto& [name, t] : params.items()) {
    s.m.emplace_back(static_cast<size_t>(t.size()), 0.0f);
    s.v.emplace_back(static_cast<size_t>(t.size()), 0.0f);
  }
  return s;
}

void adam_step(ParamSet& params, const std::vector<Tensor>& grads,
               OptimState& state, float lr, float beta1, float beta2,
               float eps) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw ShapeError("adam_step: gradient/state not aligned with parameters");
  }
  state.step += 1;
  state.lr = lr;
  const double c1 = 1.0 - std::pow(static_cast<double>(beta1), state.step);
  const double c2 = 1.0 - std::pow(static_cast<double>(beta2), state.step);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params.at(params.items()[pi].first);
    if (grads[pi].shape() != p.shape()) {
      throw ShapeError("adam_step: gradient shape mismatch for '" +
                       params.items()[pi].first + "'");
    }
    auto pv = p.values_mut();
    auto gv = grads[pi].values();
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    for (size_t i = 0; i < pv.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0f - beta1) * gv[i];
      v[i] = beta2 * v[i] + (1.0f - beta2) * gv[i] * gv[i];
      const float mhat = static_cast<float>(m[i] / c1);
      const float vhat = static_cast<float>(v[i] / c2);
      pv[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

void sgd_step(ParamSet& params, const std::vector<Tensor>& grads, float lr) {
  if (grads.size() != params.size()) {
    throw ShapeError("sgd_step: gradients not aligned with parameters");
  }
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params.at(params.items()[pi].first);
    if (grads[pi].shape() != p.shape()) {
      throw ShapeError("sgd_step: gradient shape mismatch for '" +
                       params.items()[pi].first + "'");
    }
    auto pv = p.values_mut();
    auto gv = grads[pi].values();
    for (size_t i = 0; i < pv.size(); ++i) pv[i] -= lr * gv[i];
  }
}

float exp_decay_lr(long step, long total_steps, float lr_start, float lr_end) {
  if (total_steps <= 0) throw ConfigError("exp_decay_lr: total_steps must be > 0");
  if (!(lr_start >= lr_end) || !(lr_end > 0.0f)) {
    throw ConfigError("exp_decay_lr: need lr_start >= lr_end > 0");
  }
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  const double ratio = static_cast<double>(lr_end) / static_cast<double>(lr_start);
  return static_cast<float>(lr_start * std::pow(ratio, frac));
}

}  // namespace ponp
