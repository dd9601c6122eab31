#include "ponp/meta.hpp"

#include <cmath>
#include <string>

namespace ponp {

void MetaConfig::validate() const {
  if (!(outer_lr > 0.0f) || inner_lr < 0.0f) {
    throw ConfigError("meta: learning rates must be positive");
  }
  if (inner_steps < 0 || outer_batch < 1 || total_iterations < 0) {
    throw ConfigError("meta: counts must be non-negative (outer_batch >= 1)");
  }
}

Tensor context_sensor_mse(const FieldConfig& config, const ParamSet& params,
                          const Tensor& fourier_basis,
                          const std::optional<Tensor>& cond,
                          const ContextSet& ctx) {
  const ForwardMapSpec& fmap = ctx.sensor_params;
  switch (fmap.kind()) {
    case ForwardMapSpec::Kind::masking: {
      // Field sampled at the observed coords directly; F is then identity.
      FieldOutput out = eval_field(config, params, fourier_basis, ctx.x, cond);
      return mse(out.mean, ctx.y);
    }
    case ForwardMapSpec::Kind::integral_projection: {
      const ProjectionSpec& proj = fmap.projection();
      Tensor pts = projection_points(proj);
      FieldOutput out = eval_field(config, params, fourier_basis, pts, cond);
      Tensor pred = project_field_values(out.mean, proj);
      const int rows = static_cast<int>(proj.angles.size()) * proj.n_rays;
      return mse(pred, reshape(ctx.y, {rows, 1}));
    }
    case ForwardMapSpec::Kind::volume_render: {
      Tensor pts = render_points(fmap.render());
      FieldOutput out = eval_field(config, params, fourier_basis, pts, cond);
      Tensor pred = composite_render_values(out.mean, fmap.render());
      return mse(pred, ctx.y);
    }
  }
  throw ConfigError("context_sensor_mse: unknown forward map");
}

namespace {

std::vector<Tensor> scaled_copy(const std::vector<Tensor>& grads, float s) {
  std::vector<Tensor> out;
  out.reserve(grads.size());
  for (const Tensor& g : grads) out.push_back(scale(g.detach(), s).detach());
  return out;
}

}  // namespace

void maml_train_generic(ParamSet& params, const TaskLossFn& loss_fn,
                        const MetaConfig& cfg, const IterCallback& cb) {
  cfg.validate();
  OptimState outer_state = make_adam_state(params);
  for (int it = 0; it < cfg.total_iterations; ++it) {
    try {
      params.zero_grad();
      float iter_loss = 0.0f;
      for (int b = 0; b < cfg.outer_batch; ++b) {
        const int task_index = it * cfg.outer_batch + b;
        ParamSet adapted = params;  // shallow: same leaves until updated
        for (int s = 0; s < cfg.inner_steps; ++s) {
          Tensor inner_loss = loss_fn(adapted, task_index);
          std::vector<Tensor> gs = grad_graph(inner_loss, adapted.tensors());
          ParamSet next;
          for (size_t i = 0; i < adapted.size(); ++i) {
            const auto& [name, t] = adapted.items()[i];
            Tensor g = cfg.first_order ? gs[i].detach() : gs[i];
            next.add(name, sub(t, scale(g, cfg.inner_lr)));
          }
          adapted = std::move(next);
        }
        Tensor outer_loss = loss_fn(adapted, task_index);
        iter_loss += outer_loss.item();
        backward(outer_loss);  // accumulates into the meta-parameters
      }
      std::vector<Tensor> grads =
          scaled_copy(collect_grads(params), 1.0f / cfg.outer_batch);
      adam_step(params, grads, outer_state, cfg.outer_lr);
      params.zero_grad();
      if (cb) cb(it, iter_loss / cfg.outer_batch);
    } catch (const NumericError& e) {
      throw NumericError("maml diverged at iteration " + std::to_string(it) +
                         ": " + e.what());
    }
  }
}

void reptile_train_generic(ParamSet& params, const TaskLossFn& loss_fn,
                           const MetaConfig& cfg, const IterCallback& cb) {
  cfg.validate();
  for (int it = 0; it < cfg.total_iterations; ++it) {
    try {
      const float eps =
          cfg.anneal_outer
              ? cfg.outer_lr * (1.0f - static_cast<float>(it) / cfg.total_iterations)
              : cfg.outer_lr;
      std::vector<std::vector<float>> delta;
      delta.reserve(params.size());
      for (const auto& [name, t] : params.items()) {
        delta.emplace_back(static_cast<size_t>(t.size()), 0.0f);
      }
      float iter_loss = 0.0f;
      for (int b = 0; b < cfg.outer_batch; ++b) {
        const int task_index = it * cfg.outer_batch + b;
        ParamSet adapted = params.clone();
        OptimState inner_state = make_adam_state(adapted);
        for (int s = 0; s < cfg.inner_steps; ++s) {
          Tensor loss = loss_fn(adapted, task_index);
          if (s == 0) iter_loss += loss.item();
          backward(loss);
          std::vector<Tensor> gs = collect_grads(adapted);
          if (cfg.inner_opt == InnerOptKind::adam) {
            adam_step(adapted, gs, inner_state, cfg.inner_lr);
          } else {
            sgd_step(adapted, gs, cfg.inner_lr);
          }
          adapted.zero_grad();
        }
        for (size_t pi = 0; pi < params.size(); ++pi) {
          auto base = params.items()[pi].second.values();
          auto adapt = adapted.items()[pi].second.values();
          for (size_t i = 0; i < base.size(); ++i) {
            delta[pi][i] += (adapt[i] - base[i]) / cfg.outer_batch;
          }
        }
      }
      for (size_t pi = 0; pi < params.size(); ++pi) {
        auto vals = params.at(params.items()[pi].first).values_mut();
        for (size_t i = 0; i < vals.size(); ++i) vals[i] += eps * delta[pi][i];
      }
      if (cb) cb(it, iter_loss / cfg.outer_batch);
    } catch (const NumericError& e) {
      throw NumericError("reptile diverged at iteration " + std::to_string(it) +
                         ": " + e.what());
    }
  }
}

namespace {

TaskLossFn episode_loss_fn(const ConditionedField& field,
                           const EpisodeSampler& sampler) {
  return [&field, sampler](const ParamSet& params, int task_index) {
    Episode ep = sampler(task_index);
    return context_sensor_mse(field.config, params, field.fourier_basis,
                              std::nullopt, ep.context);
  };
}

}  // namespace

void maml_train(ConditionedField& field, const EpisodeSampler& sampler,
                const MetaConfig& cfg, const IterCallback& cb) {
  if (field.config.conditioning != Conditioning::none) {
    throw ConfigError("maml_train: baselines use unconditioned fields");
  }
  maml_train_generic(field.params, episode_loss_fn(field, sampler), cfg, cb);
}

void reptile_train(ConditionedField& field, const EpisodeSampler& sampler,
                   const MetaConfig& cfg, const IterCallback& cb) {
  if (field.config.conditioning != Conditioning::none) {
    throw ConfigError("reptile_train: baselines use unconditioned fields");
  }
  reptile_train_generic(field.params, episode_loss_fn(field, sampler), cfg, cb);
}

ConditionedField test_time_optimize(const ConditionedField& field,
                                    const std::optional<Tensor>& cond,
                                    const ContextSet& ctx, int steps, float lr,
                                    const IterCallback& cb) {
  if (steps < 0) throw ConfigError("test_time_optimize: steps must be >= 0");
  ConditionedField adapted = field.clone();
  std::optional<Tensor> frozen;
  if (cond) frozen = cond->detach();
  OptimState state = make_adam_state(adapted.params);
  for (int s = 0; s < steps; ++s) {
    Tensor loss = context_sensor_mse(adapted.config, adapted.params,
                                     adapted.fourier_basis, frozen, ctx);
    backward(loss);
    adam_step(adapted.params, collect_grads(adapted.params), state, lr);
    adapted.params.zero_grad();
    if (cb) cb(s, loss.item());
  }
  return adapted;
}

int ct_tto_steps(int n_views) {
  switch (n_views) {
    case 1: return 50;
    case 2: return 100;
    default: return 1000;
  }
}

}  // namespace ponp
