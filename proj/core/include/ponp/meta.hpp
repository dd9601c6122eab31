#pragma once

#include <functional>

#include "ponp/field.hpp"
#include "ponp/inference.hpp"
#include "ponp/tasks.hpp"

namespace ponp {

enum class MetaAlgo { maml, reptile, random };
enum class InnerOptKind { sgd, adam };

struct MetaConfig {
  MetaAlgo algorithm = MetaAlgo::maml;
  float outer_lr = 1e-5f;
  float inner_lr = 1e-2f;
  int inner_steps = 2;
  int outer_batch = 3;
  int total_iterations = 5000;
  bool first_order = false;       // maml: drop the second-order term
  bool anneal_outer = true;       // reptile: linear step-size anneal
  InnerOptKind inner_opt = InnerOptKind::adam;  // reptile inner loop
  std::uint64_t seed = 0;

  void validate() const;
};

/// Sensor-space MSE between F(M) and the context observations; the shared
/// inner/outer/TTO objective. cond stays fixed (no gradient into it).
Tensor context_sensor_mse(const FieldConfig& config, const ParamSet& params,
                          const Tensor& fourier_basis,
                          const std::optional<Tensor>& cond,
                          const ContextSet& ctx);

using TaskLossFn = std::function<Tensor(const ParamSet& params, int task_index)>;
using EpisodeSampler = std::function<Episode(int sample_index)>;
using IterCallback = std::function<void(int iteration, float loss)>;

/// MAML outer loop (Adam) over the meta-objective: task loss after
/// inner_steps of inner SGD. Full second-order by default; first_order stops
/// gradients through the inner update. Throws NumericError naming the
/// iteration if training diverges.
void maml_train_generic(ParamSet& params, const TaskLossFn& loss_fn,
                        const MetaConfig& cfg, const IterCallback& cb = {});

/// Reptile: params += eps * mean_b(adapted_b - params), inner adaptation by
/// inner_steps of Adam/SGD on each task.
void reptile_train_generic(ParamSet& params, const TaskLossFn& loss_fn,
                           const MetaConfig& cfg, const IterCallback& cb = {});

void maml_train(ConditionedField& field, const EpisodeSampler& sampler,
                const MetaConfig& cfg, const IterCallback& cb = {});
void reptile_train(ConditionedField& field, const EpisodeSampler& sampler,
                   const MetaConfig& cfg, const IterCallback& cb = {});

/// Adam on the sensor-space MSE against the context observations, field
/// weights free, conditioning frozen. Returns an adapted copy.
ConditionedField test_time_optimize(const ConditionedField& field,
                                    const std::optional<Tensor>& cond,
                                    const ContextSet& ctx, int steps,
                                    float lr = 1e-4f,
                                    const IterCallback& cb = {});

/// Per-view-count CT budgets: 50 / 100 / 1000 / 1000 steps at 1 / 2 / 4 / 8.
int ct_tto_steps(int n_views);

}  // namespace ponp
