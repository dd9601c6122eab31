#pragma once

#include <cstdint>
#include <optional>

#include "ponp/ops.hpp"
#include "ponp/optim.hpp"

namespace ponp {

enum class FieldArch { siren, relu_mlp, fourier_mlp };
enum class Conditioning { none, concat, first_layer_bias, film };

struct FieldConfig {
  FieldArch arch = FieldArch::relu_mlp;
  int width = 128;
  int depth = 5;  // hidden layers
  float omega0 = 200.0f;
  int fourier_features = 0;  // fourier_mlp only
  float fourier_scale = 10.0f;
  int in_dim = 2;
  int out_dim = 1;
  Conditioning conditioning = Conditioning::none;
  int cond_dim = 0;

  void validate() const;
};

struct FieldOutput {
  Tensor mean;       // [n, out_dim]
  Tensor sigma_raw;  // [n, out_dim], unbounded; positivity is applied after
                     // the forward map by the inference layer
};

/// Coordinate network with a shared trunk and two affine output heads.
/// Evaluation is pure: identical (params, coords, cond) give identical
/// outputs, and all three are differentiable.
struct ConditionedField {
  FieldConfig config;
  ParamSet params;
  Tensor fourier_basis;  // fixed at init, not trained

  FieldOutput operator()(const Tensor& coords,
                         const std::optional<Tensor>& cond) const;
  ConditionedField clone() const;
};

ConditionedField init_field(const FieldConfig& config, std::uint64_t seed);

/// Evaluation with an explicit parameter set, so adapted or graph-valued
/// parameters (inner loops, TTO clones) reuse the same code path.
FieldOutput eval_field(const FieldConfig& config, const ParamSet& params,
                       const Tensor& fourier_basis, const Tensor& coords,
                       const std::optional<Tensor>& cond);

inline FieldOutput eval_field(const ConditionedField& field,
                              const Tensor& coords,
                              const std::optional<Tensor>& cond) {
  return eval_field(field.config, field.params, field.fourier_basis, coords,
                    cond);
}

/// Materializes the bias shift: returns an unconditioned copy whose first
/// layer bias is b + psi(z).
ConditionedField condition_first_layer_bias(const ConditionedField& field,
                                            const Tensor& z);

/// [sin(2*pi*x*B), cos(2*pi*x*B)] for a fixed basis B[in_dim, m].
Tensor fourier_embed(const Tensor& coords, const Tensor& basis);

}  // namespace ponp
