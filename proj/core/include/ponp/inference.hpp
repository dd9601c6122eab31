#pragma once

#include <functional>

#include "ponp/encoder.hpp"
#include "ponp/field.hpp"
#include "ponp/forward_map.hpp"

namespace ponp {

inline constexpr float kSigmaMin = 1e-3f;

/// Per-sensor-coordinate Gaussian: mu = F(M), sigma = softplus(F(S)) + floor.
struct GaussianPrediction {
  Tensor mu;     // [sensor_size, d]
  Tensor sigma;  // [sensor_size, d], >= kSigmaMin elementwise
};

/// Field evaluation coordinates a forward map needs. For masking the caller
/// supplies the grid; projection and rendering generate their own sample
/// points.
Tensor fmap_field_points(const ForwardMapSpec& fmap,
                         const std::optional<Tensor>& mask_coords);

/// Applies a forward map to precomputed per-point field values.
Tensor fmap_apply_values(const Tensor& field_values, const ForwardMapSpec& fmap);

/// Evaluates the two field heads once at coords and sends each through the
/// forward map. Positivity is enforced after F, so it survives sign-changing
/// maps.
GaussianPrediction predict_sensor_gaussian(const ConditionedField& field,
                                           const std::optional<Tensor>& cond,
                                           const Tensor& coords,
                                           const ForwardMapSpec& fmap);

/// Mean over sensor coordinates of -log N(y; mu, sigma^2).
Tensor cnp_nll(const GaussianPrediction& pred, const Tensor& y);

/// Monte-Carlo maximum likelihood for latent models:
///   -(1/N) log( (1/K) sum_k exp( sum_i log N(y_i; mu_i(z_k), sigma_i(z_k)) ) )
/// computed with a stabilized log-sum-exp; gradients flow through the
/// reparameterized samples. K=1 reduces to cnp_nll given the same z.
Tensor npml_loss(const Representation& repr, int k_samples, Rng& rng,
                 const std::function<GaussianPrediction(const Tensor& z)>& decode,
                 const Tensor& y);

struct UncertaintyMaps {
  std::vector<float> mean;
  std::vector<float> stddev;
  int height = 0;
  int width = 0;
};

/// Per-pixel mean/std over n decoded reconstructions from latent samples.
/// decode_grid returns the rasterized field quantities for one z.
UncertaintyMaps uncertainty_map(
    const Representation& repr, int n, std::uint64_t seed,
    const std::function<std::vector<float>(const Tensor& z)>& decode_grid,
    int height, int width);

}  // namespace ponp
