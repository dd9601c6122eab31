#include "ponp/inference.hpp"

#include <algorithm>
#include <cmath>

namespace ponp {

namespace {
constexpr float kHalfLog2Pi = 0.91893853320467274178f;
}

Tensor fmap_field_points(const ForwardMapSpec& fmap,
                         const std::optional<Tensor>& mask_coords) {
  switch (fmap.kind()) {
    case ForwardMapSpec::Kind::masking:
      if (!mask_coords) {
        throw ConfigError("fmap_field_points: masking needs the sampling grid");
      }
      return *mask_coords;
    case ForwardMapSpec::Kind::integral_projection:
      return projection_points(fmap.projection());
    case ForwardMapSpec::Kind::volume_render:
      return render_points(fmap.render());
  }
  throw ConfigError("fmap_field_points: unknown forward map");
}

Tensor fmap_apply_values(const Tensor& field_values, const ForwardMapSpec& fmap) {
  switch (fmap.kind()) {
    case ForwardMapSpec::Kind::masking:
      return apply_masking(field_values, fmap.masking().observed);
    case ForwardMapSpec::Kind::integral_projection:
      return project_field_values(field_values, fmap.projection());
    case ForwardMapSpec::Kind::volume_render:
      return composite_render_values(field_values, fmap.render());
  }
  throw ConfigError("fmap_apply_values: unknown forward map");
}

GaussianPrediction predict_sensor_gaussian(const ConditionedField& field,
                                           const std::optional<Tensor>& cond,
                                           const Tensor& coords,
                                           const ForwardMapSpec& fmap) {
  fmap.validate();
  FieldOutput out = eval_field(field, coords, cond);
  GaussianPrediction pred;
  pred.mu = fmap_apply_values(out.mean, fmap);
  pred.sigma = add_scalar(softplus(fmap_apply_values(out.sigma_raw, fmap)),
                          kSigmaMin);
  return pred;
}

namespace {

void require_prediction(const GaussianPrediction& pred, const Tensor& y) {
  if (pred.mu.shape() != y.shape() || pred.sigma.shape() != y.shape()) {
    throw ShapeError("gaussian likelihood: prediction/target shape mismatch");
  }
  for (float s : pred.sigma.values()) {
    if (s < kSigmaMin * 0.999f) {
      throw NumericError("gaussian likelihood: sigma fell below its floor");
    }
  }
}

/// Sum over coordinates of log N(y; mu, sigma^2), as a graph scalar.
Tensor log_likelihood_sum(const GaussianPrediction& pred, const Tensor& y) {
  Tensor resid = divide(sub(y, pred.mu), pred.sigma);
  Tensor per_coord =
      add_scalar(add(scale(square(resid), 0.5f), log(pred.sigma)), kHalfLog2Pi);
  return neg(sum_all(per_coord));
}

}  // namespace

Tensor cnp_nll(const GaussianPrediction& pred, const Tensor& y) {
  require_prediction(pred, y);
  return scale(log_likelihood_sum(pred, y),
               -1.0f / static_cast<float>(y.size()));
}

Tensor npml_loss(const Representation& repr, int k_samples, Rng& rng,
                 const std::function<GaussianPrediction(const Tensor& z)>& decode,
                 const Tensor& y) {
  if (k_samples < 1) throw ConfigError("npml_loss: need K >= 1 samples");
  if (!repr.has_latent()) throw ConfigError("npml_loss: model has no latent path");

  std::vector<Tensor> log_liks;
  log_liks.reserve(static_cast<size_t>(k_samples));
  for (int k = 0; k < k_samples; ++k) {
    Tensor z = sample_latent(repr, rng);
    GaussianPrediction pred = decode(z);
    require_prediction(pred, y);
    log_liks.push_back(log_likelihood_sum(pred, y));
  }

  // log( (1/K) sum exp(l_k) ) = m + log( sum exp(l_k - m) ) - log K
  float m = log_liks[0].item();
  for (const Tensor& l : log_liks) m = std::max(m, l.item());
  Tensor acc;
  for (const Tensor& l : log_liks) {
    Tensor e = exp(add_scalar(l, -m));
    acc = acc.defined() ? add(acc, e) : e;
  }
  Tensor lse = add_scalar(log(acc),
                          m - std::log(static_cast<float>(k_samples)));
  return scale(lse, -1.0f / static_cast<float>(y.size()));
}

UncertaintyMaps uncertainty_map(
    const Representation& repr, int n, std::uint64_t seed,
    const std::function<std::vector<float>(const Tensor& z)>& decode_grid,
    int height, int width) {
  if (!repr.has_latent()) {
    throw ConfigError("uncertainty_map: model has no latent to sample");
  }
  if (n < 1) throw ConfigError("uncertainty_map: need n >= 1 samples");

  const size_t pixels = static_cast<size_t>(height) * width;
  std::vector<double> sum(pixels, 0.0), sumsq(pixels, 0.0);
  Rng rng(seed);
  for (int s = 0; s < n; ++s) {
    Tensor z = sample_latent(repr, rng);
    std::vector<float> img = decode_grid(z.detach());
    if (img.size() != pixels) {
      throw ShapeError("uncertainty_map: decoded grid has wrong size");
    }
    for (size_t i = 0; i < pixels; ++i) {
      sum[i] += img[i];
      sumsq[i] += static_cast<double>(img[i]) * img[i];
    }
  }
  UncertaintyMaps maps;
  maps.height = height;
  maps.width = width;
  maps.mean.resize(pixels);
  maps.stddev.resize(pixels);
  for (size_t i = 0; i < pixels; ++i) {
    const double mu = sum[i] / n;
    const double var = std::max(0.0, sumsq[i] / n - mu * mu);
    maps.mean[i] = static_cast<float>(mu);
    maps.stddev[i] = static_cast<float>(std::sqrt(var));
  }
  return maps;
}

}  // namespace ponp
