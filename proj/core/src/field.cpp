#include "ponp/field.hpp"

#include <cmath>
#include <string>

namespace ponp {

namespace {

constexpr float kTwoPi = 6.2831853071795864769f;

std::string layer_name(int i, const char* part) {
  return "layer" + std::to_string(i) + "." + part;
}

Tensor fan_in_uniform(int fan_in, int fan_out, Rng& rng) {
  const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
  return Tensor::uniform({fan_in, fan_out}, -bound, bound, rng);
}

}  // namespace

void FieldConfig::validate() const {
  if (width < 1 || depth < 1) throw ConfigError("field: width and depth must be >= 1");
  if (arch == FieldArch::siren && !(omega0 > 0.0f)) {
    throw ConfigError("field: siren requires omega0 > 0");
  }
  if (arch == FieldArch::fourier_mlp && fourier_features < 1) {
    throw ConfigError("field: fourier_mlp requires fourier_features >= 1");
  }
  if (conditioning != Conditioning::none && cond_dim < 1) {
    throw ConfigError("field: conditioning requires cond_dim >= 1");
  }
}

Tensor fourier_embed(const Tensor& coords, const Tensor& basis) {
  Tensor xb = scale(matmul(coords, basis), kTwoPi);
  return concat_cols(sin(xb), cos(xb));
}

ConditionedField init_field(const FieldConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ConditionedField field;
  field.config = config;

  int base_in = config.in_dim;
  if (config.arch == FieldArch::fourier_mlp) {
    field.fourier_basis = Tensor::normal({config.in_dim, config.fourier_features},
                                         0.0f, config.fourier_scale, rng);
    base_in = 2 * config.fourier_features;
  }
  int first_in = base_in;
  if (config.conditioning == Conditioning::concat) first_in += config.cond_dim;

  ParamSet& p = field.params;
  for (int l = 0; l < config.depth; ++l) {
    const int fan_in = l == 0 ? first_in : config.width;
    Tensor w;
    if (config.arch == FieldArch::siren) {
      // First layer U(-1/n, 1/n); deeper layers U(-sqrt(6/n)/w0, sqrt(6/n)/w0).
      if (l == 0) {
        const float b = 1.0f / static_cast<float>(fan_in);
        w = Tensor::uniform({fan_in, config.width}, -b, b, rng);
      } else {
        const float b = std::sqrt(6.0f / static_cast<float>(fan_in)) / config.omega0;
        w = Tensor::uniform({fan_in, config.width}, -b, b, rng);
      }
    } else {
      w = fan_in_uniform(fan_in, config.width, rng);
    }
    p.add(layer_name(l, "W"), std::move(w));
    p.add(layer_name(l, "b"), Tensor::zeros({1, config.width}));
    if (config.conditioning == Conditioning::film) {
      p.add(layer_name(l, "film_scale"), Tensor::zeros({config.cond_dim, config.width}));
      p.add(layer_name(l, "film_shift"), Tensor::zeros({config.cond_dim, config.width}));
    }
  }
  if (config.conditioning == Conditioning::first_layer_bias) {
    p.add("psi.W", Tensor::zeros({config.cond_dim, config.width}));
  }
  for (const char* head : {"head_m", "head_s"}) {
    Tensor w;
    if (config.arch == FieldArch::siren) {
      const float b = std::sqrt(6.0f / static_cast<float>(config.width)) / config.omega0;
      w = Tensor::uniform({config.width, config.out_dim}, -b, b, rng);
    } else {
      w = fan_in_uniform(config.width, config.out_dim, rng);
    }
    p.add(std::string(head) + ".W", std::move(w));
    p.add(std::string(head) + ".b", Tensor::zeros({1, config.out_dim}));
  }
  return field;
}

FieldOutput eval_field(const FieldConfig& config, const ParamSet& params,
                       const Tensor& fourier_basis, const Tensor& coords,
                       const std::optional<Tensor>& cond) {
  if (coords.ndim() != 2 || coords.dim(1) != config.in_dim) {
    throw ShapeError("eval_field: coords must be [n," +
                     std::to_string(config.in_dim) + "], got " +
                     shape_str(coords.shape()));
  }
  detail::check_finite(coords.values(), "eval_field(coords)");
  const bool wants_cond = config.conditioning != Conditioning::none;
  if (wants_cond != cond.has_value()) {
    throw ConfigError("eval_field: conditioning mode and representation disagree");
  }
  const int n = coords.dim(0);

  // A global [1,c] representation broadcasts over rows; a per-target [n,c]
  // matrix conditions each row with its own vector.
  Tensor z;
  bool z_per_row = false;
  if (cond) {
    z = *cond;
    if (z.ndim() != 2 || z.dim(1) != config.cond_dim) {
      throw ShapeError("eval_field: conditioning must be [*, " +
                       std::to_string(config.cond_dim) + "], got " +
                       shape_str(z.shape()));
    }
    if (z.dim(0) == n) {
      z_per_row = true;
    } else if (z.dim(0) != 1) {
      throw ShapeError("eval_field: conditioning rows must be 1 or match coords");
    }
  }

  Tensor h = coords;
  if (config.arch == FieldArch::fourier_mlp) {
    h = fourier_embed(h, fourier_basis);
  }
  if (config.conditioning == Conditioning::concat) {
    Tensor zr = z_per_row ? z : repeat_rows(z, n);
    h = concat_cols(h, zr);
  }

  for (int l = 0; l < config.depth; ++l) {
    Tensor pre = matmul(h, params.at(layer_name(l, "W")));
    Tensor bias = params.at(layer_name(l, "b"));
    if (l == 0 && config.conditioning == Conditioning::first_layer_bias) {
      Tensor shift = matmul(z, params.at("psi.W"));
      if (z_per_row) {
        pre = add(add_rowvec(pre, bias), shift);
      } else {
        pre = add_rowvec(add_rowvec(pre, bias), shift);
      }
    } else {
      pre = add_rowvec(pre, bias);
    }
    if (config.conditioning == Conditioning::film) {
      Tensor gamma = matmul(z, params.at(layer_name(l, "film_scale")));
      Tensor beta = matmul(z, params.at(layer_name(l, "film_shift")));
      if (z_per_row) {
        pre = add(mul(pre, add_scalar(gamma, 1.0f)), beta);
      } else {
        pre = add_rowvec(mul_rowvec(pre, add_scalar(gamma, 1.0f)), beta);
      }
    }
    if (config.arch == FieldArch::siren) {
      h = sin(scale(pre, config.omega0));
    } else {
      h = relu(pre);
    }
  }

  FieldOutput out;
  out.mean = add_rowvec(matmul(h, params.at("head_m.W")), params.at("head_m.b"));
  out.sigma_raw =
      add_rowvec(matmul(h, params.at("head_s.W")), params.at("head_s.b"));
  return out;
}

FieldOutput ConditionedField::operator()(
    const Tensor& coords, const std::optional<Tensor>& cond) const {
  return eval_field(config, params, fourier_basis, coords, cond);
}

ConditionedField ConditionedField::clone() const {
  ConditionedField copy;
  copy.config = config;
  copy.params = params.clone();
  copy.fourier_basis = fourier_basis;
  return copy;
}

ConditionedField condition_first_layer_bias(const ConditionedField& field,
                                            const Tensor& z) {
  if (field.config.conditioning != Conditioning::first_layer_bias) {
    throw ConfigError("condition_first_layer_bias: field is not in first_layer_bias mode");
  }
  if (z.ndim() != 2 || z.dim(0) != 1 || z.dim(1) != field.config.cond_dim) {
    throw ShapeError("condition_first_layer_bias: z must be [1," +
                     std::to_string(field.config.cond_dim) + "]");
  }
  Tensor shift = matmul(z.detach(), field.params.at("psi.W").detach());

  ConditionedField out;
  out.config = field.config;
  out.config.conditioning = Conditioning::none;
  out.config.cond_dim = 0;
  out.fourier_basis = field.fourier_basis;
  for (const auto& [name, t] : field.params.items()) {
    if (name == "psi.W") continue;
    if (name == "layer0.b") {
      std::vector<float> b(t.values().begin(), t.values().end());
      for (size_t i = 0; i < b.size(); ++i) b[i] += shift.values()[i];
      out.params.add(name, Tensor::from_data(t.shape(), std::move(b)));
    } else {
      out.params.add(name, t.detach());
    }
  }
  return out;
}

}  // namespace ponp
