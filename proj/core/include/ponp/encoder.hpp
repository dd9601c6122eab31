#pragma once

#include <cstdint>
#include <optional>

#include "ponp/forward_map.hpp"
#include "ponp/optim.hpp"

namespace ponp {

/// Partial sensor observations conditioning the predictor. x and y are
/// row-aligned: pixel coords -> RGB for images, projection angle ->
/// sinogram row for CT, ray (origin, direction) -> RGB for view synthesis.
struct ContextSet {
  Tensor x;  // [k, d_in]
  Tensor y;  // [k, d_obs]
  ForwardMapSpec sensor_params;

  int size() const { return x.defined() ? x.dim(0) : 0; }
};

enum class EncoderKind { cnp, lnp, attn_cnp, attn_lnp, convcnp };

struct EncoderConfig {
  EncoderKind kind = EncoderKind::cnp;
  int x_dim = 2;
  int y_dim = 1;
  // Attention queries may live in a different space than context inputs
  // (field coords vs projection angles for CT); <= 0 means same as x_dim.
  int query_x_dim = 0;
  int embed_width = 128;
  int embed_depth = 3;
  int z_dim = 128;
  int attn_heads = 1;
  float sigma_floor = 1e-3f;
  // convcnp (on-grid) settings
  int grid_h = 32;
  int grid_w = 32;
  int conv_channels = 64;
  int conv_layers = 4;
  int smooth_kernel = 5;

  bool latent() const {
    return kind == EncoderKind::lnp || kind == EncoderKind::attn_lnp;
  }
  int effective_query_dim() const { return query_x_dim > 0 ? query_x_dim : x_dim; }
  bool attentive() const {
    return kind == EncoderKind::attn_cnp || kind == EncoderKind::attn_lnp;
  }
  void validate() const;
};

struct Encoder {
  EncoderConfig config;
  ParamSet params;
};

Encoder init_encoder(const EncoderConfig& config, std::uint64_t seed);

/// Output of encoder + aggregator. Deterministic part: [1, z] global vector
/// (CNP) or [m, z] per-target matrix (attention, convcnp). Latent part:
/// Gaussian (mu, sigma) over a global z, sigma floored elementwise.
struct Representation {
  Tensor det;
  Tensor mu;
  Tensor sigma;

  bool has_det() const { return det.defined(); }
  bool has_latent() const { return mu.defined(); }
};

/// Mean-aggregated deterministic representation, z = mean_i MLP(x_i, y_i).
Representation encode_cnp(const Encoder& enc, const ContextSet& ctx);
/// Gaussian over z in VAE style; sigma = softplus(head) + floor.
Representation encode_lnp(const Encoder& enc, const ContextSet& ctx);
/// Cross-attention: per-target r_i = softmax_k(q_i . k / sqrt(d)) v. For
/// attn_lnp the global latent path is included as well.
Representation encode_attention(const Encoder& enc, const ContextSet& ctx,
                                const Tensor& target_x);
/// On-grid ConvCNP: CNN over (mask-weighted values, mask) with density
/// normalization; returns the dense representation grid [z, h, w].
Tensor encode_convcnp_grid(const Encoder& enc, const Tensor& image_with_mask);

/// Dispatch on encoder kind. target_x is required for attentive encoders;
/// for convcnp, the context is rasterized onto the configured grid and the
/// representation is read at target pixel rows.
Representation encode(const Encoder& enc, const ContextSet& ctx,
                      const std::optional<Tensor>& target_x);

/// Reparameterized sample z = mu + sigma * eps.
Tensor sample_latent(const Representation& repr, Rng& rng);

/// Rasterize an image-task context onto [y_dim+1, h, w]: observed pixels
/// carry values, unobserved are zero, last channel is the 0/1 mask.
Tensor context_to_grid(const ContextSet& ctx, int h, int w);

/// Rows of a dense grid [z, h, w] at flat pixel indices -> [m, z].
Tensor read_grid_at(const Tensor& grid, const std::vector<int>& pixel_indices);

/// Conditioning matrix consumed by the field: concatenation of the
/// deterministic part (broadcast if global) and the sampled latent.
Tensor conditioning_input(const Representation& repr,
                          const std::optional<Tensor>& z_sample, int rows);

/// Width of the conditioning vector a decoder should expect.
int conditioning_dim(const EncoderConfig& config);

}  // namespace ponp
