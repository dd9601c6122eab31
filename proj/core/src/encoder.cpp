#include "ponp/encoder.hpp"

#include <cmath>
#include <string>

namespace ponp {

namespace {

Tensor fan_in_uniform(int fan_in, int fan_out, Rng& rng) {
  const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
  return Tensor::uniform({fan_in, fan_out}, -bound, bound, rng);
}

void add_mlp(ParamSet& p, const std::string& prefix, int in, int width,
             int out, int depth, Rng& rng) {
  for (int l = 0; l < depth; ++l) {
    const int fi = l == 0 ? in : width;
    const int fo = l == depth - 1 ? out : width;
    p.add(prefix + std::to_string(l) + ".W", fan_in_uniform(fi, fo, rng));
    p.add(prefix + std::to_string(l) + ".b", Tensor::zeros({1, fo}));
  }
}

/// Linear layers with ReLU between them, final layer linear.
Tensor run_mlp(const ParamSet& p, const std::string& prefix, int depth,
               const Tensor& in) {
  Tensor h = in;
  for (int l = 0; l < depth; ++l) {
    h = add_rowvec(matmul(h, p.at(prefix + std::to_string(l) + ".W")),
                   p.at(prefix + std::to_string(l) + ".b"));
    if (l + 1 < depth) h = relu(h);
  }
  return h;
}

void require_context(const ContextSet& ctx) {
  if (ctx.size() < 1) throw ConfigError("encoder: empty context set");
  if (!ctx.y.defined() || ctx.y.dim(0) != ctx.x.dim(0)) {
    throw ShapeError("encoder: context inputs and outputs are not row-aligned");
  }
}

}  // namespace

void EncoderConfig::validate() const {
  if (embed_width < 1 || embed_depth < 1 || z_dim < 1) {
    throw ConfigError("encoder: embed_width/embed_depth/z_dim must be >= 1");
  }
  if (attn_heads < 1 || z_dim % attn_heads != 0 ||
      embed_width % attn_heads != 0) {
    throw ConfigError("encoder: attn_heads must divide z_dim and embed_width");
  }
  if (kind == EncoderKind::convcnp) {
    if (conv_channels < 1 || conv_layers < 1 || smooth_kernel % 2 == 0) {
      throw ConfigError("encoder: bad convcnp settings");
    }
  }
}

Encoder init_encoder(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  Encoder enc;
  enc.config = config;
  ParamSet& p = enc.params;
  const int pair_dim = config.x_dim + config.y_dim;

  switch (config.kind) {
    case EncoderKind::cnp:
      add_mlp(p, "embed.", pair_dim, config.embed_width, config.z_dim,
              config.embed_depth, rng);
      break;
    case EncoderKind::lnp:
      add_mlp(p, "embed.", pair_dim, config.embed_width, config.z_dim,
              config.embed_depth, rng);
      p.add("lat_mu.W", fan_in_uniform(config.z_dim, config.z_dim, rng));
      p.add("lat_mu.b", Tensor::zeros({1, config.z_dim}));
      p.add("lat_sigma.W", fan_in_uniform(config.z_dim, config.z_dim, rng));
      p.add("lat_sigma.b", Tensor::zeros({1, config.z_dim}));
      break;
    case EncoderKind::attn_lnp:
    case EncoderKind::attn_cnp:
      // Queries share the key embedding when both live in the same space,
      // so a target equal to a context input gets the matching key.
      if (config.effective_query_dim() != config.x_dim) {
        add_mlp(p, "query.", config.effective_query_dim(), config.embed_width,
                config.embed_width, config.embed_depth, rng);
      }
      add_mlp(p, "key.", config.x_dim, config.embed_width, config.embed_width,
              config.embed_depth, rng);
      add_mlp(p, "value.", pair_dim, config.embed_width, config.z_dim,
              config.embed_depth, rng);
      if (config.kind == EncoderKind::attn_lnp) {
        add_mlp(p, "lat_embed.", pair_dim, config.embed_width, config.z_dim,
                config.embed_depth, rng);
        p.add("lat_mu.W", fan_in_uniform(config.z_dim, config.z_dim, rng));
        p.add("lat_mu.b", Tensor::zeros({1, config.z_dim}));
        p.add("lat_sigma.W", fan_in_uniform(config.z_dim, config.z_dim, rng));
        p.add("lat_sigma.b", Tensor::zeros({1, config.z_dim}));
      }
      break;
    case EncoderKind::convcnp: {
      // Shared smoothing kernel applied per input channel, Gaussian at init.
      const int ks = config.smooth_kernel;
      std::vector<float> k(static_cast<size_t>(ks) * ks);
      const float s2 = 2.0f * (ks / 4.0f) * (ks / 4.0f);
      float sum = 0.0f;
      for (int i = 0; i < ks; ++i) {
        for (int j = 0; j < ks; ++j) {
          const float di = i - ks / 2, dj = j - ks / 2;
          k[static_cast<size_t>(i) * ks + j] = std::exp(-(di * di + dj * dj) / s2);
          sum += k[static_cast<size_t>(i) * ks + j];
        }
      }
      for (auto& v : k) v /= sum;
      p.add("smooth.K", Tensor::from_data({1, 1, ks, ks}, std::move(k)));

      int cin = config.y_dim + 1;  // normalized signal channels + density
      for (int l = 0; l < config.conv_layers; ++l) {
        const int cout = config.conv_channels;
        const int fan = cin * 9;
        const float bound = std::sqrt(6.0f / static_cast<float>(fan));
        p.add("conv" + std::to_string(l) + ".W",
              Tensor::uniform({cout, cin, 3, 3}, -bound, bound, rng));
        p.add("conv" + std::to_string(l) + ".b", Tensor::zeros({cout}));
        cin = cout;
      }
      const int fan = cin * 9;
      const float bound = std::sqrt(6.0f / static_cast<float>(fan));
      p.add("head.W", Tensor::uniform({config.z_dim, cin, 3, 3}, -bound, bound, rng));
      p.add("head.b", Tensor::zeros({config.z_dim}));
      break;
    }
  }
  return enc;
}

Representation encode_cnp(const Encoder& enc, const ContextSet& ctx) {
  require_context(ctx);
  Tensor e = run_mlp(enc.params, "embed.", enc.config.embed_depth,
                     concat_cols(ctx.x, ctx.y));
  Representation r;
  r.det = mean_axis(e, 0);
  return r;
}

Representation encode_lnp(const Encoder& enc, const ContextSet& ctx) {
  require_context(ctx);
  Tensor e = run_mlp(enc.params, "embed.", enc.config.embed_depth,
                     concat_cols(ctx.x, ctx.y));
  Tensor s = mean_axis(e, 0);
  Representation r;
  r.mu = add_rowvec(matmul(s, enc.params.at("lat_mu.W")),
                    enc.params.at("lat_mu.b"));
  r.sigma = add_scalar(
      softplus(add_rowvec(matmul(s, enc.params.at("lat_sigma.W")),
                          enc.params.at("lat_sigma.b"))),
      enc.config.sigma_floor);
  return r;
}

namespace {

/// Scaled dot-product cross attention, optionally multi-head by slicing the
/// query/key and value widths into equal groups.
Tensor cross_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                       int heads) {
  const int dq = q.dim(1), dv = v.dim(1);
  const int hq = dq / heads, hv = dv / heads;
  Tensor out;
  for (int h = 0; h < heads; ++h) {
    Tensor qh = heads == 1 ? q : slice_cols(q, h * hq, (h + 1) * hq);
    Tensor kh = heads == 1 ? k : slice_cols(k, h * hq, (h + 1) * hq);
    Tensor vh = heads == 1 ? v : slice_cols(v, h * hv, (h + 1) * hv);
    Tensor logits =
        scale(matmul(qh, transpose(kh)), 1.0f / std::sqrt(static_cast<float>(hq)));
    Tensor rh = matmul(softmax(logits), vh);
    out = h == 0 ? rh : concat_cols(out, rh);
  }
  return out;
}

}  // namespace

Representation encode_attention(const Encoder& enc, const ContextSet& ctx,
                                const Tensor& target_x) {
  require_context(ctx);
  if (!target_x.defined() || target_x.dim(0) < 1) {
    throw ConfigError("encode_attention: empty target set");
  }
  const EncoderConfig& cfg = enc.config;
  if (target_x.dim(1) != cfg.effective_query_dim()) {
    throw ShapeError("encode_attention: query inputs must be [m," +
                     std::to_string(cfg.effective_query_dim()) + "]");
  }
  const bool shared_qk = cfg.effective_query_dim() == cfg.x_dim;
  Tensor q = run_mlp(enc.params, shared_qk ? "key." : "query.",
                     cfg.embed_depth, target_x);
  Tensor k = run_mlp(enc.params, "key.", cfg.embed_depth, ctx.x);
  Tensor v = run_mlp(enc.params, "value.", cfg.embed_depth,
                     concat_cols(ctx.x, ctx.y));
  Representation r;
  r.det = cross_attention(q, k, v, cfg.attn_heads);
  if (cfg.kind == EncoderKind::attn_lnp) {
    Tensor e = run_mlp(enc.params, "lat_embed.", cfg.embed_depth,
                       concat_cols(ctx.x, ctx.y));
    Tensor s = mean_axis(e, 0);
    r.mu = add_rowvec(matmul(s, enc.params.at("lat_mu.W")),
                      enc.params.at("lat_mu.b"));
    r.sigma = add_scalar(
        softplus(add_rowvec(matmul(s, enc.params.at("lat_sigma.W")),
                            enc.params.at("lat_sigma.b"))),
        cfg.sigma_floor);
  }
  return r;
}

namespace {

/// Convolve each channel of x[c, h, w] with the shared 2D kernel.
Tensor smooth_channels(const Tensor& x, const Tensor& kernel) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor flat = reshape(x, {c, h * w});
  std::vector<Tensor> rows;
  rows.reserve(static_cast<size_t>(c));
  for (int ci = 0; ci < c; ++ci) {
    Tensor one = gather_rows(flat, {ci});
    Tensor conv = conv2d(reshape(one, {1, h, w}), kernel, std::nullopt,
                         Padding::periodic);
    rows.push_back(reshape(conv, {1, h * w}));
  }
  return reshape(concat_rows(rows), {c, h, w});
}

}  // namespace

Tensor encode_convcnp_grid(const Encoder& enc, const Tensor& image_with_mask) {
  const EncoderConfig& cfg = enc.config;
  if (image_with_mask.ndim() != 3 ||
      image_with_mask.dim(0) != cfg.y_dim + 1) {
    throw ShapeError("encode_convcnp_grid: expected [y_dim+1, h, w] input");
  }
  const int c = cfg.y_dim, h = image_with_mask.dim(1), w = image_with_mask.dim(2);

  // Mask channel must be 0/1 and somewhere nonzero.
  {
    auto vals = image_with_mask.values();
    const size_t off = static_cast<size_t>(c) * h * w;
    float msum = 0.0f;
    for (size_t i = off; i < off + static_cast<size_t>(h) * w; ++i) {
      const float m = vals[i];
      if (m != 0.0f && m != 1.0f) {
        throw ConfigError("encode_convcnp_grid: mask channel must be 0/1");
      }
      msum += m;
    }
    if (msum == 0.0f) throw ConfigError("encode_convcnp_grid: all-zero mask");
  }

  const Tensor& kernel = enc.params.at("smooth.K");
  Tensor smoothed = smooth_channels(image_with_mask, kernel);  // [c+1, h, w]
  Tensor flat = reshape(smoothed, {c + 1, h * w});

  std::vector<int> sig_idx(static_cast<size_t>(c));
  for (int i = 0; i < c; ++i) sig_idx[static_cast<size_t>(i)] = i;
  Tensor sig = gather_rows(flat, sig_idx);              // [c, h*w]
  Tensor density = gather_rows(flat, {c});              // [1, h*w]
  Tensor denom = add_scalar(repeat_rows(density, c), 1e-6f);
  Tensor normalized = divide(sig, denom);

  Tensor features = reshape(concat_rows(normalized, density), {c + 1, h, w});

  Tensor hgrid = features;
  for (int l = 0; l < cfg.conv_layers; ++l) {
    Tensor conv = relu(conv2d(hgrid, enc.params.at("conv" + std::to_string(l) + ".W"),
                              enc.params.at("conv" + std::to_string(l) + ".b"),
                              Padding::periodic));
    hgrid = (l == 0) ? conv : add(conv, hgrid);  // residual once widths match
  }
  return conv2d(hgrid, enc.params.at("head.W"), enc.params.at("head.b"),
                Padding::periodic);
}

Tensor context_to_grid(const ContextSet& ctx, int h, int w) {
  require_context(ctx);
  const int c = ctx.y.dim(1);
  std::vector<float> grid(static_cast<size_t>(c + 1) * h * w, 0.0f);
  for (int r = 0; r < ctx.size(); ++r) {
    // Context x holds pixel-centre coords in [-1,1]; invert the rasterization.
    const float xf = (ctx.x.at(r, 0) + 1.0f) * 0.5f * w - 0.5f;
    const float yf = (ctx.x.at(r, 1) + 1.0f) * 0.5f * h - 0.5f;
    const int col = static_cast<int>(std::lround(xf));
    const int row = static_cast<int>(std::lround(yf));
    if (row < 0 || row >= h || col < 0 || col >= w) {
      throw ShapeError("context_to_grid: context point off the pixel grid");
    }
    for (int ci = 0; ci < c; ++ci) {
      grid[(static_cast<size_t>(ci) * h + row) * w + col] = ctx.y.at(r, ci);
    }
    grid[(static_cast<size_t>(c) * h + row) * w + col] = 1.0f;
  }
  return Tensor::from_data({c + 1, h, w}, std::move(grid));
}

Tensor read_grid_at(const Tensor& grid, const std::vector<int>& pixel_indices) {
  if (grid.ndim() != 3) throw ShapeError("read_grid_at: expected [z, h, w]");
  const int z = grid.dim(0), hw = grid.dim(1) * grid.dim(2);
  return gather_rows(transpose(reshape(grid, {z, hw})), pixel_indices);
}

Representation encode(const Encoder& enc, const ContextSet& ctx,
                      const std::optional<Tensor>& target_x) {
  switch (enc.config.kind) {
    case EncoderKind::cnp:
      return encode_cnp(enc, ctx);
    case EncoderKind::lnp:
      return encode_lnp(enc, ctx);
    case EncoderKind::attn_cnp:
    case EncoderKind::attn_lnp:
      if (!target_x) throw ConfigError("encode: attentive encoder needs target inputs");
      return encode_attention(enc, ctx, *target_x);
    case EncoderKind::convcnp: {
      if (!target_x) throw ConfigError("encode: convcnp needs target inputs");
      const int h = enc.config.grid_h, w = enc.config.grid_w;
      Tensor grid = encode_convcnp_grid(enc, context_to_grid(ctx, h, w));
      std::vector<int> idx;
      idx.reserve(static_cast<size_t>(target_x->dim(0)));
      for (int r = 0; r < target_x->dim(0); ++r) {
        const float xf = (target_x->at(r, 0) + 1.0f) * 0.5f * w - 0.5f;
        const float yf = (target_x->at(r, 1) + 1.0f) * 0.5f * h - 0.5f;
        const int col = static_cast<int>(std::lround(xf));
        const int row = static_cast<int>(std::lround(yf));
        if (row < 0 || row >= h || col < 0 || col >= w) {
          throw ShapeError("encode: convcnp target off the pixel grid");
        }
        idx.push_back(row * w + col);
      }
      Representation r;
      r.det = read_grid_at(grid, idx);
      return r;
    }
  }
  throw ConfigError("encode: unknown encoder kind");
}

Tensor sample_latent(const Representation& repr, Rng& rng) {
  if (!repr.has_latent()) throw ConfigError("sample_latent: no latent path");
  Tensor eps = Tensor::normal(repr.mu.shape(), 0.0f, 1.0f, rng);
  return add(repr.mu, mul(repr.sigma, eps));
}

Tensor conditioning_input(const Representation& repr,
                          const std::optional<Tensor>& z_sample, int rows) {
  Tensor det;
  if (repr.has_det()) {
    det = repr.det.dim(0) == rows ? repr.det
          : repr.det.dim(0) == 1  ? repeat_rows(repr.det, rows)
                                  : Tensor();
    if (!det.defined()) {
      throw ShapeError("conditioning_input: deterministic rows mismatch");
    }
  }
  Tensor lat;
  if (z_sample) {
    lat = z_sample->dim(0) == rows ? *z_sample : repeat_rows(*z_sample, rows);
  }
  if (det.defined() && lat.defined()) return concat_cols(det, lat);
  if (det.defined()) return det;
  if (lat.defined()) return lat;
  throw ConfigError("conditioning_input: representation is empty");
}

int conditioning_dim(const EncoderConfig& config) {
  switch (config.kind) {
    case EncoderKind::cnp:
    case EncoderKind::attn_cnp:
    case EncoderKind::convcnp:
      return config.z_dim;
    case EncoderKind::lnp:
      return config.z_dim;
    case EncoderKind::attn_lnp:
      return 2 * config.z_dim;
  }
  return config.z_dim;
}

}  // namespace ponp
