#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "ponp/encoder.hpp"

using namespace ponp;
using ponp::testing::fd_gradient;
using ponp::testing::grads_close;

namespace {

EncoderConfig small_cfg(EncoderKind kind) {
  EncoderConfig c;
  c.kind = kind;
  c.x_dim = 2;
  c.y_dim = 1;
  c.embed_width = 16;
  c.embed_depth = 3;
  c.z_dim = 8;
  return c;
}

ContextSet random_ctx(int k, Rng& rng, int x_dim = 2, int y_dim = 1) {
  ContextSet ctx;
  ctx.x = Tensor::uniform({k, x_dim}, -1, 1, rng);
  ctx.y = Tensor::uniform({k, y_dim}, -1, 1, rng);
  ctx.sensor_params = ForwardMapSpec{MaskingSpec{{}}};
  return ctx;
}

ContextSet permuted(const ContextSet& ctx, const std::vector<int>& perm) {
  ContextSet out;
  out.x = gather_rows(ctx.x, perm);
  out.y = gather_rows(ctx.y, perm);
  out.sensor_params = ctx.sensor_params;
  return out;
}

/// Reference run of the encoder's embedding MLP (linear/relu stack).
Tensor manual_mlp(const Encoder& enc, const std::string& prefix, Tensor h) {
  for (int l = 0; l < enc.config.embed_depth; ++l) {
    h = add_rowvec(matmul(h, enc.params.at(prefix + std::to_string(l) + ".W")),
                   enc.params.at(prefix + std::to_string(l) + ".b"));
    if (l + 1 < enc.config.embed_depth) h = relu(h);
  }
  return h;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  float m = 0.0f;
  for (int i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

}  // namespace

TEST_CASE("cnp: singleton context gives that pair's embedding") {
  Encoder enc = init_encoder(small_cfg(EncoderKind::cnp), 3);
  Rng rng(1);
  ContextSet ctx = random_ctx(1, rng);
  Representation r = encode_cnp(enc, ctx);
  Tensor ref = manual_mlp(enc, "embed.", concat_cols(ctx.x, ctx.y));
  CHECK(max_abs_diff(r.det, ref) < 1e-6f);
}

TEST_CASE("cnp: permutation invariance and duplication invariance") {
  Encoder enc = init_encoder(small_cfg(EncoderKind::cnp), 5);
  Rng rng(2);
  ContextSet ctx = random_ctx(6, rng);
  Representation a = encode_cnp(enc, ctx);
  Representation b = encode_cnp(enc, permuted(ctx, {5, 3, 0, 2, 4, 1}));
  CHECK(max_abs_diff(a.det, b.det) < 1e-6f);

  ContextSet doubled;
  doubled.x = concat_rows(ctx.x, ctx.x);
  doubled.y = concat_rows(ctx.y, ctx.y);
  doubled.sensor_params = ctx.sensor_params;
  Representation c = encode_cnp(enc, doubled);
  CHECK(max_abs_diff(a.det, c.det) < 1e-6f);

  CHECK_THROWS_AS(encode_cnp(enc, ContextSet{}), ConfigError);
}

TEST_CASE("lnp: gaussian representation") {
  Encoder enc = init_encoder(small_cfg(EncoderKind::lnp), 7);
  Rng rng(3);
  ContextSet ctx = random_ctx(5, rng);
  Representation r = encode_lnp(enc, ctx);
  REQUIRE(r.has_latent());

  SUBCASE("sigma respects the floor") {
    for (float s : r.sigma.values()) CHECK(s >= enc.config.sigma_floor);
  }
  SUBCASE("permutation invariance of (mu, sigma)") {
    Representation q = encode_lnp(enc, permuted(ctx, {4, 2, 0, 1, 3}));
    CHECK(max_abs_diff(r.mu, q.mu) < 1e-6f);
    CHECK(max_abs_diff(r.sigma, q.sigma) < 1e-6f);
  }
  SUBCASE("sampling is reproducible under a fixed seed") {
    Rng s1(99), s2(99);
    Tensor z1 = sample_latent(r, s1);
    Tensor z2 = sample_latent(r, s2);
    CHECK(max_abs_diff(z1, z2) == 0.0f);
  }
  SUBCASE("reparameterized sample gradients match finite differences") {
    auto forward = [&]() {
      Representation rep = encode_lnp(enc, ctx);
      Rng srng(4);  // fixed noise
      Tensor z = sample_latent(rep, srng);
      return mean_all(square(z));
    };
    Tensor loss = forward();
    enc.params.zero_grad();
    backward(loss);
    for (const char* name : {"embed.0.W", "lat_mu.W", "lat_sigma.W"}) {
      auto fd = fd_gradient([&]() { return forward().item(); },
                            enc.params.at(name), 3e-3f);
      CHECK(grads_close(enc.params.at(name).grad(), fd, 2e-3f, 1e-4f));
    }
  }
}

TEST_CASE("attention encoder") {
  EncoderConfig cfg = small_cfg(EncoderKind::attn_cnp);
  Encoder enc = init_encoder(cfg, 11);
  Rng rng(5);
  ContextSet ctx = random_ctx(6, rng);
  Tensor targets = Tensor::uniform({4, 2}, -1, 1, rng);

  SUBCASE("single context pair: every target gets its value embedding") {
    ContextSet one = random_ctx(1, rng);
    Representation r = encode_attention(enc, one, targets);
    Tensor v = manual_mlp(enc, "value.", concat_cols(one.x, one.y));
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < enc.config.z_dim; ++j) {
        CHECK(r.det.at(i, j) == doctest::Approx(v.at(0, j)).epsilon(1e-5));
      }
    }
  }
  SUBCASE("permuting context rows leaves every r_i unchanged") {
    Representation a = encode_attention(enc, ctx, targets);
    Representation b =
        encode_attention(enc, permuted(ctx, {3, 5, 1, 0, 4, 2}), targets);
    CHECK(max_abs_diff(a.det, b.det) < 1e-6f);
  }
  SUBCASE("uniform logits reduce to mean aggregation") {
    // Zero the final key/query layer: logits become constant.
    const std::string last = "key." + std::to_string(cfg.embed_depth - 1);
    for (const char* part : {".W", ".b"}) {
      auto v = enc.params.at(last + part).values_mut();
      std::fill(v.begin(), v.end(), 0.0f);
    }
    Representation r = encode_attention(enc, ctx, targets);
    Tensor v = manual_mlp(enc, "value.", concat_cols(ctx.x, ctx.y));
    Tensor mean_v = mean_axis(v, 0);
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < enc.config.z_dim; ++j) {
        CHECK(std::abs(r.det.at(i, j) - mean_v.at(0, j)) < 1e-5f);
      }
    }
  }
  SUBCASE("sharp logits pick the matching context pair") {
    // A target that coincides with a context input, with scaled-up logits.
    // Wider embeddings keep key norms concentrated so the self-match wins.
    EncoderConfig wide = cfg;
    wide.embed_width = 64;
    wide.z_dim = 32;
    Encoder sharp = init_encoder(wide, 11);
    {
      const std::string last = "key." + std::to_string(wide.embed_depth - 1) + ".W";
      auto v = sharp.params.at(last).values_mut();
      for (auto& x : v) x *= 8.0f;
    }
    std::vector<int> pick{2};
    Tensor t_on_ctx = gather_rows(ctx.x, pick);
    Representation r = encode_attention(sharp, ctx, t_on_ctx);
    Tensor v = manual_mlp(sharp, "value.", concat_cols(ctx.x, ctx.y));
    // cosine similarity of r_0 against each pair's value embedding
    auto cosine = [&](int row) {
      float dot = 0, na = 0, nb = 0;
      for (int j = 0; j < 32; ++j) {
        dot += r.det.at(0, j) * v.at(row, j);
        na += r.det.at(0, j) * r.det.at(0, j);
        nb += v.at(row, j) * v.at(row, j);
      }
      return dot / std::sqrt(na * nb);
    };
    int best = 0;
    for (int row = 1; row < 6; ++row)
      if (cosine(row) > cosine(best)) best = row;
    CHECK(best == 2);
  }
  SUBCASE("empty context or targets error") {
    CHECK_THROWS_AS(encode_attention(enc, ContextSet{}, targets), ConfigError);
  }
}

TEST_CASE("attn_lnp carries both attention and latent paths") {
  EncoderConfig cfg = small_cfg(EncoderKind::attn_lnp);
  Encoder enc = init_encoder(cfg, 13);
  Rng rng(6);
  ContextSet ctx = random_ctx(5, rng);
  Tensor targets = Tensor::uniform({3, 2}, -1, 1, rng);
  Representation r = encode_attention(enc, ctx, targets);
  CHECK(r.has_det());
  CHECK(r.has_latent());
  CHECK(conditioning_dim(cfg) == 2 * cfg.z_dim);
  Rng srng(1);
  Tensor cond = conditioning_input(r, sample_latent(r, srng), 3);
  CHECK(cond.shape() == Shape{3, 2 * cfg.z_dim});
}

TEST_CASE("convcnp grid encoder") {
  EncoderConfig cfg;
  cfg.kind = EncoderKind::convcnp;
  cfg.x_dim = 2;
  cfg.y_dim = 1;
  cfg.z_dim = 6;
  cfg.conv_channels = 8;
  cfg.conv_layers = 3;
  cfg.grid_h = cfg.grid_w = 8;
  Encoder enc = init_encoder(cfg, 17);

  Rng rng(7);
  const int h = 8, w = 8;
  std::vector<float> grid(static_cast<size_t>(2) * h * w, 0.0f);
  for (int i = 0; i < h * w; ++i) {
    if (rng.uniform() < 0.4f) {
      grid[static_cast<size_t>(i)] = rng.uniform();      // value channel
      grid[static_cast<size_t>(h) * w + i] = 1.0f;        // mask channel
    }
  }
  Tensor input = Tensor::from_data({2, h, w}, grid);
  Tensor rep = encode_convcnp_grid(enc, input);
  CHECK(rep.shape() == Shape{6, 8, 8});

  SUBCASE("translation equivariance under periodic shifts") {
    const int dy = 3, dx = 5;
    std::vector<float> shifted(grid.size());
    for (int c = 0; c < 2; ++c) {
      for (int r = 0; r < h; ++r) {
        for (int col = 0; col < w; ++col) {
          shifted[(static_cast<size_t>(c) * h + (r + dy) % h) * w + (col + dx) % w] =
              grid[(static_cast<size_t>(c) * h + r) * w + col];
        }
      }
    }
    Tensor rep2 = encode_convcnp_grid(enc, Tensor::from_data({2, h, w}, shifted));
    float worst = 0.0f;
    for (int c = 0; c < 6; ++c) {
      for (int r = 0; r < h; ++r) {
        for (int col = 0; col < w; ++col) {
          const float a = rep.values()[(static_cast<size_t>(c) * h + r) * w + col];
          const float b = rep2.values()[(static_cast<size_t>(c) * h + (r + dy) % h) * w +
                                        (col + dx) % w];
          worst = std::max(worst, std::abs(a - b));
        }
      }
    }
    CHECK(worst < 1e-4f);
  }
  SUBCASE("full mask twice gives identical output (grid input is canonical)") {
    std::vector<float> full(grid.size());
    for (int i = 0; i < h * w; ++i) {
      full[static_cast<size_t>(i)] = rng.uniform();
      full[static_cast<size_t>(h) * w + i] = 1.0f;
    }
    Tensor in1 = Tensor::from_data({2, h, w}, full);
    Tensor r1 = encode_convcnp_grid(enc, in1);
    Tensor r2 = encode_convcnp_grid(enc, Tensor::from_data({2, h, w}, full));
    CHECK(max_abs_diff(r1, r2) == 0.0f);
  }
  SUBCASE("all-zero mask errors") {
    std::vector<float> empty(grid.size(), 0.0f);
    CHECK_THROWS_AS(encode_convcnp_grid(enc, Tensor::from_data({2, h, w}, empty)),
                    ConfigError);
  }
  SUBCASE("context listing order is a no-op via grid rasterization") {
    ContextSet ctx;
    ctx.x = Tensor::from_data({3, 2}, {-0.75f, -0.75f, 0.25f, 0.25f, 0.75f, -0.25f});
    ctx.y = Tensor::from_data({3, 1}, {0.9f, 0.4f, 0.1f});
    ctx.sensor_params = ForwardMapSpec{MaskingSpec{{}}};
    Tensor g1 = context_to_grid(ctx, 8, 8);
    ContextSet swapped = permuted(ctx, {2, 0, 1});
    Tensor g2 = context_to_grid(swapped, 8, 8);
    CHECK(max_abs_diff(g1, g2) == 0.0f);
  }
}
