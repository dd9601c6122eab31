#include "ponp/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>

#include "json_util.hpp"
#include "ponp/image_io.hpp"
#include "ponp/parallel.hpp"

namespace ponp {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// psnr
// ---------------------------------------------------------------------------

double psnr(std::span<const float> pred, std::span<const float> gt,
            double max_val) {
  if (pred.size() != gt.size() || pred.empty()) {
    throw ShapeError("psnr: size mismatch or empty input");
  }
  double mse = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (gt[i] < -1e-6 || gt[i] > max_val + 1e-6) {
      throw ConfigError("psnr: ground truth exceeds [0, max_val]");
    }
    const double d = static_cast<double>(pred[i]) - gt[i];
    mse += d * d;
  }
  mse /= static_cast<double>(pred.size());
  if (mse == 0.0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(max_val * max_val / mse));
}

double psnr(const Tensor& pred, const Tensor& gt, double max_val) {
  if (pred.shape() != gt.shape()) throw ShapeError("psnr: shape mismatch");
  return psnr(pred.values(), gt.values(), max_val);
}

// ---------------------------------------------------------------------------
// model assembly
// ---------------------------------------------------------------------------

Model build_model(const ExperimentConfig& config) {
  config.validate();
  Model m;
  m.kind = config.model;
  const std::uint64_t seed = config.training.seed;
  if (is_np_model(config.model)) {
    m.encoder = init_encoder(config.encoder, Rng::derive_seed(seed, 1));
    FieldConfig fc = config.field;
    fc.cond_dim = conditioning_dim(config.encoder);
    m.field = init_field(fc, Rng::derive_seed(seed, 2));
  } else {
    m.field = init_field(config.field, Rng::derive_seed(seed, 2));
  }
  return m;
}

// ---------------------------------------------------------------------------
// task suites
// ---------------------------------------------------------------------------

TaskSuite build_task_suite(const ExperimentConfig& config) {
  TaskSuite suite;
  switch (config.task) {
    case TaskKind::ct: {
      const CtDataSection d = config.ct;
      const std::uint64_t train_seed = config.training.seed;
      CtEpisodeConfig ec{d.resolution, d.n_rays, d.n_samples};
      suite.train_episode = [d, ec, train_seed](int i) {
        Rng rng(Rng::derive_seed(train_seed ^ 0xc7u, static_cast<std::uint64_t>(i)));
        const int phantom_idx = static_cast<int>(rng.uniform_index(
            static_cast<std::uint64_t>(d.train_phantoms)));
        constexpr int kViews[4] = {1, 2, 4, 8};
        const int views = kViews[rng.uniform_index(4)];
        Phantom ph = gen_phantom(Rng::derive_seed(d.data_seed, phantom_idx), d.jitter);
        return make_ct_episode(ph, views, rng.next_u64(), ec);
      };
      const std::uint64_t eval_seed = config.eval.seed;
      suite.eval_episode_views = [d, ec, eval_seed](int e, int views) {
        // Eval phantoms sit above the training index range.
        const int phantom_idx = d.train_phantoms + e;
        Phantom ph = gen_phantom(Rng::derive_seed(d.data_seed, phantom_idx), d.jitter);
        return make_ct_episode(
            ph, views, Rng::derive_seed(eval_seed, static_cast<std::uint64_t>(e) * 16 + views), ec);
      };
      suite.eval_episode = [suite_views = suite.eval_episode_views](int e) {
        return suite_views(e, 1);
      };
      break;
    }
    case TaskKind::image_regression:
    case TaskKind::image_completion: {
      const ImageDataSection d = config.images;
      if (d.dir.empty()) {
        throw ConfigError("images.dir is empty; generate or point to a PNG corpus");
      }
      auto corpus = std::make_shared<std::vector<Tensor>>(
          load_image_corpus(d.dir, d.resolution, d.count));
      if (static_cast<int>(corpus->size()) <= d.eval_count) {
        throw ConfigError("image corpus smaller than eval split");
      }
      const int train_count = static_cast<int>(corpus->size()) - d.eval_count;
      const ImageTaskMode mode = config.task == TaskKind::image_regression
                                     ? ImageTaskMode::regression
                                     : ImageTaskMode::completion;
      const int res = d.resolution;
      const std::uint64_t train_seed = config.training.seed;
      suite.train_episode = [corpus, d, mode, res, train_count, train_seed](int i) {
        Rng rng(Rng::derive_seed(train_seed ^ 0x1eu, static_cast<std::uint64_t>(i)));
        const int idx = static_cast<int>(rng.uniform_index(
            static_cast<std::uint64_t>(train_count)));
        const float frac = rng.uniform(d.mask_min, d.mask_max);
        return make_image_episode((*corpus)[static_cast<size_t>(idx)], res, res,
                                  mode, frac, rng.next_u64());
      };
      const std::uint64_t eval_seed = config.eval.seed;
      suite.eval_episode = [corpus, d, mode, res, train_count, eval_seed](int e) {
        Rng rng(Rng::derive_seed(eval_seed ^ 0x2eu, static_cast<std::uint64_t>(e)));
        const int idx = train_count + e % d.eval_count;
        const float frac = rng.uniform(d.mask_min, d.mask_max);
        return make_image_episode((*corpus)[static_cast<size_t>(idx)], res, res,
                                  mode, frac, rng.next_u64());
      };
      break;
    }
    case TaskKind::toy_nvs: {
      const NvsDataSection d = config.nvs;
      const std::uint64_t train_seed = config.training.seed;
      suite.train_episode = [d, train_seed](int i) {
        Rng rng(Rng::derive_seed(train_seed ^ 0x3eu, static_cast<std::uint64_t>(i)));
        const int idx = static_cast<int>(rng.uniform_index(
            static_cast<std::uint64_t>(d.train_scenes)));
        return make_toy_scene_episode(Rng::derive_seed(d.data_seed, idx),
                                      d.context_views, d.scene);
      };
      suite.eval_episode = [d](int e) {
        const int idx = d.train_scenes + e % d.eval_scenes;
        return make_toy_scene_episode(Rng::derive_seed(d.data_seed, idx),
                                      d.context_views, d.scene);
      };
      break;
    }
  }
  return suite;
}

// ---------------------------------------------------------------------------
// conditioning and losses
// ---------------------------------------------------------------------------

std::optional<Tensor> model_conditioning(const Model& model, const Episode& ep,
                                         const Tensor& query_coords,
                                         const std::optional<Tensor>& z_sample) {
  if (!model.is_np()) return std::nullopt;
  const Encoder& enc = *model.encoder;
  std::optional<Tensor> z = z_sample;
  Representation repr;
  switch (enc.config.kind) {
    case EncoderKind::cnp:
      repr = encode_cnp(enc, ep.context);
      return conditioning_input(repr, std::nullopt, 1);
    case EncoderKind::lnp:
      repr = encode_lnp(enc, ep.context);
      if (!z) z = repr.mu;  // posterior mean at evaluation time
      return conditioning_input(Representation{}, z, 1);
    case EncoderKind::attn_cnp:
      repr = encode_attention(enc, ep.context, query_coords);
      return conditioning_input(repr, std::nullopt, query_coords.dim(0));
    case EncoderKind::attn_lnp:
      repr = encode_attention(enc, ep.context, query_coords);
      if (!z) z = repr.mu;
      return conditioning_input(repr, z, query_coords.dim(0));
    case EncoderKind::convcnp:
      repr = encode(enc, ep.context, query_coords);
      return conditioning_input(repr, std::nullopt, query_coords.dim(0));
  }
  throw ConfigError("model_conditioning: unknown encoder");
}

namespace {

struct LossTarget {
  Tensor coords;       // field evaluation points
  ForwardMapSpec fmap; // sensor map applied to field values at coords
  Tensor y;            // sensor-domain targets
};

/// The per-episode supervision: CT and NVS supervise through their forward
/// maps; image tasks supervise on the (fully observed) target pixel grid.
LossTarget loss_target(const Episode& ep, const TrainingSection& training,
                       Rng& rng) {
  LossTarget t;
  switch (ep.fmap.kind()) {
    case ForwardMapSpec::Kind::integral_projection:
      t.coords = projection_points(ep.fmap.projection());
      t.fmap = ep.fmap;
      t.y = ep.target_sensor_values;
      return t;
    case ForwardMapSpec::Kind::volume_render:
      t.coords = render_points(ep.fmap.render());
      t.fmap = ep.fmap;
      t.y = ep.target_sensor_values;
      return t;
    case ForwardMapSpec::Kind::masking: {
      const int n = ep.target_coords.dim(0);
      std::vector<int> keep;
      if (training.target_subsample > 0 && training.target_subsample < n) {
        keep.reserve(static_cast<size_t>(training.target_subsample));
        for (int i = 0; i < training.target_subsample; ++i) {
          keep.push_back(static_cast<int>(rng.uniform_index(
              static_cast<std::uint64_t>(n))));
        }
      } else {
        keep.resize(static_cast<size_t>(n));
        std::iota(keep.begin(), keep.end(), 0);
      }
      t.coords = gather_rows(ep.target_coords, keep);
      t.y = gather_rows(ep.target_sensor_values, keep);
      std::vector<int> identity(keep.size());
      std::iota(identity.begin(), identity.end(), 0);
      t.fmap = ForwardMapSpec{MaskingSpec{identity}};
      return t;
    }
  }
  throw ConfigError("loss_target: unknown forward map");
}

}  // namespace

Tensor episode_loss(const Model& model, const Episode& ep,
                    const TrainingSection& training, Rng& rng) {
  if (!model.is_np()) {
    throw ConfigError("episode_loss: NP training loss requires an encoder");
  }
  LossTarget target = loss_target(ep, training, rng);
  const Encoder& enc = *model.encoder;

  if (!enc.config.latent()) {
    std::optional<Tensor> cond = model_conditioning(model, ep, target.coords);
    GaussianPrediction pred =
        predict_sensor_gaussian(model.field, cond, target.coords, target.fmap);
    return cnp_nll(pred, target.y);
  }

  // Latent models: NPML over K reparameterized samples. The deterministic
  // attention path (if any) is computed once and shared across samples.
  Representation repr;
  if (enc.config.kind == EncoderKind::lnp) {
    repr = encode_lnp(enc, ep.context);
  } else {
    repr = encode_attention(enc, ep.context, target.coords);
  }
  auto decode = [&](const Tensor& z) {
    Tensor cond = conditioning_input(repr, z,
                                     target.coords.dim(0));
    return predict_sensor_gaussian(model.field, cond, target.coords, target.fmap);
  };
  return npml_loss(repr, training.npml_k, rng, decode, target.y);
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

namespace {

ParamSet np_all_params(Model& model) {
  ParamSet all;
  for (const auto& [name, t] : model.field.params.items()) all.add("field." + name, t);
  if (model.encoder) {
    for (const auto& [name, t] : model.encoder->params.items()) all.add("enc." + name, t);
  }
  return all;
}

}  // namespace

RunRecord train(const ExperimentConfig& config, Model& model) {
  RunRecord record;
  record.seed = config.training.seed;
  const auto t0 = std::chrono::steady_clock::now();
  TaskSuite suite = build_task_suite(config);

  if (model.kind == ModelKind::random) {
    // Standard initialization baseline: the checkpoint is the init.
  } else if (model.kind == ModelKind::maml || model.kind == ModelKind::reptile) {
    MetaConfig mc = config.meta;
    mc.algorithm = model.kind == ModelKind::maml ? MetaAlgo::maml : MetaAlgo::reptile;
    mc.seed = config.training.seed;
    auto cb = [&](int it, float loss) {
      if (config.training.log_every > 0 && it % config.training.log_every == 0) {
        record.losses.emplace_back(it, loss);
      }
    };
    if (mc.algorithm == MetaAlgo::maml) {
      maml_train(model.field, suite.train_episode, mc, cb);
    } else {
      reptile_train(model.field, suite.train_episode, mc, cb);
    }
  } else {
    ParamSet all = np_all_params(model);
    OptimState state = make_adam_state(all);
    const TrainingSection& tr = config.training;
    for (int step = 0; step < tr.iterations; ++step) {
      try {
        const float lr = exp_decay_lr(step, std::max(1, tr.iterations - 1),
                                      tr.lr_start, tr.lr_end);
        Tensor total;
        for (int b = 0; b < tr.batch; ++b) {
          const int idx = step * tr.batch + b;
          Episode ep = suite.train_episode(idx);
          Rng rng(Rng::derive_seed(tr.seed ^ 0x9du, static_cast<std::uint64_t>(idx)));
          Tensor loss = episode_loss(model, ep, tr, rng);
          total = total.defined() ? add(total, loss) : loss;
        }
        total = scale(total, 1.0f / tr.batch);
        backward(total);
        adam_step(all, collect_grads(all), state, lr);
        all.zero_grad();
        if (tr.log_every > 0 && step % tr.log_every == 0) {
          record.losses.emplace_back(step, total.item());
        }
      } catch (const NumericError& e) {
        throw NumericError("training aborted at step " + std::to_string(step) +
                           ": " + e.what());
      }
    }
  }
  record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return record;
}

// ---------------------------------------------------------------------------
// reconstruction / evaluation
// ---------------------------------------------------------------------------

Tensor reconstruct_grid(const Model& model, const Episode& ep) {
  std::optional<Tensor> cond =
      model_conditioning(model, ep, ep.target_coords);
  FieldOutput out = eval_field(model.field, ep.target_coords, cond);
  return out.mean;
}

namespace {

/// Sensor-domain prediction through the episode's held-out view (NVS).
Tensor predict_eval_sensor(const Model& model, const Episode& ep) {
  if (!ep.eval_fmap) throw ConfigError("episode has no held-out eval view");
  Tensor pts = fmap_field_points(*ep.eval_fmap, ep.target_coords);
  std::optional<Tensor> cond = model_conditioning(model, ep, pts);
  FieldOutput out = eval_field(model.field, pts, cond);
  return fmap_apply_values(out.mean, *ep.eval_fmap);
}

double episode_psnr(const Model& model, const Episode& ep) {
  if (ep.eval_fmap && ep.eval_target) {
    Tensor pred = predict_eval_sensor(model, ep);
    return psnr(pred, *ep.eval_target);
  }
  Tensor recon = reconstruct_grid(model, ep);
  return psnr(recon, ep.gt_grid);
}

}  // namespace

Model tto_adapted(const Model& model, const Episode& ep,
                  const ExperimentConfig& config) {
  int steps = config.tto.steps;
  if (steps < 0) {
    if (ep.fmap.kind() == ForwardMapSpec::Kind::integral_projection) {
      steps = ct_tto_steps(static_cast<int>(ep.fmap.projection().angles.size()));
    } else {
      steps = 100;
    }
  }
  std::optional<Tensor> cond;
  if (model.is_np()) {
    // Condition at the TTO loss coordinates; z stays frozen during TTO.
    Tensor pts = fmap_field_points(ep.fmap, ep.context.x);
    cond = model_conditioning(model, ep, pts);
  }
  Model adapted = model;
  adapted.field = test_time_optimize(model.field, cond, ep.context, steps,
                                     config.tto.lr);
  return adapted;
}

EvalSummary evaluate(const Model& model, const ExperimentConfig& config,
                     bool with_tto) {
  TaskSuite suite = build_task_suite(config);
  EvalSummary summary;
  const int episodes = config.eval.episodes;

  if (config.task == TaskKind::ct) {
    for (int views : config.eval.views) {
      std::vector<double> pre(static_cast<size_t>(episodes));
      std::vector<double> post(static_cast<size_t>(episodes));
      parallel_for(episodes, [&](int e) {
        Episode ep = suite.eval_episode_views(e, views);
        pre[static_cast<size_t>(e)] = episode_psnr(model, ep);
        if (with_tto) {
          Model adapted = tto_adapted(model, ep, config);
          post[static_cast<size_t>(e)] = episode_psnr(adapted, ep);
        }
      });
      EvalRow row;
      row.views = views;
      row.psnr_pre = std::accumulate(pre.begin(), pre.end(), 0.0) / episodes;
      row.psnr_post =
          with_tto ? std::accumulate(post.begin(), post.end(), 0.0) / episodes : 0.0;
      summary.rows.push_back(row);
    }
    return summary;
  }

  std::vector<double> pre(static_cast<size_t>(episodes));
  std::vector<double> post(static_cast<size_t>(episodes));
  parallel_for(episodes, [&](int e) {
    Episode ep = suite.eval_episode(e);
    pre[static_cast<size_t>(e)] = episode_psnr(model, ep);
    if (with_tto) {
      Model adapted = tto_adapted(model, ep, config);
      post[static_cast<size_t>(e)] = episode_psnr(adapted, ep);
    }
  });
  EvalRow row;
  row.views = config.task == TaskKind::toy_nvs ? config.nvs.context_views : 0;
  row.psnr_pre = std::accumulate(pre.begin(), pre.end(), 0.0) / episodes;
  row.psnr_post =
      with_tto ? std::accumulate(post.begin(), post.end(), 0.0) / episodes : 0.0;
  summary.rows.push_back(row);
  return summary;
}

std::string summary_csv(const EvalSummary& summary) {
  std::ostringstream os;
  os << "views,psnr_no_tto,psnr_tto\n";
  for (const EvalRow& r : summary.rows) {
    os << r.views << "," << r.psnr_pre << "," << r.psnr_post << "\n";
  }
  return os.str();
}

UncertaintyMaps model_uncertainty(const Model& model, const Episode& ep, int n,
                                  std::uint64_t seed) {
  if (!model.latent()) {
    throw ConfigError("uncertainty maps require a latent model");
  }
  const Encoder& enc = *model.encoder;
  Representation repr;
  if (enc.config.kind == EncoderKind::lnp) {
    repr = encode_lnp(enc, ep.context);
  } else {
    repr = encode_attention(enc, ep.context, ep.target_coords);
  }
  auto decode_grid = [&](const Tensor& z) {
    Tensor cond = conditioning_input(repr, z, ep.target_coords.dim(0));
    FieldOutput out = eval_field(model.field, ep.target_coords, cond);
    Tensor mean = out.mean.detach();
    std::vector<float> grid(mean.values().begin(), mean.values().end());
    if (mean.dim(1) > 1) {
      // collapse channels for the map
      std::vector<float> gray(static_cast<size_t>(mean.dim(0)));
      for (int i = 0; i < mean.dim(0); ++i) {
        float s = 0.0f;
        for (int c = 0; c < mean.dim(1); ++c) s += mean.at(i, c);
        gray[static_cast<size_t>(i)] = s / mean.dim(1);
      }
      return gray;
    }
    return grid;
  };
  return uncertainty_map(repr, n, seed, decode_grid, ep.grid_h, ep.grid_w);
}

// ---------------------------------------------------------------------------
// artifacts
// ---------------------------------------------------------------------------

namespace {

void write_panel(const std::string& path, const Tensor& grid, int h, int w) {
  if (grid.dim(1) == 3) {
    write_png_rgb(path, w, h, grid.values());
  } else {
    write_png_gray(path, w, h, grid.values());
  }
}

}  // namespace

void render_episode_outputs(const Model& model, const Episode& ep,
                            const ExperimentConfig& config,
                            const std::string& out_dir) {
  fs::create_directories(out_dir);
  Tensor pred = reconstruct_grid(model, ep);
  write_panel(out_dir + "/gt.png", ep.gt_grid, ep.grid_h, ep.grid_w);
  write_panel(out_dir + "/pred.png", pred, ep.grid_h, ep.grid_w);

  std::vector<float> err(static_cast<size_t>(pred.dim(0)));
  for (int i = 0; i < pred.dim(0); ++i) {
    float s = 0.0f;
    for (int c = 0; c < pred.dim(1); ++c) {
      s += std::abs(pred.at(i, c) - ep.gt_grid.at(i, c));
    }
    err[static_cast<size_t>(i)] = s / pred.dim(1);
  }
  write_png_gray(out_dir + "/error.png", ep.grid_w, ep.grid_h, err);

  if (model.latent()) {
    UncertaintyMaps maps = model_uncertainty(
        model, ep, config.eval.uncertainty_samples, config.eval.seed);
    write_png_gray(out_dir + "/mean.png", maps.width, maps.height, maps.mean);
    float mx = 0.0f;
    for (float v : maps.stddev) mx = std::max(mx, v);
    std::vector<float> scaled(maps.stddev);
    if (mx > 0.0f) {
      for (auto& v : scaled) v /= mx;
    }
    write_png_gray(out_dir + "/std.png", maps.width, maps.height, scaled);
  }
}

RunRecord train_to_dir(const ExperimentConfig& config) {
  std::string out = config.out_dir;
  if (out.empty()) {
    const char* root = std::getenv("PONP_OUT_ROOT");
    out = std::string(root ? root : "runs") + "/" + to_string(config.task) +
          "_" + to_string(config.model) + "_s" +
          std::to_string(config.training.seed);
  }
  fs::create_directories(out);
  {
    std::ofstream cfg(out + "/config.json");
    cfg << config_to_json_text(config) << "\n";
  }
  Model model = build_model(config);
  RunRecord record = train(config, model);
  record.out_dir = out;
  {
    std::ofstream metrics(out + "/metrics.jsonl");
    for (const auto& [step, loss] : record.losses) {
      metrics << "{\"step\":" << step << ",\"loss\":" << loss << "}\n";
    }
  }
  save_model(out + "/checkpoint.ckpt", model, config);
  return record;
}

void save_model(const std::string& path, const Model& model,
                const ExperimentConfig& config) {
  ParamSet all;
  for (const auto& [name, t] : model.field.params.items()) {
    all.add("field." + name, t);
  }
  if (model.field.fourier_basis.defined()) {
    all.add("field.__fourier_basis", model.field.fourier_basis);
  }
  if (model.encoder) {
    for (const auto& [name, t] : model.encoder->params.items()) {
      all.add("enc." + name, t);
    }
  }
  nlohmann::json meta;
  meta["model"] = to_string(model.kind);
  meta["config"] = nlohmann::json::parse(config_to_json_text(config));
  save_params(path, all, meta.dump());
}

std::pair<Model, ExperimentConfig> load_model(const std::string& path) {
  Checkpoint ck = load_params(path);
  nlohmann::json meta = nlohmann::json::parse(ck.meta_json);
  ExperimentConfig config =
      config_from_json_text(meta.at("config").dump(), {});
  Model model = build_model(config);
  for (const auto& [name, t] : ck.params.items()) {
    if (name == "field.__fourier_basis") {
      model.field.fourier_basis = t.detach();
    } else if (name.rfind("field.", 0) == 0) {
      model.field.params.replace(name.substr(6), t.detach());
      model.field.params.at(name.substr(6)).set_requires_grad(true);
    } else if (name.rfind("enc.", 0) == 0) {
      if (!model.encoder) throw ConfigError("checkpoint has encoder params but model does not");
      model.encoder->params.replace(name.substr(4), t.detach());
      model.encoder->params.at(name.substr(4)).set_requires_grad(true);
    }
  }
  return {std::move(model), std::move(config)};
}

}  // namespace ponp
