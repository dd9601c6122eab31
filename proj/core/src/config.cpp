#include "ponp/config.hpp"

#include <fstream>

#include "json.hpp"

namespace ponp {

using nlohmann::json;

bool is_np_model(ModelKind kind) {
  return kind == ModelKind::cnp || kind == ModelKind::lnp ||
         kind == ModelKind::attn_cnp || kind == ModelKind::attn_lnp ||
         kind == ModelKind::convcnp;
}

std::string to_string(TaskKind t) {
  switch (t) {
    case TaskKind::image_regression: return "image_regression";
    case TaskKind::image_completion: return "image_completion";
    case TaskKind::ct: return "ct";
    case TaskKind::toy_nvs: return "toy_nvs";
  }
  return "?";
}

std::string to_string(ModelKind m) {
  switch (m) {
    case ModelKind::cnp: return "cnp";
    case ModelKind::lnp: return "lnp";
    case ModelKind::attn_cnp: return "attn_cnp";
    case ModelKind::attn_lnp: return "attn_lnp";
    case ModelKind::convcnp: return "convcnp";
    case ModelKind::maml: return "maml";
    case ModelKind::reptile: return "reptile";
    case ModelKind::random: return "random";
  }
  return "?";
}

TaskKind task_from_string(const std::string& s) {
  if (s == "image_regression") return TaskKind::image_regression;
  if (s == "image_completion") return TaskKind::image_completion;
  if (s == "ct") return TaskKind::ct;
  if (s == "toy_nvs") return TaskKind::toy_nvs;
  throw ConfigError("unknown task '" + s + "'");
}

ModelKind model_from_string(const std::string& s) {
  if (s == "cnp") return ModelKind::cnp;
  if (s == "lnp") return ModelKind::lnp;
  if (s == "attn_cnp") return ModelKind::attn_cnp;
  if (s == "attn_lnp") return ModelKind::attn_lnp;
  if (s == "convcnp") return ModelKind::convcnp;
  if (s == "maml") return ModelKind::maml;
  if (s == "reptile") return ModelKind::reptile;
  if (s == "random") return ModelKind::random;
  throw ConfigError("unknown model '" + s + "'");
}

void ExperimentConfig::validate() const {
  field.validate();
  if (is_np_model(model)) {
    encoder.validate();
    if (model == ModelKind::convcnp &&
        !(task == TaskKind::image_regression || task == TaskKind::image_completion)) {
      throw ConfigError("convcnp runs on pixel-grid image tasks only");
    }
  } else if (field.conditioning != Conditioning::none) {
    throw ConfigError("gradient-based baselines use unconditioned fields");
  }
  if (task == TaskKind::image_completion &&
      !(images.mask_min >= 0.10f - 1e-6f && images.mask_max <= 0.30f + 1e-6f &&
        images.mask_min <= images.mask_max)) {
    throw ConfigError("completion mask fraction range must lie in [0.10, 0.30]");
  }
  if (training.iterations < 0 || training.batch < 1) {
    throw ConfigError("training.iterations must be >= 0 and batch >= 1");
  }
  if (!(training.lr_start >= training.lr_end && training.lr_end > 0.0f)) {
    throw ConfigError("training needs lr_start >= lr_end > 0");
  }
}

namespace {

EncoderKind encoder_kind_for(ModelKind m) {
  switch (m) {
    case ModelKind::cnp: return EncoderKind::cnp;
    case ModelKind::lnp: return EncoderKind::lnp;
    case ModelKind::attn_cnp: return EncoderKind::attn_cnp;
    case ModelKind::attn_lnp: return EncoderKind::attn_lnp;
    case ModelKind::convcnp: return EncoderKind::convcnp;
    default: throw ConfigError("model has no encoder");
  }
}

}  // namespace

ExperimentConfig default_config(TaskKind task, ModelKind model) {
  ExperimentConfig c;
  c.task = task;
  c.model = model;

  // Field defaults: ReLU MLP with 128 channels for PONP; SIREN (omega0 200,
  // five hidden layers of 128) for the gradient-based baselines.
  c.field.width = 128;
  c.field.depth = 5;
  if (is_np_model(model)) {
    c.field.arch = FieldArch::relu_mlp;
  } else {
    c.field.arch = FieldArch::siren;
    c.field.omega0 = 200.0f;
    c.field.conditioning = Conditioning::none;
  }

  switch (task) {
    case TaskKind::ct:
      c.field.in_dim = 2;
      c.field.out_dim = 1;
      if (is_np_model(model)) c.field.conditioning = Conditioning::concat;
      c.training.lr_start = 1e-4f;
      c.training.lr_end = 1e-5f;
      c.training.batch = 1;
      c.encoder.x_dim = 1;  // projection angle
      c.encoder.y_dim = c.ct.n_rays;
      break;
    case TaskKind::image_regression:
    case TaskKind::image_completion:
      c.field.in_dim = 2;
      c.field.out_dim = 3;
      if (is_np_model(model)) c.field.conditioning = Conditioning::film;
      c.training.lr_start = 1e-3f;
      c.training.lr_end = 1e-4f;
      c.training.batch = 32;
      c.encoder.x_dim = 2;
      c.encoder.y_dim = 3;
      c.encoder.grid_h = c.encoder.grid_w = c.images.resolution;
      c.tto.lr = 1e-3f;  // image tasks adapt with the published two-step
      c.tto.steps = 2;   // budget; lr scaled to desk-size weight magnitudes
      break;
    case TaskKind::toy_nvs:
      c.field.in_dim = 3;
      c.field.out_dim = 4;  // density + rgb
      if (is_np_model(model)) c.field.conditioning = Conditioning::film;
      c.training.lr_start = 1e-4f;
      c.training.lr_end = 1e-5f;
      c.training.batch = 4;
      c.encoder.x_dim = 6;  // ray origin + direction
      c.encoder.y_dim = 3;
      c.tto.steps = 100;
      break;
  }

  if (is_np_model(model)) {
    c.encoder.kind = encoder_kind_for(model);
    c.field.cond_dim = conditioning_dim(c.encoder);
  } else {
    c.meta.algorithm = model == ModelKind::maml    ? MetaAlgo::maml
                       : model == ModelKind::reptile ? MetaAlgo::reptile
                                                     : MetaAlgo::random;
    c.meta.outer_lr = 1e-5f;
    c.meta.inner_lr = 1e-2f;
    c.meta.inner_steps = 2;
    c.meta.outer_batch = model == ModelKind::reptile ? 10 : 3;
    c.meta.total_iterations = 5000;
    if (model == ModelKind::maml) c.meta.inner_opt = InnerOptKind::sgd;
  }
  return c;
}

// ---------------------------------------------------------------------------
// json round trip
// ---------------------------------------------------------------------------

namespace {

json field_to_json(const FieldConfig& f) {
  json j;
  j["arch"] = f.arch == FieldArch::siren       ? "siren"
              : f.arch == FieldArch::relu_mlp  ? "relu_mlp"
                                               : "fourier_mlp";
  j["width"] = f.width;
  j["depth"] = f.depth;
  j["omega0"] = f.omega0;
  j["fourier_features"] = f.fourier_features;
  j["fourier_scale"] = f.fourier_scale;
  j["in_dim"] = f.in_dim;
  j["out_dim"] = f.out_dim;
  j["conditioning"] = f.conditioning == Conditioning::none   ? "none"
                      : f.conditioning == Conditioning::concat ? "concat"
                      : f.conditioning == Conditioning::first_layer_bias
                          ? "first_layer_bias"
                          : "film";
  j["cond_dim"] = f.cond_dim;
  return j;
}

void field_from_json(const json& j, FieldConfig& f) {
  if (j.contains("arch")) {
    const std::string a = j["arch"].get<std::string>();
    if (a == "siren") f.arch = FieldArch::siren;
    else if (a == "relu_mlp") f.arch = FieldArch::relu_mlp;
    else if (a == "fourier_mlp") f.arch = FieldArch::fourier_mlp;
    else throw ConfigError("unknown field.arch '" + a + "'");
  }
  f.width = j.value("width", f.width);
  f.depth = j.value("depth", f.depth);
  f.omega0 = j.value("omega0", f.omega0);
  f.fourier_features = j.value("fourier_features", f.fourier_features);
  f.fourier_scale = j.value("fourier_scale", f.fourier_scale);
  f.in_dim = j.value("in_dim", f.in_dim);
  f.out_dim = j.value("out_dim", f.out_dim);
  if (j.contains("conditioning")) {
    const std::string s = j["conditioning"].get<std::string>();
    if (s == "none") f.conditioning = Conditioning::none;
    else if (s == "concat") f.conditioning = Conditioning::concat;
    else if (s == "first_layer_bias") f.conditioning = Conditioning::first_layer_bias;
    else if (s == "film") f.conditioning = Conditioning::film;
    else throw ConfigError("unknown field.conditioning '" + s + "'");
  }
  f.cond_dim = j.value("cond_dim", f.cond_dim);
}

json encoder_to_json(const EncoderConfig& e) {
  json j;
  j["x_dim"] = e.x_dim;
  j["y_dim"] = e.y_dim;
  j["query_x_dim"] = e.query_x_dim;
  j["embed_width"] = e.embed_width;
  j["embed_depth"] = e.embed_depth;
  j["z_dim"] = e.z_dim;
  j["attn_heads"] = e.attn_heads;
  j["sigma_floor"] = e.sigma_floor;
  j["grid_h"] = e.grid_h;
  j["grid_w"] = e.grid_w;
  j["conv_channels"] = e.conv_channels;
  j["conv_layers"] = e.conv_layers;
  j["smooth_kernel"] = e.smooth_kernel;
  return j;
}

void encoder_from_json(const json& j, EncoderConfig& e) {
  e.x_dim = j.value("x_dim", e.x_dim);
  e.y_dim = j.value("y_dim", e.y_dim);
  e.query_x_dim = j.value("query_x_dim", e.query_x_dim);
  e.embed_width = j.value("embed_width", e.embed_width);
  e.embed_depth = j.value("embed_depth", e.embed_depth);
  e.z_dim = j.value("z_dim", e.z_dim);
  e.attn_heads = j.value("attn_heads", e.attn_heads);
  e.sigma_floor = j.value("sigma_floor", e.sigma_floor);
  e.grid_h = j.value("grid_h", e.grid_h);
  e.grid_w = j.value("grid_w", e.grid_w);
  e.conv_channels = j.value("conv_channels", e.conv_channels);
  e.conv_layers = j.value("conv_layers", e.conv_layers);
  e.smooth_kernel = j.value("smooth_kernel", e.smooth_kernel);
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["task"] = to_string(c.task);
  j["model"] = to_string(c.model);
  j["field"] = field_to_json(c.field);
  j["encoder"] = encoder_to_json(c.encoder);
  j["training"] = {{"lr_start", c.training.lr_start},
                   {"lr_end", c.training.lr_end},
                   {"batch", c.training.batch},
                   {"iterations", c.training.iterations},
                   {"seed", c.training.seed},
                   {"npml_k", c.training.npml_k},
                   {"log_every", c.training.log_every},
                   {"checkpoint_every", c.training.checkpoint_every},
                   {"target_subsample", c.training.target_subsample}};
  j["meta"] = {{"outer_lr", c.meta.outer_lr},
               {"inner_lr", c.meta.inner_lr},
               {"inner_steps", c.meta.inner_steps},
               {"outer_batch", c.meta.outer_batch},
               {"total_iterations", c.meta.total_iterations},
               {"first_order", c.meta.first_order},
               {"anneal_outer", c.meta.anneal_outer},
               {"inner_opt", c.meta.inner_opt == InnerOptKind::adam ? "adam" : "sgd"},
               {"seed", c.meta.seed}};
  j["tto"] = {{"lr", c.tto.lr}, {"steps", c.tto.steps}, {"seed", c.tto.seed}};
  j["eval"] = {{"episodes", c.eval.episodes},
               {"views", c.eval.views},
               {"seed", c.eval.seed},
               {"uncertainty_samples", c.eval.uncertainty_samples}};
  j["ct"] = {{"resolution", c.ct.resolution},
             {"n_rays", c.ct.n_rays},
             {"n_samples", c.ct.n_samples},
             {"train_phantoms", c.ct.train_phantoms},
             {"eval_phantoms", c.ct.eval_phantoms},
             {"jitter", c.ct.jitter},
             {"data_seed", c.ct.data_seed}};
  j["images"] = {{"dir", c.images.dir},
                 {"count", c.images.count},
                 {"eval_count", c.images.eval_count},
                 {"resolution", c.images.resolution},
                 {"mask_min", c.images.mask_min},
                 {"mask_max", c.images.mask_max},
                 {"data_seed", c.images.data_seed}};
  j["nvs"] = {{"image_size", c.nvs.scene.image_size},
              {"n_samples", c.nvs.scene.n_samples},
              {"context_views", c.nvs.context_views},
              {"train_scenes", c.nvs.train_scenes},
              {"eval_scenes", c.nvs.eval_scenes},
              {"data_seed", c.nvs.data_seed}};
  j["out_dir"] = c.out_dir;
  return j;
}

void config_from_json(const json& j, ExperimentConfig& c) {
  if (j.contains("field")) field_from_json(j["field"], c.field);
  if (j.contains("encoder")) encoder_from_json(j["encoder"], c.encoder);
  if (j.contains("training")) {
    const json& t = j["training"];
    c.training.lr_start = t.value("lr_start", c.training.lr_start);
    c.training.lr_end = t.value("lr_end", c.training.lr_end);
    c.training.batch = t.value("batch", c.training.batch);
    c.training.iterations = t.value("iterations", c.training.iterations);
    c.training.seed = t.value("seed", c.training.seed);
    c.training.npml_k = t.value("npml_k", c.training.npml_k);
    c.training.log_every = t.value("log_every", c.training.log_every);
    c.training.checkpoint_every = t.value("checkpoint_every", c.training.checkpoint_every);
    c.training.target_subsample = t.value("target_subsample", c.training.target_subsample);
  }
  if (j.contains("meta")) {
    const json& m = j["meta"];
    c.meta.outer_lr = m.value("outer_lr", c.meta.outer_lr);
    c.meta.inner_lr = m.value("inner_lr", c.meta.inner_lr);
    c.meta.inner_steps = m.value("inner_steps", c.meta.inner_steps);
    c.meta.outer_batch = m.value("outer_batch", c.meta.outer_batch);
    c.meta.total_iterations = m.value("total_iterations", c.meta.total_iterations);
    c.meta.first_order = m.value("first_order", c.meta.first_order);
    c.meta.anneal_outer = m.value("anneal_outer", c.meta.anneal_outer);
    if (m.contains("inner_opt")) {
      const std::string s = m["inner_opt"].get<std::string>();
      if (s == "adam") c.meta.inner_opt = InnerOptKind::adam;
      else if (s == "sgd") c.meta.inner_opt = InnerOptKind::sgd;
      else throw ConfigError("unknown meta.inner_opt '" + s + "'");
    }
    c.meta.seed = m.value("seed", c.meta.seed);
  }
  if (j.contains("tto")) {
    c.tto.lr = j["tto"].value("lr", c.tto.lr);
    c.tto.steps = j["tto"].value("steps", c.tto.steps);
    c.tto.seed = j["tto"].value("seed", c.tto.seed);
  }
  if (j.contains("eval")) {
    const json& e = j["eval"];
    c.eval.episodes = e.value("episodes", c.eval.episodes);
    if (e.contains("views")) c.eval.views = e["views"].get<std::vector<int>>();
    c.eval.seed = e.value("seed", c.eval.seed);
    c.eval.uncertainty_samples = e.value("uncertainty_samples", c.eval.uncertainty_samples);
  }
  if (j.contains("ct")) {
    const json& t = j["ct"];
    c.ct.resolution = t.value("resolution", c.ct.resolution);
    c.ct.n_rays = t.value("n_rays", c.ct.n_rays);
    c.ct.n_samples = t.value("n_samples", c.ct.n_samples);
    c.ct.train_phantoms = t.value("train_phantoms", c.ct.train_phantoms);
    c.ct.eval_phantoms = t.value("eval_phantoms", c.ct.eval_phantoms);
    c.ct.jitter = t.value("jitter", c.ct.jitter);
    c.ct.data_seed = t.value("data_seed", c.ct.data_seed);
    if (c.encoder.y_dim != c.ct.n_rays && c.task == TaskKind::ct) {
      c.encoder.y_dim = c.ct.n_rays;
    }
  }
  if (j.contains("images")) {
    const json& t = j["images"];
    c.images.dir = t.value("dir", c.images.dir);
    c.images.count = t.value("count", c.images.count);
    c.images.eval_count = t.value("eval_count", c.images.eval_count);
    c.images.resolution = t.value("resolution", c.images.resolution);
    c.images.mask_min = t.value("mask_min", c.images.mask_min);
    c.images.mask_max = t.value("mask_max", c.images.mask_max);
    c.images.data_seed = t.value("data_seed", c.images.data_seed);
    c.encoder.grid_h = c.encoder.grid_w = c.images.resolution;
  }
  if (j.contains("nvs")) {
    const json& t = j["nvs"];
    c.nvs.scene.image_size = t.value("image_size", c.nvs.scene.image_size);
    c.nvs.scene.n_samples = t.value("n_samples", c.nvs.scene.n_samples);
    c.nvs.context_views = t.value("context_views", c.nvs.context_views);
    c.nvs.train_scenes = t.value("train_scenes", c.nvs.train_scenes);
    c.nvs.eval_scenes = t.value("eval_scenes", c.nvs.eval_scenes);
    c.nvs.data_seed = t.value("data_seed", c.nvs.data_seed);
  }
  c.out_dir = j.value("out_dir", c.out_dir);
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("--set expects key=value, got '" + assignment + "'");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;  // bare strings are allowed
  }
  json* node = &j;
  size_t start = 0;
  for (;;) {
    const size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    if (part.empty()) throw ConfigError("bad --set key '" + key + "'");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

}  // namespace

ExperimentConfig config_from_json_text(const std::string& text,
                                       const std::vector<std::string>& overrides) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  for (const std::string& o : overrides) apply_override(j, o);

  if (!j.contains("task") || !j.contains("model")) {
    throw ConfigError("config must name a task and a model");
  }
  ExperimentConfig c = default_config(task_from_string(j["task"].get<std::string>()),
                                      model_from_string(j["model"].get<std::string>()));
  try {
    config_from_json(j, c);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  // Dependent defaults that overrides may have invalidated.
  if (is_np_model(c.model)) {
    c.encoder.kind = encoder_kind_for(c.model);
    if (!j.contains("field") || !j["field"].contains("cond_dim")) {
      c.field.cond_dim = conditioning_dim(c.encoder);
    }
    if (c.task == TaskKind::ct) c.encoder.query_x_dim = 2;
    else c.encoder.query_x_dim = c.encoder.x_dim;
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path,
                             const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return config_from_json_text(text, overrides);
}

std::string config_to_json_text(const ExperimentConfig& c) {
  return config_to_json(c).dump(2);
}

}  // namespace ponp
