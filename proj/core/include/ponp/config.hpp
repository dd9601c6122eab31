#pragma once

#include <string>
#include <vector>

#include "ponp/encoder.hpp"
#include "ponp/field.hpp"
#include "ponp/meta.hpp"

namespace ponp {

enum class TaskKind { image_regression, image_completion, ct, toy_nvs };
enum class ModelKind { cnp, lnp, attn_cnp, attn_lnp, convcnp, maml, reptile, random };

bool is_np_model(ModelKind kind);
std::string to_string(TaskKind);
std::string to_string(ModelKind);
TaskKind task_from_string(const std::string&);
ModelKind model_from_string(const std::string&);

struct TrainingSection {
  float lr_start = 1e-3f;
  float lr_end = 1e-4f;
  int batch = 32;
  int iterations = 2000;
  std::uint64_t seed = 0;
  int npml_k = 16;
  int log_every = 50;
  int checkpoint_every = 0;  // 0 = final only
  int target_subsample = 0;  // image tasks: loss pixels per step (0 = all)
};

struct TtoSection {
  float lr = 1e-4f;
  int steps = -1;  // CT: -1 uses the per-view budget table
  std::uint64_t seed = 7;
};

struct EvalSection {
  int episodes = 32;
  std::vector<int> views{1, 2, 4, 8};  // CT
  std::uint64_t seed = 1234;
  int uncertainty_samples = 100;
};

struct CtDataSection {
  int resolution = 64;
  int n_rays = 64;
  int n_samples = 32;
  int train_phantoms = 256;
  int eval_phantoms = 32;
  float jitter = 0.1f;
  std::uint64_t data_seed = 99;
};

struct ImageDataSection {
  std::string dir;  // PNG corpus; loaded sorted by filename
  int count = 2000;
  int eval_count = 64;
  int resolution = 32;
  float mask_min = 0.10f;
  float mask_max = 0.30f;
  std::uint64_t data_seed = 99;
};

struct NvsDataSection {
  ToySceneConfig scene;
  int context_views = 1;
  int train_scenes = 128;
  int eval_scenes = 16;
  std::uint64_t data_seed = 99;
};

struct ExperimentConfig {
  TaskKind task = TaskKind::ct;
  ModelKind model = ModelKind::cnp;
  FieldConfig field;
  EncoderConfig encoder;
  TrainingSection training;
  MetaConfig meta;
  TtoSection tto;
  EvalSection eval;
  CtDataSection ct;
  ImageDataSection images;
  NvsDataSection nvs;
  std::string out_dir;

  void validate() const;
};

/// Task/model defaults. Training hyperparameters follow the published
/// setups (image: lr 1e-3 -> 1e-4, batch 32; CT: lr 1e-4 -> 1e-5, batch 1;
/// baselines: outer lr 1e-5, inner lr 1e-2, SIREN omega0 200).
ExperimentConfig default_config(TaskKind task, ModelKind model);

/// Layered config: defaults < JSON file < dotted --set overrides
/// (e.g. "training.lr_start=1e-3"). Values parse as JSON literals.
ExperimentConfig load_config(const std::string& path,
                             const std::vector<std::string>& overrides);
ExperimentConfig config_from_json_text(const std::string& text,
                                       const std::vector<std::string>& overrides);
std::string config_to_json_text(const ExperimentConfig&);

}  // namespace ponp
