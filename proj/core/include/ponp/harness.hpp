#pragma once

#include <span>
#include <utility>

#include "ponp/checkpoint.hpp"
#include "ponp/config.hpp"
#include "ponp/inference.hpp"
#include "ponp/meta.hpp"
#include "ponp/tasks.hpp"

namespace ponp {

/// 10*log10(max^2 / MSE) in dB; exact matches (MSE = 0) and anything above
/// the cap report 100.0.
double psnr(std::span<const float> pred, std::span<const float> gt,
            double max_val = 1.0);
double psnr(const Tensor& pred, const Tensor& gt, double max_val = 1.0);

/// A runnable model: encoder + conditioned field for the NP family, bare
/// field for the gradient-based baselines.
struct Model {
  ModelKind kind = ModelKind::cnp;
  std::optional<Encoder> encoder;
  ConditionedField field;

  bool is_np() const { return encoder.has_value(); }
  bool latent() const { return encoder && encoder->config.latent(); }
};

Model build_model(const ExperimentConfig& config);

/// Deterministic episode streams for a task configuration.
struct TaskSuite {
  std::function<Episode(int)> train_episode;
  std::function<Episode(int)> eval_episode;            // image / nvs tasks
  std::function<Episode(int, int)> eval_episode_views; // CT: (index, views)
};
TaskSuite build_task_suite(const ExperimentConfig& config);

struct RunRecord {
  std::string out_dir;
  std::vector<std::pair<long, float>> losses;  // (step, loss) at log cadence
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
};

/// Trains the model in place (dispatching on model family). Losses are
/// logged every training.log_every steps. Throws NumericError with the step
/// index on divergence.
RunRecord train(const ExperimentConfig& config, Model& model);

/// Full pipeline: build, train, and write config/metrics/checkpoint under
/// the run directory (config.out_dir, or $PONP_OUT_ROOT/<task>_<model>_s<seed>).
RunRecord train_to_dir(const ExperimentConfig& config);

struct EvalRow {
  int views = 0;
  double psnr_pre = 0.0;
  double psnr_post = 0.0;
};
struct EvalSummary {
  std::vector<EvalRow> rows;
};

/// Mean PSNR over eval episodes, before and (optionally) after test-time
/// optimization; one row per view count for CT. Never mutates the model.
EvalSummary evaluate(const Model& model, const ExperimentConfig& config,
                     bool with_tto = true);
std::string summary_csv(const EvalSummary& summary);

/// Conditioning input for the given query coordinates (z defaults to the
/// posterior mean for latent models). Empty for baselines.
std::optional<Tensor> model_conditioning(const Model& model, const Episode& ep,
                                         const Tensor& query_coords,
                                         const std::optional<Tensor>& z_sample = {});

/// Mean-head reconstruction on the episode's field grid, [h*w, d].
Tensor reconstruct_grid(const Model& model, const Episode& ep);

/// One episodic training loss (NLL for the NP family).
Tensor episode_loss(const Model& model, const Episode& ep,
                    const TrainingSection& training, Rng& rng);

/// Test-time-optimized copy; CT uses the published per-view step budgets
/// when config.tto.steps < 0.
Model tto_adapted(const Model& model, const Episode& ep,
                  const ExperimentConfig& config);

UncertaintyMaps model_uncertainty(const Model& model, const Episode& ep, int n,
                                  std::uint64_t seed);

/// GT / prediction / |error| panels (and mean/std for latent models) as PNGs.
void render_episode_outputs(const Model& model, const Episode& ep,
                            const ExperimentConfig& config,
                            const std::string& out_dir);

void save_model(const std::string& path, const Model& model,
                const ExperimentConfig& config);
std::pair<Model, ExperimentConfig> load_model(const std::string& path);

}  // namespace ponp
