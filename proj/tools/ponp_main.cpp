// Command-line front end: train / eval / render / gen-data.
// Exit codes: 0 success, 2 configuration error, 3 numeric abort (NaN).

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "ponp/harness.hpp"
#include "ponp/parallel.hpp"

namespace fs = std::filesystem;
using namespace ponp;

namespace {

int run_train(const std::string& config_path,
              const std::vector<std::string>& sets, const std::string& out) {
  ExperimentConfig config = load_config(config_path, sets);
  if (!out.empty()) config.out_dir = out;
  RunRecord record = train_to_dir(config);
  std::cout << "run directory: " << record.out_dir << "\n";
  if (!record.losses.empty()) {
    std::cout << "final logged loss: " << record.losses.back().second << " (step "
              << record.losses.back().first << ")\n";
  }
  std::cout << "wall time: " << record.wall_seconds << " s\n";

  Model model = load_model(record.out_dir + "/checkpoint.ckpt").first;
  EvalSummary summary = evaluate(model, config, /*with_tto=*/false);
  const std::string csv = summary_csv(summary);
  std::ofstream(record.out_dir + "/summary.csv") << csv;
  std::cout << csv;
  return 0;
}

int run_eval(const std::string& ckpt, const std::string& config_path,
             const std::vector<std::string>& sets, bool no_tto) {
  auto [model, config] = load_model(ckpt);
  if (!config_path.empty()) config = load_config(config_path, sets);
  EvalSummary summary = evaluate(model, config, !no_tto);
  const std::string csv = summary_csv(summary);
  std::cout << csv;
  if (!config.out_dir.empty()) {
    fs::create_directories(config.out_dir);
    std::ofstream(config.out_dir + "/summary.csv") << csv;
  }
  return 0;
}

int run_render(const std::string& ckpt, const std::string& episode_path,
               const std::string& out) {
  auto [model, config] = load_model(ckpt);
  Episode ep = load_episode(episode_path);
  const std::string dir = out.empty() ? "render_out" : out;
  render_episode_outputs(model, ep, config, dir);
  std::cout << "wrote panels to " << dir << "\n";
  return 0;
}

int run_gen_data(const std::string& task, int count, std::uint64_t seed,
                 const std::string& out, int views, int resolution) {
  fs::create_directories(out);
  if (task == "images") {
    generate_image_corpus(out, count, seed, resolution > 0 ? resolution : 64);
    std::cout << "wrote " << count << " images to " << out << "\n";
    return 0;
  }
  if (task == "ct") {
    CtEpisodeConfig cfg;
    cfg.resolution = resolution > 0 ? resolution : 64;
    cfg.n_rays = cfg.resolution;
    cfg.n_samples = cfg.resolution;
    for (int i = 0; i < count; ++i) {
      Phantom ph = gen_phantom(Rng::derive_seed(seed, static_cast<std::uint64_t>(i)));
      Episode ep = make_ct_episode(ph, views,
                                   Rng::derive_seed(seed ^ 0xabcdu, static_cast<std::uint64_t>(i)),
                                   cfg);
      char name[64];
      std::snprintf(name, sizeof(name), "ct_%05d", i);
      save_episode((fs::path(out) / (std::string(name) + ".ponpep")).string(), ep);
      save_sinogram((fs::path(out) / name).string(),
                    ep.context.y, ep.fmap.projection().angles);
    }
    std::cout << "wrote " << count << " CT episodes to " << out << "\n";
    return 0;
  }
  if (task == "toy_nvs") {
    ToySceneConfig cfg;
    for (int i = 0; i < count; ++i) {
      Episode ep = make_toy_scene_episode(
          Rng::derive_seed(seed, static_cast<std::uint64_t>(i)), views > 0 ? views : 1, cfg);
      char name[64];
      std::snprintf(name, sizeof(name), "nvs_%05d.ponpep", i);
      save_episode((fs::path(out) / name).string(), ep);
    }
    std::cout << "wrote " << count << " scene episodes to " << out << "\n";
    return 0;
  }
  throw ConfigError("gen-data: unknown task '" + task + "' (ct|images|toy_nvs)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Partially-observed neural process workbench"};
  app.require_subcommand(1);

  std::string config_path, ckpt, episode_path, out, task = "ct";
  std::vector<std::string> sets;
  int count = 16, views = 1, resolution = 0;
  std::uint64_t seed = 0;
  bool no_tto = false;

  auto* tr = app.add_subcommand("train", "train a model from a JSON config");
  tr->add_option("--config", config_path, "config file")->required();
  tr->add_option("--set", sets, "dotted overrides, e.g. training.batch=8");
  tr->add_option("--out", out, "run directory");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  ev->add_option("--config", config_path, "config override file");
  ev->add_option("--set", sets, "dotted overrides");
  ev->add_flag("--no-tto", no_tto, "skip test-time optimization");

  auto* re = app.add_subcommand("render", "render panels for an episode");
  re->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  re->add_option("--episode", episode_path, "episode file")->required();
  re->add_option("--out", out, "output directory");

  auto* gd = app.add_subcommand("gen-data", "generate a dataset");
  gd->add_option("--task", task, "ct | images | toy_nvs")->required();
  gd->add_option("--count", count, "number of items");
  gd->add_option("--seed", seed, "master seed");
  gd->add_option("--out", out, "output directory")->required();
  gd->add_option("--views", views, "views per episode (ct/toy_nvs)");
  gd->add_option("--resolution", resolution, "grid resolution / image size");

  CLI11_PARSE(app, argc, argv);

  try {
    if (tr->parsed()) return run_train(config_path, sets, out);
    if (ev->parsed()) return run_eval(ckpt, config_path, sets, no_tto);
    if (re->parsed()) return run_render(ckpt, episode_path, out);
    if (gd->parsed()) return run_gen_data(task, count, seed, out, views, resolution);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
