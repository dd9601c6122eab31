#pragma once

#include <array>
#include <optional>
#include <string>

#include "ponp/encoder.hpp"
#include "ponp/forward_map.hpp"

namespace ponp {

// ---------------------------------------------------------------------------
// phantoms
// ---------------------------------------------------------------------------

struct Ellipse {
  float cx = 0, cy = 0;  // center
  float a = 0, b = 0;    // semi-axes
  float psi = 0;         // rotation (radians)
  float rho = 0;         // additive density
};

struct Phantom {
  std::vector<Ellipse> ellipses;
};

/// The standard (contrast-enhanced) ten-ellipse head phantom.
Phantom canonical_shepp_logan();

/// Canonical phantom with each ellipse's center, axes, rotation and density
/// independently jittered by a uniform relative perturbation, then shrunk if
/// needed so every ellipse stays inside the unit disk. Deterministic per seed.
Phantom gen_phantom(std::uint64_t seed, float jitter = 0.1f);

float phantom_density_at(const Phantom& phantom, float x, float y);
/// [n,2] points -> [n,1] densities (sum of rho, clamped to [0,1]).
Tensor phantom_density(const Phantom& phantom, const Tensor& points);
/// Pixel-center coords of an h x w grid over [-1,1]^2, [h*w, 2].
Tensor grid_coords(int h, int w);
/// Density on the grid [res*res, 1]; same code path as phantom_density.
Tensor rasterize_phantom(const Phantom& phantom, int resolution);

// ---------------------------------------------------------------------------
// episodes
// ---------------------------------------------------------------------------

/// One task instance: a context (partial sensor view), the target queries,
/// sensor-domain target values, and the ground-truth field grid for PSNR.
/// Invariant: context.y == fmap applied to the ground truth.
struct Episode {
  std::string id;
  ContextSet context;
  Tensor target_coords;         // [n, d_in]
  Tensor target_sensor_values;  // [sensor_size, d]
  Tensor gt_grid;               // [grid_h*grid_w, d_field]
  int grid_h = 0;
  int grid_w = 0;
  ForwardMapSpec fmap;
  // View-synthesis episodes evaluate on a held-out view.
  std::optional<ForwardMapSpec> eval_fmap;
  std::optional<Tensor> eval_target;
};

struct CtEpisodeConfig {
  int resolution = 256;
  int n_rays = 256;
  int n_samples = 256;
};

/// Angles equispaced in [0, pi) with a seeded global offset; context pairs
/// are (angle, sinogram row) with rows computed by the integral-projection
/// forward map on the analytic phantom density.
Episode make_ct_episode(const Phantom& phantom, int n_views,
                        std::uint64_t seed, const CtEpisodeConfig& config);

enum class ImageTaskMode { regression, completion };

/// image is [h*w, channels] in [0,1]. Regression observes every pixel;
/// completion draws mask_frac in [0.10, 0.30] and masks round(h*w*mask_frac)
/// pixels uniformly without replacement.
Episode make_image_episode(const Tensor& image, int h, int w,
                           ImageTaskMode mode, float mask_frac,
                           std::uint64_t seed);

// ---------------------------------------------------------------------------
// toy volumetric scenes
// ---------------------------------------------------------------------------

struct SceneObject {
  bool sphere = true;
  std::array<float, 3> center{0, 0, 0};
  float radius = 0.5f;                    // spheres
  std::array<float, 3> half_extent{0.3f, 0.3f, 0.3f};  // boxes
  float density = 5.0f;
  std::array<float, 3> color{0.8f, 0.2f, 0.2f};
};

struct ToyScene {
  std::vector<SceneObject> objects;
};

struct ToySceneConfig {
  int image_size = 32;
  int n_samples = 32;
  float camera_radius = 2.5f;
  float near = 0.5f;
  float far = 4.5f;
  int max_objects = 3;
  std::array<float, 3> background{1.0f, 1.0f, 1.0f};
};

ToyScene gen_toy_scene(std::uint64_t seed, const ToySceneConfig& config = {});
/// Analytic density+color field: [n,3] points -> [n,4] (sigma, rgb).
Tensor toy_scene_field(const ToyScene& scene, const Tensor& points);
/// Look-at-origin camera on a sphere of the configured radius.
CameraSpec toy_camera(float azimuth, float elevation, const ToySceneConfig& config);
/// Per-pixel world-space ray directions of a camera, [h*w, 3].
Tensor camera_ray_directions(const CameraSpec& cam);

/// Context views rendered from seeded poses; target is one held-out view.
Episode make_toy_scene_episode(std::uint64_t seed, int n_context_views,
                               const ToySceneConfig& config = {});

// ---------------------------------------------------------------------------
// episode cache and image corpus
// ---------------------------------------------------------------------------

/// One file per episode: JSON manifest + raw float arrays, bit-exact reload.
void save_episode(const std::string& path, const Episode& episode);
Episode load_episode(const std::string& path);

/// Every PNG in a directory (sorted by filename), downsampled with bilinear
/// filtering to resolution x resolution, values in [0,1]; [res*res, 3] each.
std::vector<Tensor> load_image_corpus(const std::string& dir, int resolution,
                                      int max_count = 0);

/// Synthetic image corpus (gradient backgrounds with simple shapes), written
/// as PNGs for the loader to ingest.
void generate_image_corpus(const std::string& dir, int count,
                           std::uint64_t seed, int size = 64);

}  // namespace ponp
