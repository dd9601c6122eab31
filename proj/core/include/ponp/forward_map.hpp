#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "ponp/ops.hpp"

namespace ponp {

/// F = row selection onto observed sensor coordinates.
struct MaskingSpec {
  std::vector<int> observed;
};

/// F = parallel-beam integral projection. Ray offsets run along
/// (cos(angle), sin(angle)); rays travel perpendicular to that axis and are
/// clipped to the unit disk inscribed in [-1,1]^2.
struct ProjectionSpec {
  std::vector<float> angles;  // radians
  int n_rays = 256;
  int n_samples = 256;  // quadrature points per ray
};

struct CameraSpec {
  std::array<float, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};  // cam->world
  std::array<float, 3> position{0, 0, 0};
  float focal = 1.0f;  // pixels
  int height = 32;
  int width = 32;
  float near = 0.5f;
  float far = 4.5f;
  int n_samples = 32;
  std::array<float, 3> background{1.0f, 1.0f, 1.0f};
  bool jitter = false;  // stratified sample jitter (seeded); midpoint if off
  std::uint64_t jitter_seed = 0;
};

/// F = emission-absorption volume rendering of one or more views.
struct VolumeRenderSpec {
  std::vector<CameraSpec> cameras;
};

struct ForwardMapSpec {
  enum class Kind { masking, integral_projection, volume_render };
  std::variant<MaskingSpec, ProjectionSpec, VolumeRenderSpec> spec;

  Kind kind() const { return static_cast<Kind>(spec.index()); }
  const MaskingSpec& masking() const { return std::get<MaskingSpec>(spec); }
  const ProjectionSpec& projection() const { return std::get<ProjectionSpec>(spec); }
  const VolumeRenderSpec& render() const { return std::get<VolumeRenderSpec>(spec); }
  void validate() const;
};

enum class SensorLayout { pixel_grid, sinogram_rows, rendered_image };

struct SensorBatch {
  Tensor values;  // [sensor_size, d_sensor]
  SensorLayout layout = SensorLayout::pixel_grid;
};

using FieldFn = std::function<Tensor(const Tensor& points)>;

/// Row selection; the gradient scatters back into the field values.
Tensor apply_masking(const Tensor& field_values, const std::vector<int>& observed);

/// One sinogram row [1, n_rays]: p(s_r) = dt_r * sum_j field(point_rj) with
/// points equispaced along each ray's chord of the unit disk (midpoint rule).
Tensor apply_integral_projection(const FieldFn& field, float angle,
                                 int n_rays = 256, int n_samples = 256);

/// Full sinogram [n_angles, n_rays] with a single batched field evaluation.
Tensor apply_integral_projection_all(const FieldFn& field, const ProjectionSpec& spec);

/// Quadrature points for all (angle, ray, sample) triples, [A*R*S, 2], and
/// the per-ray step so precomputed field values can be projected directly.
Tensor projection_points(const ProjectionSpec& spec);
std::vector<float> projection_deltas(const ProjectionSpec& spec);
/// Projects field values [A*R*S, 1] evaluated at projection_points ->
/// sinogram [A*R, 1].
Tensor project_field_values(const Tensor& field_values, const ProjectionSpec& spec);

/// Volume rendering. field maps [n,3] points to [n,4] (density, rgb); the
/// density channel is used raw: alpha_i = 1 - exp(-sigma_i * delta_i).
Tensor apply_volume_render(const FieldFn& field, const CameraSpec& camera);

/// Ray sample points for a camera, [H*W*S, 3] in render order.
Tensor camera_ray_points(const CameraSpec& camera);
/// Composites field values [H*W*S, 4] at camera_ray_points -> image [H*W, 3].
Tensor composite_ray_values(const Tensor& field_values, const CameraSpec& camera);

/// Points covering every camera of a render spec, concatenated.
Tensor render_points(const VolumeRenderSpec& spec);
/// Composites stacked per-camera values -> [sum(H*W), 3].
Tensor composite_render_values(const Tensor& field_values, const VolumeRenderSpec& spec);

/// Sinogram file pair: <path>.bin (row-major f32) + <path>.json sidecar.
void save_sinogram(const std::string& path_base, const Tensor& sinogram,
                   const std::vector<float>& angles);
Tensor load_sinogram(const std::string& path_base, std::vector<float>* angles_out = nullptr);

}  // namespace ponp
