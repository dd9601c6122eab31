#include "ponp/forward_map.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

#include "ponp/rng.hpp"

namespace ponp {

void ForwardMapSpec::validate() const {
  switch (kind()) {
    case Kind::masking:
      for (int i : masking().observed) {
        if (i < 0) throw ConfigError("masking: negative sensor index");
      }
      return;
    case Kind::integral_projection: {
      const auto& p = projection();
      for (float a : p.angles) {
        if (!std::isfinite(a)) throw ConfigError("projection: non-finite angle");
      }
      if (p.n_rays < 1 || p.n_samples < 2) {
        throw ConfigError("projection: need n_rays >= 1 and n_samples >= 2");
      }
      return;
    }
    case Kind::volume_render:
      for (const CameraSpec& c : render().cameras) {
        if (!(c.focal > 0.0f)) throw ConfigError("camera: focal must be > 0");
        if (!(c.near < c.far)) throw ConfigError("camera: need near < far");
        if (c.n_samples < 2) throw ConfigError("camera: need n_samples >= 2");
        if (c.height < 1 || c.width < 1) throw ConfigError("camera: bad extent");
      }
      return;
  }
}

Tensor apply_masking(const Tensor& field_values,
                     const std::vector<int>& observed) {
  if (field_values.ndim() != 2) {
    throw ShapeError("apply_masking: field values must be 2D");
  }
  return gather_rows(field_values, observed);
}

// ---------------------------------------------------------------------------
// integral projection
// ---------------------------------------------------------------------------

Tensor projection_points(const ProjectionSpec& spec) {
  const int a_count = static_cast<int>(spec.angles.size());
  const int r = spec.n_rays, s = spec.n_samples;
  std::vector<float> pts(static_cast<size_t>(a_count) * r * s * 2);
  size_t o = 0;
  for (int ai = 0; ai < a_count; ++ai) {
    const float ca = std::cos(spec.angles[ai]);
    const float sa = std::sin(spec.angles[ai]);
    // Offset axis (ca, sa); ray direction (-sa, ca).
    for (int ri = 0; ri < r; ++ri) {
      const float off = -1.0f + (ri + 0.5f) * 2.0f / r;
      const float half = std::sqrt(std::max(0.0f, 1.0f - off * off));
      const float step = 2.0f * half / s;
      for (int si = 0; si < s; ++si) {
        const float t = -half + (si + 0.5f) * step;
        pts[o++] = off * ca - t * sa;
        pts[o++] = off * sa + t * ca;
      }
    }
  }
  return Tensor::from_data({a_count * r * s, 2}, std::move(pts));
}

std::vector<float> projection_deltas(const ProjectionSpec& spec) {
  std::vector<float> dt(static_cast<size_t>(spec.n_rays));
  for (int ri = 0; ri < spec.n_rays; ++ri) {
    const float off = -1.0f + (ri + 0.5f) * 2.0f / spec.n_rays;
    const float half = std::sqrt(std::max(0.0f, 1.0f - off * off));
    dt[static_cast<size_t>(ri)] = 2.0f * half / spec.n_samples;
  }
  return dt;
}

Tensor project_field_values(const Tensor& field_values,
                            const ProjectionSpec& spec) {
  const int a_count = static_cast<int>(spec.angles.size());
  const int r = spec.n_rays, s = spec.n_samples;
  if (field_values.ndim() != 2 || field_values.dim(1) != 1 ||
      field_values.dim(0) != a_count * r * s) {
    throw ShapeError("project_field_values: expected [" +
                     std::to_string(a_count * r * s) + ",1], got " +
                     shape_str(field_values.shape()));
  }
  Tensor per_ray = sum_axis(reshape(field_values, {a_count * r, s}), 1);
  std::vector<float> dt_all(static_cast<size_t>(a_count) * r);
  const std::vector<float> dt = projection_deltas(spec);
  for (int ai = 0; ai < a_count; ++ai) {
    std::copy(dt.begin(), dt.end(), dt_all.begin() + static_cast<size_t>(ai) * r);
  }
  return mul(per_ray, Tensor::from_data({a_count * r, 1}, std::move(dt_all)));
}

Tensor apply_integral_projection_all(const FieldFn& field,
                                     const ProjectionSpec& spec) {
  ForwardMapSpec wrap{spec};
  wrap.validate();
  const int a_count = static_cast<int>(spec.angles.size());
  Tensor values = field(projection_points(spec));
  return reshape(project_field_values(values, spec), {a_count, spec.n_rays});
}

Tensor apply_integral_projection(const FieldFn& field, float angle, int n_rays,
                                 int n_samples) {
  ProjectionSpec spec;
  spec.angles = {angle};
  spec.n_rays = n_rays;
  spec.n_samples = n_samples;
  return apply_integral_projection_all(field, spec);
}

// ---------------------------------------------------------------------------
// volume rendering
// ---------------------------------------------------------------------------

Tensor camera_ray_points(const CameraSpec& cam) {
  const int h = cam.height, w = cam.width, s = cam.n_samples;
  const float delta = (cam.far - cam.near) / s;
  Rng rng(cam.jitter_seed);
  std::vector<float> pts(static_cast<size_t>(h) * w * s * 3);
  size_t o = 0;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      // Pinhole camera looking down -z in camera space.
      const float dx = (j + 0.5f - 0.5f * w) / cam.focal;
      const float dy = -(i + 0.5f - 0.5f * h) / cam.focal;
      const float dz = -1.0f;
      const float inv = 1.0f / std::sqrt(dx * dx + dy * dy + dz * dz);
      float d[3] = {dx * inv, dy * inv, dz * inv};
      float dir[3];
      for (int a = 0; a < 3; ++a) {
        dir[a] = cam.rotation[static_cast<size_t>(a) * 3] * d[0] +
                 cam.rotation[static_cast<size_t>(a) * 3 + 1] * d[1] +
                 cam.rotation[static_cast<size_t>(a) * 3 + 2] * d[2];
      }
      for (int si = 0; si < s; ++si) {
        const float u = cam.jitter ? rng.uniform() : 0.5f;
        const float t = cam.near + (si + u) * delta;
        pts[o++] = cam.position[0] + t * dir[0];
        pts[o++] = cam.position[1] + t * dir[1];
        pts[o++] = cam.position[2] + t * dir[2];
      }
    }
  }
  return Tensor::from_data({h * w * s, 3}, std::move(pts));
}

Tensor composite_ray_values(const Tensor& field_values, const CameraSpec& cam) {
  const int pixels = cam.height * cam.width, s = cam.n_samples;
  if (field_values.ndim() != 2 || field_values.dim(1) != 4 ||
      field_values.dim(0) != pixels * s) {
    throw ShapeError("composite_ray_values: expected [" +
                     std::to_string(pixels * s) + ",4], got " +
                     shape_str(field_values.shape()));
  }
  const float delta = (cam.far - cam.near) / s;

  Tensor sigma_dt =
      scale(reshape(slice_cols(field_values, 0, 1), {pixels, s}), delta);

  // Exclusive cumulative sum along samples via a constant strictly-upper
  // triangular matrix: cum[i,t] = sum_{u<t} sigma_dt[i,u].
  std::vector<float> tri(static_cast<size_t>(s) * s, 0.0f);
  for (int u = 0; u < s; ++u)
    for (int t = u + 1; t < s; ++t) tri[static_cast<size_t>(u) * s + t] = 1.0f;
  Tensor cum = matmul(sigma_dt, Tensor::from_data({s, s}, std::move(tri)));

  Tensor trans = exp(neg(cum));                                  // T_i
  Tensor alpha = add_scalar(neg(exp(neg(sigma_dt))), 1.0f);      // 1-exp(-sd)
  Tensor weights = mul(trans, alpha);                            // T_i alpha_i
  Tensor t_final = exp(neg(sum_axis(sigma_dt, 1)));              // [pixels,1]

  Tensor out;
  for (int c = 0; c < 3; ++c) {
    Tensor ch = reshape(slice_cols(field_values, 1 + c, 2 + c), {pixels, s});
    Tensor comp = add(sum_axis(mul(weights, ch), 1),
                      scale(t_final, cam.background[static_cast<size_t>(c)]));
    out = c == 0 ? comp : concat_cols(out, comp);
  }
  return out;
}

Tensor apply_volume_render(const FieldFn& field, const CameraSpec& cam) {
  VolumeRenderSpec one{{cam}};
  ForwardMapSpec wrap{one};
  wrap.validate();
  return composite_ray_values(field(camera_ray_points(cam)), cam);
}

Tensor render_points(const VolumeRenderSpec& spec) {
  std::vector<Tensor> parts;
  parts.reserve(spec.cameras.size());
  for (const CameraSpec& cam : spec.cameras) parts.push_back(camera_ray_points(cam));
  return parts.size() == 1 ? parts[0] : concat_rows(parts);
}

Tensor composite_render_values(const Tensor& field_values,
                               const VolumeRenderSpec& spec) {
  std::vector<Tensor> images;
  int row = 0;
  for (const CameraSpec& cam : spec.cameras) {
    const int count = cam.height * cam.width * cam.n_samples;
    std::vector<int> idx(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) idx[static_cast<size_t>(i)] = row + i;
    images.push_back(composite_ray_values(gather_rows(field_values, idx), cam));
    row += count;
  }
  if (row != field_values.dim(0)) {
    throw ShapeError("composite_render_values: field value rows do not match cameras");
  }
  return images.size() == 1 ? images[0] : concat_rows(images);
}

// ---------------------------------------------------------------------------
// sinogram files
// ---------------------------------------------------------------------------

void save_sinogram(const std::string& path_base, const Tensor& sinogram,
                   const std::vector<float>& angles) {
  if (sinogram.ndim() != 2) throw ShapeError("save_sinogram: expected [angles, rays]");
  {
    std::ofstream bin(path_base + ".bin", std::ios::binary);
    if (!bin) throw ConfigError("cannot write " + path_base + ".bin");
    bin.write(reinterpret_cast<const char*>(sinogram.values().data()),
              static_cast<std::streamsize>(sizeof(float) * sinogram.size()));
  }
  nlohmann::json side;
  side["angles"] = angles;
  side["n_rays"] = sinogram.dim(1);
  std::ofstream js(path_base + ".json");
  if (!js) throw ConfigError("cannot write " + path_base + ".json");
  js << side.dump(2) << "\n";
}

Tensor load_sinogram(const std::string& path_base, std::vector<float>* angles_out) {
  std::ifstream js(path_base + ".json");
  if (!js) throw ConfigError("cannot read " + path_base + ".json");
  nlohmann::json side = nlohmann::json::parse(js);
  const std::vector<float> angles = side.at("angles").get<std::vector<float>>();
  const int n_rays = side.at("n_rays").get<int>();
  if (angles_out) *angles_out = angles;

  std::ifstream bin(path_base + ".bin", std::ios::binary);
  if (!bin) throw ConfigError("cannot read " + path_base + ".bin");
  std::vector<float> data(angles.size() * static_cast<size_t>(n_rays));
  bin.read(reinterpret_cast<char*>(data.data()),
           static_cast<std::streamsize>(sizeof(float) * data.size()));
  if (!bin) throw ConfigError("short read from " + path_base + ".bin");
  return Tensor::from_data({static_cast<int>(angles.size()), n_rays},
                           std::move(data));
}

}  // namespace ponp
