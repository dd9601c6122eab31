#include "ponp/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "json_util.hpp"
#include "ponp/image_io.hpp"

namespace ponp {

namespace {
constexpr float kPi = 3.14159265358979323846f;
}

// ---------------------------------------------------------------------------
// CT episodes
// ---------------------------------------------------------------------------

Episode make_ct_episode(const Phantom& phantom, int n_views,
                        std::uint64_t seed, const CtEpisodeConfig& config) {
  if (n_views < 1) throw ConfigError("make_ct_episode: need n_views >= 1");
  Rng rng(seed);
  const float offset = rng.uniform(0.0f, kPi);
  std::vector<float> angles(static_cast<size_t>(n_views));
  for (int i = 0; i < n_views; ++i) {
    angles[static_cast<size_t>(i)] =
        std::fmod(offset + i * kPi / n_views, kPi);
  }

  ProjectionSpec proj;
  proj.angles = angles;
  proj.n_rays = config.n_rays;
  proj.n_samples = config.n_samples;

  Tensor sinogram = apply_integral_projection_all(
      [&](const Tensor& pts) { return phantom_density(phantom, pts); }, proj);

  Episode ep;
  ep.id = "ct_s" + std::to_string(seed) + "_v" + std::to_string(n_views);
  ep.fmap = ForwardMapSpec{proj};
  ep.context.x = Tensor::from_data({n_views, 1}, angles);
  ep.context.y = sinogram;
  ep.context.sensor_params = ep.fmap;
  ep.target_coords = grid_coords(config.resolution, config.resolution);
  ep.target_sensor_values = reshape(sinogram, {n_views * config.n_rays, 1});
  ep.gt_grid = rasterize_phantom(phantom, config.resolution);
  ep.grid_h = ep.grid_w = config.resolution;
  return ep;
}

// ---------------------------------------------------------------------------
// image episodes
// ---------------------------------------------------------------------------

Episode make_image_episode(const Tensor& image, int h, int w,
                           ImageTaskMode mode, float mask_frac,
                           std::uint64_t seed) {
  if (image.ndim() != 2 || image.dim(0) != h * w) {
    throw ShapeError("make_image_episode: image must be [h*w, channels]");
  }
  for (float v : image.values()) {
    if (v < 0.0f || v > 1.0f) {
      throw ConfigError("make_image_episode: image values must lie in [0,1]");
    }
  }
  const int pixels = h * w;
  std::vector<int> observed;
  if (mode == ImageTaskMode::regression) {
    observed.resize(static_cast<size_t>(pixels));
    std::iota(observed.begin(), observed.end(), 0);
  } else {
    if (mask_frac < 0.10f || mask_frac > 0.30f) {
      throw ConfigError("make_image_episode: mask_frac must lie in [0.10, 0.30]");
    }
    // mask_frac is the *masked* fraction.
    const int keep = pixels - static_cast<int>(std::lround(pixels * mask_frac));
    Rng rng(seed);
    std::vector<int> perm(static_cast<size_t>(pixels));
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = 0; i < keep; ++i) {
      const int j = i + static_cast<int>(rng.uniform_index(
                            static_cast<std::uint64_t>(pixels - i)));
      std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
    }
    observed.assign(perm.begin(), perm.begin() + keep);
    std::sort(observed.begin(), observed.end());
  }

  Tensor coords = grid_coords(h, w);
  Episode ep;
  ep.id = "img_s" + std::to_string(seed) +
          (mode == ImageTaskMode::regression ? "_reg" : "_comp");
  ep.fmap = ForwardMapSpec{MaskingSpec{observed}};
  ep.context.x = gather_rows(coords, observed);
  ep.context.y = gather_rows(image, observed);
  ep.context.sensor_params = ep.fmap;
  ep.target_coords = coords;
  ep.target_sensor_values = image.detach();
  ep.gt_grid = image.detach();
  ep.grid_h = h;
  ep.grid_w = w;
  return ep;
}

// ---------------------------------------------------------------------------
// toy volumetric scenes
// ---------------------------------------------------------------------------

ToyScene gen_toy_scene(std::uint64_t seed, const ToySceneConfig& config) {
  Rng rng(seed);
  ToyScene scene;
  const int count = 1 + static_cast<int>(rng.uniform_index(
                            static_cast<std::uint64_t>(config.max_objects)));
  for (int i = 0; i < count; ++i) {
    SceneObject obj;
    obj.sphere = rng.uniform() < 0.5f;
    for (auto& c : obj.center) c = rng.uniform(-0.6f, 0.6f);
    obj.radius = rng.uniform(0.25f, 0.6f);
    for (auto& hx : obj.half_extent) hx = rng.uniform(0.2f, 0.5f);
    obj.density = rng.uniform(4.0f, 9.0f);
    for (auto& c : obj.color) c = rng.uniform(0.1f, 1.0f);
    scene.objects.push_back(obj);
  }
  return scene;
}

Tensor toy_scene_field(const ToyScene& scene, const Tensor& points) {
  if (points.ndim() != 2 || points.dim(1) != 3) {
    throw ShapeError("toy_scene_field: expected [n,3] points");
  }
  const int n = points.dim(0);
  std::vector<float> out(static_cast<size_t>(n) * 4, 0.0f);
  for (int i = 0; i < n; ++i) {
    const float x = points.at(i, 0), y = points.at(i, 1), z = points.at(i, 2);
    float sigma = 0.0f, r = 0.0f, g = 0.0f, b = 0.0f;
    for (const SceneObject& obj : scene.objects) {
      bool inside;
      if (obj.sphere) {
        const float dx = x - obj.center[0], dy = y - obj.center[1],
                    dz = z - obj.center[2];
        inside = dx * dx + dy * dy + dz * dz <= obj.radius * obj.radius;
      } else {
        inside = std::abs(x - obj.center[0]) <= obj.half_extent[0] &&
                 std::abs(y - obj.center[1]) <= obj.half_extent[1] &&
                 std::abs(z - obj.center[2]) <= obj.half_extent[2];
      }
      if (inside) {
        sigma += obj.density;
        r += obj.density * obj.color[0];
        g += obj.density * obj.color[1];
        b += obj.density * obj.color[2];
      }
    }
    float* row = out.data() + static_cast<size_t>(i) * 4;
    row[0] = sigma;
    if (sigma > 0.0f) {
      row[1] = r / sigma;
      row[2] = g / sigma;
      row[3] = b / sigma;
    }
  }
  return Tensor::from_data({n, 4}, std::move(out));
}

CameraSpec toy_camera(float azimuth, float elevation,
                      const ToySceneConfig& config) {
  CameraSpec cam;
  cam.height = cam.width = config.image_size;
  cam.near = config.near;
  cam.far = config.far;
  cam.n_samples = config.n_samples;
  cam.background = config.background;
  cam.focal = 1.2f * config.image_size;  // ~45 degree field of view

  const float ce = std::cos(elevation), se = std::sin(elevation);
  const float ca = std::cos(azimuth), sa = std::sin(azimuth);
  cam.position = {config.camera_radius * ce * ca,
                  config.camera_radius * ce * sa,
                  config.camera_radius * se};
  // Look-at-origin basis: forward = -position/|position| (camera -z).
  float fwd[3] = {-cam.position[0], -cam.position[1], -cam.position[2]};
  const float fn = std::sqrt(fwd[0] * fwd[0] + fwd[1] * fwd[1] + fwd[2] * fwd[2]);
  for (auto& v : fwd) v /= fn;
  // right = forward x world_up (z-up), then up = right x forward.
  float right[3] = {fwd[1], -fwd[0], 0.0f};
  const float rn = std::sqrt(right[0] * right[0] + right[1] * right[1]);
  if (rn < 1e-6f) {
    right[0] = 1.0f;
    right[1] = 0.0f;
  } else {
    right[0] /= rn;
    right[1] /= rn;
  }
  float up[3] = {right[1] * fwd[2] - right[2] * fwd[1],
                 right[2] * fwd[0] - right[0] * fwd[2],
                 right[0] * fwd[1] - right[1] * fwd[0]};
  // Columns (right, up, -forward) map camera axes into the world.
  cam.rotation = {right[0], up[0], -fwd[0],  //
                  right[1], up[1], -fwd[1],  //
                  right[2], up[2], -fwd[2]};
  return cam;
}

Tensor camera_ray_directions(const CameraSpec& cam) {
  const int h = cam.height, w = cam.width;
  std::vector<float> dirs(static_cast<size_t>(h) * w * 3);
  size_t o = 0;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const float dx = (j + 0.5f - 0.5f * w) / cam.focal;
      const float dy = -(i + 0.5f - 0.5f * h) / cam.focal;
      const float dz = -1.0f;
      const float inv = 1.0f / std::sqrt(dx * dx + dy * dy + dz * dz);
      const float d[3] = {dx * inv, dy * inv, dz * inv};
      for (int a = 0; a < 3; ++a) {
        dirs[o++] = cam.rotation[static_cast<size_t>(a) * 3] * d[0] +
                    cam.rotation[static_cast<size_t>(a) * 3 + 1] * d[1] +
                    cam.rotation[static_cast<size_t>(a) * 3 + 2] * d[2];
      }
    }
  }
  return Tensor::from_data({h * w, 3}, std::move(dirs));
}

Episode make_toy_scene_episode(std::uint64_t seed, int n_context_views,
                               const ToySceneConfig& config) {
  if (n_context_views < 1 || n_context_views > 2) {
    throw ConfigError("make_toy_scene_episode: n_context_views must be 1 or 2");
  }
  Rng rng(seed);
  ToyScene scene = gen_toy_scene(rng.next_u64(), config);

  VolumeRenderSpec ctx_spec;
  std::vector<Tensor> ctx_x_parts, ctx_y_parts;
  for (int v = 0; v < n_context_views; ++v) {
    CameraSpec cam = toy_camera(rng.uniform(0.0f, 2.0f * kPi),
                                rng.uniform(-0.4f, 0.4f), config);
    Tensor img = apply_volume_render(
        [&](const Tensor& pts) { return toy_scene_field(scene, pts); }, cam);
    Tensor dirs = camera_ray_directions(cam);
    Tensor origins = repeat_rows(
        Tensor::from_data({1, 3}, {cam.position[0], cam.position[1], cam.position[2]}),
        cam.height * cam.width);
    ctx_x_parts.push_back(concat_cols(origins, dirs));
    ctx_y_parts.push_back(img);
    ctx_spec.cameras.push_back(cam);
  }

  CameraSpec target_cam = toy_camera(rng.uniform(0.0f, 2.0f * kPi),
                                     rng.uniform(-0.4f, 0.4f), config);
  Tensor target_img = apply_volume_render(
      [&](const Tensor& pts) { return toy_scene_field(scene, pts); }, target_cam);

  Episode ep;
  ep.id = "nvs_s" + std::to_string(seed) + "_v" + std::to_string(n_context_views);
  ep.fmap = ForwardMapSpec{ctx_spec};
  ep.context.x = concat_rows(ctx_x_parts);
  ep.context.y = concat_rows(ctx_y_parts);
  ep.context.sensor_params = ep.fmap;
  Tensor target_dirs = camera_ray_directions(target_cam);
  Tensor target_origins = repeat_rows(
      Tensor::from_data({1, 3}, {target_cam.position[0], target_cam.position[1],
                                 target_cam.position[2]}),
      target_cam.height * target_cam.width);
  ep.target_coords = concat_cols(target_origins, target_dirs);
  ep.target_sensor_values = ep.context.y.detach();
  ep.gt_grid = target_img;
  ep.grid_h = config.image_size;
  ep.grid_w = config.image_size;
  ep.eval_fmap = ForwardMapSpec{VolumeRenderSpec{{target_cam}}};
  ep.eval_target = target_img;
  return ep;
}

// ---------------------------------------------------------------------------
// episode files
// ---------------------------------------------------------------------------

namespace {

constexpr char kEpisodeMagic[8] = {'P', 'O', 'N', 'P', 'E', 'P', '0', '1'};

void append_array(nlohmann::json& manifest, std::vector<float>& payload,
                  const std::string& name, const Tensor& t) {
  nlohmann::json entry;
  entry["name"] = name;
  entry["shape"] = t.shape();
  entry["offset"] = payload.size();
  manifest.push_back(entry);
  payload.insert(payload.end(), t.values().begin(), t.values().end());
}

Tensor take_array(const nlohmann::json& entry, const std::vector<float>& payload) {
  const Shape shape = entry.at("shape").get<Shape>();
  const size_t offset = entry.at("offset").get<size_t>();
  const size_t count = static_cast<size_t>(numel(shape));
  if (offset + count > payload.size()) {
    throw ConfigError("episode file: array out of bounds");
  }
  return Tensor::from_data(
      shape, {payload.begin() + static_cast<std::ptrdiff_t>(offset),
              payload.begin() + static_cast<std::ptrdiff_t>(offset + count)});
}

}  // namespace

void save_episode(const std::string& path, const Episode& ep) {
  nlohmann::json j;
  j["id"] = ep.id;
  j["grid_h"] = ep.grid_h;
  j["grid_w"] = ep.grid_w;
  j["fmap"] = fmap_to_json(ep.fmap);
  if (ep.eval_fmap) j["eval_fmap"] = fmap_to_json(*ep.eval_fmap);

  nlohmann::json arrays = nlohmann::json::array();
  std::vector<float> payload;
  append_array(arrays, payload, "context_x", ep.context.x);
  append_array(arrays, payload, "context_y", ep.context.y);
  append_array(arrays, payload, "target_coords", ep.target_coords);
  append_array(arrays, payload, "target_sensor_values", ep.target_sensor_values);
  append_array(arrays, payload, "gt_grid", ep.gt_grid);
  if (ep.eval_target) append_array(arrays, payload, "eval_target", *ep.eval_target);
  j["arrays"] = arrays;

  const std::string header = j.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write episode file " + path);
  out.write(kEpisodeMagic, sizeof(kEpisodeMagic));
  const std::uint64_t len = header.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(sizeof(float) * payload.size()));
}

Episode load_episode(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read episode file " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kEpisodeMagic, sizeof(magic)) != 0) {
    throw ConfigError(path + " is not an episode file");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  nlohmann::json j = nlohmann::json::parse(header);

  std::vector<float> payload;
  {
    std::vector<char> rest((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
    payload.resize(rest.size() / sizeof(float));
    std::memcpy(payload.data(), rest.data(), payload.size() * sizeof(float));
  }

  Episode ep;
  ep.id = j.at("id").get<std::string>();
  ep.grid_h = j.at("grid_h").get<int>();
  ep.grid_w = j.at("grid_w").get<int>();
  ep.fmap = fmap_from_json(j.at("fmap"));
  if (j.contains("eval_fmap")) ep.eval_fmap = fmap_from_json(j.at("eval_fmap"));

  for (const auto& entry : j.at("arrays")) {
    const std::string name = entry.at("name").get<std::string>();
    Tensor t = take_array(entry, payload);
    if (name == "context_x") ep.context.x = t;
    else if (name == "context_y") ep.context.y = t;
    else if (name == "target_coords") ep.target_coords = t;
    else if (name == "target_sensor_values") ep.target_sensor_values = t;
    else if (name == "gt_grid") ep.gt_grid = t;
    else if (name == "eval_target") ep.eval_target = t;
  }
  ep.context.sensor_params = ep.fmap;
  return ep;
}

// ---------------------------------------------------------------------------
// image corpus
// ---------------------------------------------------------------------------

std::vector<Tensor> load_image_corpus(const std::string& dir, int resolution,
                                      int max_count) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") {
      files.push_back(entry.path());
    }
  }
  if (files.empty()) throw ConfigError("no .png images found in " + dir);
  std::sort(files.begin(), files.end());
  if (max_count > 0 && static_cast<int>(files.size()) > max_count) {
    files.resize(static_cast<size_t>(max_count));
  }

  std::vector<Tensor> out;
  out.reserve(files.size());
  for (const fs::path& f : files) {
    ImageData img = read_png(f.string());
    if (img.width != resolution || img.height != resolution) {
      img = bilinear_resize(img, resolution, resolution);
    }
    out.push_back(Tensor::from_data({resolution * resolution, 3},
                                    std::move(img.pixels)));
  }
  return out;
}

void generate_image_corpus(const std::string& dir, int count,
                           std::uint64_t seed, int size) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (int i = 0; i < count; ++i) {
    Rng rng(Rng::derive_seed(seed, static_cast<std::uint64_t>(i)));
    std::vector<float> img(static_cast<size_t>(size) * size * 3);

    // Gradient background between two random colors.
    float c0[3], c1[3];
    for (int c = 0; c < 3; ++c) {
      c0[c] = rng.uniform();
      c1[c] = rng.uniform();
    }
    const bool vertical = rng.uniform() < 0.5f;
    for (int r = 0; r < size; ++r) {
      for (int col = 0; col < size; ++col) {
        const float t = vertical ? static_cast<float>(r) / (size - 1)
                                 : static_cast<float>(col) / (size - 1);
        for (int c = 0; c < 3; ++c) {
          img[(static_cast<size_t>(r) * size + col) * 3 + c] =
              c0[c] * (1.0f - t) + c1[c] * t;
        }
      }
    }

    // A few filled shapes.
    const int shapes = 1 + static_cast<int>(rng.uniform_index(3));
    for (int s = 0; s < shapes; ++s) {
      float color[3];
      for (auto& c : color) c = rng.uniform();
      const bool circle = rng.uniform() < 0.5f;
      const float cx = rng.uniform(0.2f, 0.8f) * size;
      const float cy = rng.uniform(0.2f, 0.8f) * size;
      const float half = rng.uniform(0.08f, 0.3f) * size;
      for (int r = 0; r < size; ++r) {
        for (int col = 0; col < size; ++col) {
          bool inside;
          if (circle) {
            const float dx = col - cx, dy = r - cy;
            inside = dx * dx + dy * dy <= half * half;
          } else {
            inside = std::abs(col - cx) <= half && std::abs(r - cy) <= half;
          }
          if (inside) {
            for (int c = 0; c < 3; ++c) {
              img[(static_cast<size_t>(r) * size + col) * 3 + c] = color[c];
            }
          }
        }
      }
    }

    char name[32];
    std::snprintf(name, sizeof(name), "img_%05d.png", i);
    write_png_rgb((fs::path(dir) / name).string(), size, size, img);
  }
}

}  // namespace ponp
