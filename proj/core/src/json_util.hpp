#pragma once

#include "json.hpp"
#include "ponp/forward_map.hpp"

namespace ponp {

inline nlohmann::json fmap_to_json(const ForwardMapSpec& fmap) {
  nlohmann::json j;
  switch (fmap.kind()) {
    case ForwardMapSpec::Kind::masking:
      j["kind"] = "masking";
      j["observed"] = fmap.masking().observed;
      break;
    case ForwardMapSpec::Kind::integral_projection: {
      const auto& p = fmap.projection();
      j["kind"] = "integral_projection";
      j["angles"] = p.angles;
      j["n_rays"] = p.n_rays;
      j["n_samples"] = p.n_samples;
      break;
    }
    case ForwardMapSpec::Kind::volume_render: {
      j["kind"] = "volume_render";
      nlohmann::json cams = nlohmann::json::array();
      for (const CameraSpec& c : fmap.render().cameras) {
        nlohmann::json cj;
        cj["rotation"] = c.rotation;
        cj["position"] = c.position;
        cj["focal"] = c.focal;
        cj["height"] = c.height;
        cj["width"] = c.width;
        cj["near"] = c.near;
        cj["far"] = c.far;
        cj["n_samples"] = c.n_samples;
        cj["background"] = c.background;
        cj["jitter"] = c.jitter;
        cj["jitter_seed"] = c.jitter_seed;
        cams.push_back(cj);
      }
      j["cameras"] = cams;
      break;
    }
  }
  return j;
}

inline ForwardMapSpec fmap_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "masking") {
    MaskingSpec m;
    m.observed = j.at("observed").get<std::vector<int>>();
    return ForwardMapSpec{m};
  }
  if (kind == "integral_projection") {
    ProjectionSpec p;
    p.angles = j.at("angles").get<std::vector<float>>();
    p.n_rays = j.at("n_rays").get<int>();
    p.n_samples = j.at("n_samples").get<int>();
    return ForwardMapSpec{p};
  }
  if (kind == "volume_render") {
    VolumeRenderSpec v;
    for (const auto& cj : j.at("cameras")) {
      CameraSpec c;
      c.rotation = cj.at("rotation").get<std::array<float, 9>>();
      c.position = cj.at("position").get<std::array<float, 3>>();
      c.focal = cj.at("focal").get<float>();
      c.height = cj.at("height").get<int>();
      c.width = cj.at("width").get<int>();
      c.near = cj.at("near").get<float>();
      c.far = cj.at("far").get<float>();
      c.n_samples = cj.at("n_samples").get<int>();
      c.background = cj.at("background").get<std::array<float, 3>>();
      c.jitter = cj.value("jitter", false);
      c.jitter_seed = cj.value("jitter_seed", std::uint64_t{0});
      v.cameras.push_back(c);
    }
    return ForwardMapSpec{v};
  }
  throw ConfigError("unknown forward map kind '" + kind + "'");
}

}  // namespace ponp
