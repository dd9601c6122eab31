#include "ponp/checkpoint.hpp"

#include <fstream>

#include "json.hpp"

namespace ponp {

void save_params(const std::string& path, const ParamSet& params,
                 const std::string& meta_json) {
  nlohmann::json header;
  header["format"] = "ponp-params-v1";
  header["meta"] = nlohmann::json::parse(meta_json);
  nlohmann::json entries = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : params.items()) {
    nlohmann::json e;
    e["name"] = name;
    e["shape"] = t.shape();
    e["offset"] = offset;
    entries.push_back(e);
    offset += static_cast<std::uint64_t>(t.size());
  }
  header["entries"] = entries;

  const std::string hs = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint " + path);
  const std::uint64_t len = hs.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, t] : params.items()) {
    out.write(reinterpret_cast<const char*>(t.values().data()),
              static_cast<std::streamsize>(sizeof(float) * t.size()));
  }
  if (!out) throw ConfigError("short write to checkpoint " + path);
}

Checkpoint load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read checkpoint " + path);
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string hs(len, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(len));
  if (!in) throw ConfigError("truncated checkpoint header in " + path);
  nlohmann::json header = nlohmann::json::parse(hs);
  if (header.value("format", "") != "ponp-params-v1") {
    throw ConfigError(path + " is not a parameter checkpoint");
  }

  Checkpoint ck;
  ck.meta_json = header.at("meta").dump();
  for (const auto& e : header.at("entries")) {
    const Shape shape = e.at("shape").get<Shape>();
    std::vector<float> data(static_cast<size_t>(numel(shape)));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(sizeof(float) * data.size()));
    if (!in) throw ConfigError("truncated checkpoint payload in " + path);
    ck.params.add(e.at("name").get<std::string>(),
                  Tensor::from_data(shape, std::move(data)));
  }
  return ck;
}

}  // namespace ponp
