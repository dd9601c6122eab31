#pragma once

#include <string>

#include "ponp/optim.hpp"

namespace ponp {

/// Parameter checkpoint: JSON index header (name, shape, offset per entry,
/// plus a caller-supplied metadata object) followed by the flat little-endian
/// float32 payload.
void save_params(const std::string& path, const ParamSet& params,
                 const std::string& meta_json = "{}");

struct Checkpoint {
  ParamSet params;
  std::string meta_json;
};

Checkpoint load_params(const std::string& path);

}  // namespace ponp
