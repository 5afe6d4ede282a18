#pragma once

#include <string>

#include "swwae/model.hpp"

namespace swwae {

// Layout (little-endian):
//   "SWWAE1"
//   u32 length + architecture string
//   u32 length + config text (key=value lines)
//   u32 tensor count, then per tensor: u32 rank, u64 extents, doubles
// Tensors follow SwwaeModel::parameters() order, buffers included.

void save_checkpoint(SwwaeModel& model, const std::string& path);
SwwaeModel load_checkpoint(const std::string& path);

/// key=value text describing config, input shape and seed.
std::string config_text(const SwwaeModel& model);

}  // namespace swwae
