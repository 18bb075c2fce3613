#pragma once

#include <string>

#include "aum/encoder.hpp"

namespace aum {

// Checkpoint file: magic "AUMC", version u32, header-length u32, JSON header
// (echoed model config + tensor table of name/shape/offset), then all
// tensors concatenated as little-endian 32-bit floats.
void save_checkpoint(ModelWeights<float>& model, const std::string& path);
ModelWeights<float> load_checkpoint(const std::string& path);

}  // namespace aum
