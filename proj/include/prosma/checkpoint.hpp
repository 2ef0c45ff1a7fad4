#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prosma/model.hpp"

namespace prosma {

inline constexpr uint32_t kCheckpointVersion = 1;

/// Binary checkpoint: magic "PSMA", u32 version, the model config, then each
/// parameter as (name, rank, extents, raw f64 values), all little-endian and
/// in the model's canonical parameter order, so save->load->save is
/// byte-identical. Values carry no checksum; corruption inside a value
/// payload is only caught when it breaks the structure around it.
std::vector<uint8_t> checkpoint_bytes(const Model& m);
Model model_from_bytes(const std::vector<uint8_t>& bytes);

void save_checkpoint(const std::string& path, const Model& m);
Model load_checkpoint(const std::string& path);

}  // namespace prosma
