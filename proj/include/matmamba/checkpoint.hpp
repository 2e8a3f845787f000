#pragma once

#include <string>
#include <utility>

#include "matmamba/model.hpp"

namespace matmamba {

// Binary checkpoint: magic + version, embedded config JSON, named f32 tensor
// records (little-endian payloads), trailing CRC32 over everything before it.
// Writes go through a temp file + rename so a crash never leaves a torn file.
void save_checkpoint(const ModelConfig& cfg, ModelParams& params,
                     const std::string& path);

std::pair<ModelConfig, ModelParams> load_checkpoint(const std::string& path);

// Config <-> JSON text (used by checkpoints and run configs).
std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed = 0);

}  // namespace matmamba
