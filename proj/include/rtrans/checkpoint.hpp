#pragma once

#include <filesystem>

#include "rtrans/model.hpp"

namespace rtrans {

// Flat binary container: magic, format version, JSON header (config plus
// the parameter directory), then the raw arrays in entry order.
void save_checkpoint(const std::filesystem::path& path,
                     const ModelParams& params);

ModelParams load_checkpoint(const std::filesystem::path& path);

// Rejects checkpoints whose architecture differs from `expected`.
ModelParams load_checkpoint(const std::filesystem::path& path,
                            const ModelConfig& expected);

}  // namespace rtrans
