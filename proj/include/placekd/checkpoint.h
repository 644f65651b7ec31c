#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "placekd/model.h"

namespace placekd {

inline constexpr int kCheckpointFormatVersion = 1;

// Saves every parameter tensor plus the full model description.
void save_checkpoint(const Model<float>& model, const std::filesystem::path& path);

// Restores a model bit-exactly. When `expected` is given, the first backbone's
// configuration must match it.
Model<float> load_checkpoint(const std::filesystem::path& path,
                             const std::optional<BackboneConfig>& expected = std::nullopt);

}  // namespace placekd
