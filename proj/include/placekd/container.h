#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

namespace placekd {

// Binary container shared by checkpoints and descriptor files:
//   8-byte magic "PLACEKD\0", uint64 little-endian header length,
//   UTF-8 JSON header, then a body of little-endian float32 values.
struct Container {
  nlohmann::json header;
  std::vector<float> body;
};

// Writes to a temporary sibling and renames into place.
void write_container(const std::filesystem::path& path, const nlohmann::json& header, std::span<const float> body);
Container read_container(const std::filesystem::path& path);

// Writes text atomically (temporary sibling + rename).
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace placekd
