#pragma once

#include <filesystem>

#include "placekd/tensor.h"

namespace placekd {

// Binary netpbm I/O. RGB images are P6; label maps are P5 with maxval 255
// (8-bit) or 65535 (16-bit big-endian, used automatically for >= 256 classes).
RgbImage read_rgb(const std::filesystem::path& path);
void write_rgb(const std::filesystem::path& path, const RgbImage& image);

LabelMap read_label_map(const std::filesystem::path& path);
void write_label_map(const std::filesystem::path& path, const LabelMap& labels);

RgbImage resize_bilinear(const RgbImage& image, int height, int width);
LabelMap resize_nearest(const LabelMap& labels, int height, int width);

// Per-channel normalization to roughly zero mean / unit scale: (v/255 - 0.5) / 0.25.
Tensor3<float> rgb_to_tensor(const RgbImage& image);

}  // namespace placekd
