#pragma once
// Lossless 8-bit PNG I/O: single-channel label masks and RGB renders.
// Compression settings are pinned so identical inputs give identical bytes.

#include <filesystem>

#include "layoutforge/core.hpp"

namespace lf {

void write_mask_png(const std::filesystem::path& path, const LayoutMask& mask);
LayoutMask read_mask_png(const std::filesystem::path& path);

// Values are quantized with round(v*255) on write and mapped back as v/255.
void write_rgb_png(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_rgb_png(const std::filesystem::path& path);

} // namespace lf
