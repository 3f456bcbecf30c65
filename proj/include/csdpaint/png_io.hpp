#pragma once

#include <filesystem>

#include "csdpaint/image.hpp"

namespace csdpaint {

// Writes a 1- or 3-channel image with values clamped to [0, 1] as an 8- or
// 16-bit PNG.
void write_png(const std::filesystem::path& path, const Image& img, int bit_depth = 8);

// Reads a grayscale or RGB(A) PNG into a 3-channel image in [0, 1]; alpha is
// dropped and gray is replicated.
Image read_png(const std::filesystem::path& path);

}  // namespace csdpaint
