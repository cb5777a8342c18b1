#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "microspot/image.hpp"

namespace microspot::imageio {

/// Reads a PNG (8/16-bit, gray/RGB/RGBA) or binary PGM/PPM file. Color input
/// is reduced to luma with the Rec. 601 weights. Values are scaled to [0,1].
Image read_image(const std::filesystem::path& path);

/// Decodes an in-memory PNG stream.
Image decode_png(const std::vector<std::uint8_t>& bytes);

/// Encodes as 16-bit grayscale PNG. Values are clamped to [0,1] and quantized
/// to round(v * 65535); images read from 8- or 16-bit sources round-trip exactly.
std::vector<std::uint8_t> encode_png16(const Image& image);

void write_png16(const std::filesystem::path& path, const Image& image);

/// Quantizes every pixel to the 16-bit grid used by encode_png16.
void quantize16(Image& image);

/// Rec. 601 luma of an RGB triple in [0,1].
inline double rec601_luma(double r, double g, double b) {
    return 0.299 * r + 0.587 * g + 0.114 * b;
}

} // namespace microspot::imageio
