#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace lineagetrack::cli {

/// 8-bit grayscale PNG; `pixels` is row-major with width * height entries.
std::string encode_png_gray(int width, int height, const std::vector<std::uint8_t>& pixels);
/// 8-bit RGBA PNG; `pixels` holds 4 bytes per pixel.
std::string encode_png_rgba(int width, int height, const std::vector<std::uint8_t>& pixels);

} // namespace lineagetrack::cli
