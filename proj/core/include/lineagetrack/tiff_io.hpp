#pragma once

#include <lineagetrack/volume.hpp>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace lineagetrack {

/// Reads a grayscale TIFF (8/16-bit unsigned or 32-bit float, one sample per
/// pixel). Multi-page files become 3D volumes, one page per z-slice.
Volume read_tiff(const std::filesystem::path& path);

/// Writes the volume in its declared dtype; 3D volumes become multi-page files.
/// Integer samples are rounded and clamped.
void write_tiff(const std::filesystem::path& path, const Volume& v);

struct LabelImage {
  Shape shape;
  int ndim = 2;
  std::vector<std::int32_t> labels;
};

/// Integer label image (8 or 16-bit). Throws on float images.
LabelImage read_label_tiff(const std::filesystem::path& path);
/// Stored as 16-bit; labels above 65535 are rejected.
void write_label_tiff(const std::filesystem::path& path, const LabelImage& img);

} // namespace lineagetrack
