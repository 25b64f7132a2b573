#include "png.hpp"

#include <lineagetrack/error.hpp>

#include <png.h>

#include <csetjmp>

namespace lineagetrack::cli {

namespace {

void append(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), n);
}

void no_flush(png_structp) {}

void on_warning(png_structp, png_const_charp) {}

std::string encode(int width, int height, int color_type, int channels, const std::vector<std::uint8_t>& pixels) {
  if (width < 1 || height < 1 || pixels.size() != static_cast<std::size_t>(width) * height * channels)
    throw Error("png: pixel buffer does not match the image size", "io");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, on_warning);
  if (!png) throw Error("png: cannot create writer", "io");
  png_infop info = png_create_info_struct(png);
  std::string out;
  // libpng reports failures by longjmp; only C frames lie between here and the jump.
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("png: encoding failed", "io");
  }
  {
    png_set_write_fn(png, &out, append, no_flush);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = static_cast<std::size_t>(width) * channels;
    for (int y = 0; y < height; ++y)
      png_write_row(png, const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(y) * stride));
    png_write_end(png, nullptr);
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

} // namespace

std::string encode_png_gray(int width, int height, const std::vector<std::uint8_t>& pixels) {
  return encode(width, height, PNG_COLOR_TYPE_GRAY, 1, pixels);
}

std::string encode_png_rgba(int width, int height, const std::vector<std::uint8_t>& pixels) {
  return encode(width, height, PNG_COLOR_TYPE_RGBA, 4, pixels);
}

} // namespace lineagetrack::cli
