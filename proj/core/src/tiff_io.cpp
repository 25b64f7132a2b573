#include <lineagetrack/tiff_io.hpp>

#include <lineagetrack/error.hpp>

#include <tiffio.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>

namespace lineagetrack {

namespace {

struct TiffCloser {
  void operator()(TIFF* t) const { TIFFClose(t); }
};
using TiffPtr = std::unique_ptr<TIFF, TiffCloser>;

TiffPtr open_tiff(const std::filesystem::path& path, const char* mode) {
  // libtiff reports through global handlers; failures are surfaced as exceptions instead.
  TIFFSetWarningHandler(nullptr);
  TIFFSetErrorHandler(nullptr);
  TiffPtr t(TIFFOpen(path.c_str(), mode));
  if (!t) throw IoError("cannot open TIFF " + path.string());
  return t;
}

struct Page {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  Dtype dtype = Dtype::u8;
};

Page page_info(TIFF* tif, const std::filesystem::path& path) {
  Page p;
  std::uint16_t bits = 0, spp = 1, format = SAMPLEFORMAT_UINT;
  TIFFGetField(tif, TIFFTAG_IMAGEWIDTH, &p.width);
  TIFFGetField(tif, TIFFTAG_IMAGELENGTH, &p.height);
  TIFFGetFieldDefaulted(tif, TIFFTAG_BITSPERSAMPLE, &bits);
  TIFFGetFieldDefaulted(tif, TIFFTAG_SAMPLESPERPIXEL, &spp);
  TIFFGetFieldDefaulted(tif, TIFFTAG_SAMPLEFORMAT, &format);
  if (spp != 1) throw IoError(path.string() + ": only single-channel images are supported");
  if (bits == 8 && format == SAMPLEFORMAT_UINT) {
    p.dtype = Dtype::u8;
  } else if (bits == 16 && format == SAMPLEFORMAT_UINT) {
    p.dtype = Dtype::u16;
  } else if (bits == 32 && format == SAMPLEFORMAT_IEEEFP) {
    p.dtype = Dtype::f32;
  } else {
    throw IoError(path.string() + ": unsupported sample type (" + std::to_string(bits) + " bits)");
  }
  if (p.width == 0 || p.height == 0) throw IoError(path.string() + ": empty image");
  return p;
}

template <class T>
T to_sample(float v) {
  if constexpr (std::is_floating_point_v<T>) {
    return v;
  } else {
    const double r = std::nearbyint(static_cast<double>(v));
    return static_cast<T>(std::clamp(r, 0.0, static_cast<double>(std::numeric_limits<T>::max())));
  }
}

template <class T>
void write_pages(TIFF* tif, const Volume& v, int bits, int format) {
  const Shape s = v.shape();
  std::vector<T> row(static_cast<std::size_t>(s.x));
  for (int z = 0; z < s.z; ++z) {
    TIFFSetField(tif, TIFFTAG_IMAGEWIDTH, static_cast<std::uint32_t>(s.x));
    TIFFSetField(tif, TIFFTAG_IMAGELENGTH, static_cast<std::uint32_t>(s.y));
    TIFFSetField(tif, TIFFTAG_BITSPERSAMPLE, bits);
    TIFFSetField(tif, TIFFTAG_SAMPLESPERPIXEL, 1);
    TIFFSetField(tif, TIFFTAG_SAMPLEFORMAT, format);
    TIFFSetField(tif, TIFFTAG_PHOTOMETRIC, PHOTOMETRIC_MINISBLACK);
    TIFFSetField(tif, TIFFTAG_PLANARCONFIG, PLANARCONFIG_CONTIG);
    TIFFSetField(tif, TIFFTAG_COMPRESSION, COMPRESSION_NONE);
    TIFFSetField(tif, TIFFTAG_ROWSPERSTRIP, static_cast<std::uint32_t>(s.y));
    if (s.z > 1) {
      TIFFSetField(tif, TIFFTAG_SUBFILETYPE, FILETYPE_PAGE);
      TIFFSetField(tif, TIFFTAG_PAGENUMBER, z, s.z);
    }
    for (int y = 0; y < s.y; ++y) {
      for (int x = 0; x < s.x; ++x) row[static_cast<std::size_t>(x)] = to_sample<T>(v.at({z, y, x}));
      if (TIFFWriteScanline(tif, row.data(), static_cast<std::uint32_t>(y), 0) < 0) throw IoError("TIFF scanline write failed");
    }
    if (!TIFFWriteDirectory(tif)) throw IoError("TIFF directory write failed");
  }
}

} // namespace

Volume read_tiff(const std::filesystem::path& path) {
  TiffPtr tif = open_tiff(path, "r");
  const Page first = page_info(tif.get(), path);
  int pages = 0;
  do {
    const Page p = page_info(tif.get(), path);
    if (p.width != first.width || p.height != first.height || p.dtype != first.dtype)
      throw IoError(path.string() + ": pages differ in size or sample type");
    ++pages;
  } while (TIFFReadDirectory(tif.get()));

  const Shape shape{pages, static_cast<int>(first.height), static_cast<int>(first.width)};
  Volume v(shape, first.dtype, pages > 1 ? 3 : 2);
  std::vector<unsigned char> line(static_cast<std::size_t>(TIFFScanlineSize(tif.get())));
  const std::size_t bytes = dtype_size(first.dtype);
  if (line.size() < bytes * first.width) throw IoError(path.string() + ": unexpected scanline size");
  for (int z = 0; z < pages; ++z) {
    if (!TIFFSetDirectory(tif.get(), static_cast<tdir_t>(z))) throw IoError(path.string() + ": cannot seek page");
    for (int y = 0; y < shape.y; ++y) {
      if (TIFFReadScanline(tif.get(), line.data(), static_cast<std::uint32_t>(y), 0) < 0)
        throw IoError(path.string() + ": read failed at row " + std::to_string(y));
      for (int x = 0; x < shape.x; ++x) {
        const unsigned char* p = line.data() + bytes * static_cast<std::size_t>(x);
        float value = 0.0f;
        if (first.dtype == Dtype::u8) {
          value = *p;
        } else if (first.dtype == Dtype::u16) {
          std::uint16_t s;
          std::memcpy(&s, p, 2);
          value = s;
        } else {
          std::memcpy(&value, p, 4);
        }
        v.at({z, y, x}) = value;
      }
    }
  }
  return v;
}

void write_tiff(const std::filesystem::path& path, const Volume& v) {
  TiffPtr tif = open_tiff(path, "w");
  switch (v.dtype()) {
  case Dtype::u8:
    write_pages<std::uint8_t>(tif.get(), v, 8, SAMPLEFORMAT_UINT);
    break;
  case Dtype::u16:
    write_pages<std::uint16_t>(tif.get(), v, 16, SAMPLEFORMAT_UINT);
    break;
  case Dtype::f32:
    write_pages<float>(tif.get(), v, 32, SAMPLEFORMAT_IEEEFP);
    break;
  }
}

LabelImage read_label_tiff(const std::filesystem::path& path) {
  const Volume v = read_tiff(path);
  if (v.dtype() == Dtype::f32) throw IoError(path.string() + ": label images must be 8 or 16-bit integers");
  LabelImage img{v.shape(), v.ndim(), {}};
  const auto data = v.data();
  img.labels.assign(data.begin(), data.end());
  return img;
}

void write_label_tiff(const std::filesystem::path& path, const LabelImage& img) {
  if (static_cast<std::int64_t>(img.labels.size()) != img.shape.count()) throw Error("label image size mismatch", "shape");
  Volume v(img.shape, Dtype::u16, img.ndim);
  auto data = v.data();
  for (std::size_t i = 0; i < img.labels.size(); ++i) {
    const std::int32_t l = img.labels[i];
    if (l < 0 || l > 65535) throw Error("label " + std::to_string(l) + " does not fit a 16-bit image", "label_range");
    data[i] = static_cast<float>(l);
  }
  write_tiff(path, v);
}

} // namespace lineagetrack
