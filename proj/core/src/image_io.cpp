#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "iroam/errors.hpp"
#include "iroam/image.hpp"

namespace iroam {

void Image::set_unit(int x, int y, int c, double v) {
  const double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
  set(x, y, c, static_cast<std::uint8_t>(q));
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_png(const std::filesystem::path& path, const Image& image) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open for writing: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng write failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width()),
               static_cast<png_uint_32>(image.height()), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  // No timestamps or text chunks: identical pixels give identical files.
  png_write_info(png, info);
  const auto& bytes = image.bytes();
  const size_t stride = static_cast<size_t>(image.width()) * 3;
  for (int y = 0; y < image.height(); ++y) {
    png_write_row(png, const_cast<png_bytep>(bytes.data() + static_cast<size_t>(y) * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open for reading: " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng read failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (color != PNG_COLOR_TYPE_RGB || depth != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("expected 8-bit RGB png: " + path.string());
  }
  Image img(w, h);
  const size_t stride = static_cast<size_t>(w) * 3;
  for (int y = 0; y < h; ++y) {
    png_read_row(png, img.bytes().data() + static_cast<size_t>(y) * stride, nullptr);
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

}  // namespace iroam
