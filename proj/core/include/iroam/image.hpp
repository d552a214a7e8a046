#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace iroam {

/// 8-bit RGB image, row-major, interleaved. Channel values read back as
/// doubles in [0, 1].
class Image {
 public:
  Image() = default;
  Image(int width, int height) : width_(width), height_(height), rgb_(static_cast<size_t>(width) * height * 3, 0) {}

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return rgb_.empty(); }

  double at(int x, int y, int c) const { return rgb_[index(x, y, c)] / 255.0; }
  std::uint8_t raw(int x, int y, int c) const { return rgb_[index(x, y, c)]; }
  void set(int x, int y, int c, std::uint8_t v) { rgb_[index(x, y, c)] = v; }
  /// Quantizes a [0, 1] value (clamped) to 8 bits.
  void set_unit(int x, int y, int c, double v);

  std::vector<std::uint8_t>& bytes() { return rgb_; }
  const std::vector<std::uint8_t>& bytes() const { return rgb_; }

  bool operator==(const Image&) const = default;

 private:
  size_t index(int x, int y, int c) const {
    return (static_cast<size_t>(y) * static_cast<size_t>(width_) + static_cast<size_t>(x)) * 3 + static_cast<size_t>(c);
  }
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> rgb_;
};

/// Throws IoError on failure.
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

}  // namespace iroam
