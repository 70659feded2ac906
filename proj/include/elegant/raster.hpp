#pragma once

// Minimal 8-bit raster: enough to mask images before embedding. Only binary
// PGM (P5) and PPM (P6) are read and written.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace elegant {

struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;  // 1 (gray) or 3 (rgb)
  std::vector<std::uint8_t> pixels;  // row-major, interleaved

  Image() = default;
  Image(int width, int height, int channels);

  std::uint8_t* at(int x, int y) {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * channels;
  }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * channels;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

std::string encode_pnm(const Image& image);
Image decode_pnm(std::span<const std::uint8_t> bytes);
Image load_pnm(const std::filesystem::path& path);
void save_pnm(const Image& image, const std::filesystem::path& path);

}  // namespace elegant
