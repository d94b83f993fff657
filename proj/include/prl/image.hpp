#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "prl/tensor.hpp"

namespace prl {

/// 8-bit interleaved RGB image.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::uint8_t& at(int x, int y, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int x, int y, int c) const {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

/// Throws IoError if the file cannot be decoded.
Image load_image(const std::filesystem::path& path);
/// Lossless PNG with fixed encoder settings, so equal images give equal bytes.
void save_png(const std::filesystem::path& path, const Image& image);

}  // namespace prl
