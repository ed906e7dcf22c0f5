#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "srvae/numerics.hpp"

namespace srvae {

/// 8-bit image stored channel-major: values[(c * height + y) * width + x].
struct DiscreteImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> values;

  DiscreteImage() = default;
  DiscreteImage(std::size_t h, std::size_t w, std::size_t c, std::uint8_t fill = 0);
  DiscreteImage(std::size_t h, std::size_t w, std::size_t c, std::vector<std::uint8_t> v);

  std::uint8_t& at(std::size_t c, std::size_t y, std::size_t x) {
    return values[(c * height + y) * width + x];
  }
  std::uint8_t at(std::size_t c, std::size_t y, std::size_t x) const {
    return values[(c * height + y) * width + x];
  }
  bool same_extents(const DiscreteImage& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
  std::vector<int> as_ints() const { return {values.begin(), values.end()}; }

  bool operator==(const DiscreteImage&) const = default;
};

/// [N, C, H, W] raw pixel values 0..255 as doubles. Images must share extents.
DenseArray stack_pixels(std::span<const DiscreteImage> images);
/// Same layout rescaled to x / 127.5 - 1.
DenseArray stack_scaled(std::span<const DiscreteImage> images);
/// Inverse of stack_pixels for a [N, C, H, W] array of integral values.
std::vector<DiscreteImage> unstack_pixels(const DenseArray& pixels);

DiscreteImage upscale_nearest(const DiscreteImage& image, std::size_t factor);

/// Binary PPM (P6, maxval 255). Grayscale images are written replicated to RGB.
void write_ppm(const DiscreteImage& image, const std::filesystem::path& path);
DiscreteImage read_ppm(const std::filesystem::path& path);

}  // namespace srvae
