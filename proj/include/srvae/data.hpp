#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "srvae/image.hpp"

namespace srvae {

struct ImageDataset {
  std::vector<DiscreteImage> images;
  std::vector<int> labels;  // empty when the source has none
  std::string source;

  std::size_t size() const { return images.size(); }
  /// Throws unless non-empty with uniform extents.
  void validate() const;
};

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarRecordBytes = 1 + 3 * kCifarSide * kCifarSide;

/// CIFAR-10 binary batches: per record one label byte then the R, G and B
/// planes, each 32x32 row-major.
ImageDataset load_cifar10_binary(std::span<const std::filesystem::path> paths);
ImageDataset parse_cifar10_records(std::span<const std::uint8_t> bytes, const std::string& name);
std::vector<std::uint8_t> cifar10_record(const DiscreteImage& image, int label);

/// n RGB images of side `extent`: a flat background plus one to three
/// hard-edged rectangles or discs. Image i depends only on (extent, seed, i).
ImageDataset gen_toy_shapes(std::size_t n, std::size_t extent, std::uint64_t seed);

}  // namespace srvae
