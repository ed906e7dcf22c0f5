#include "srvae/data.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace srvae {

void ImageDataset::validate() const {
  if (images.empty()) throw std::invalid_argument("dataset " + source + ": no images");
  for (const auto& im : images) {
    if (!im.same_extents(images.front())) {
      throw std::invalid_argument("dataset " + source + ": mixed image extents");
    }
  }
  if (!labels.empty() && labels.size() != images.size()) {
    throw std::invalid_argument("dataset " + source + ": label count differs from image count");
  }
}

ImageDataset parse_cifar10_records(std::span<const std::uint8_t> bytes, const std::string& name) {
  if (bytes.size() % kCifarRecordBytes != 0) {
    const std::size_t tail = bytes.size() - bytes.size() % kCifarRecordBytes;
    throw std::runtime_error("cifar10 " + name + ": size " + std::to_string(bytes.size()) +
                             " is not a multiple of " + std::to_string(kCifarRecordBytes) +
                             " (incomplete record at byte offset " + std::to_string(tail) + ")");
  }
  ImageDataset ds;
  ds.source = name;
  const std::size_t plane = kCifarSide * kCifarSide;
  for (std::size_t off = 0; off < bytes.size(); off += kCifarRecordBytes) {
    if (bytes[off] > 9) {
      throw std::runtime_error("cifar10 " + name + ": label " + std::to_string(bytes[off]) +
                               " at byte offset " + std::to_string(off));
    }
    ds.labels.push_back(bytes[off]);
    ds.images.emplace_back(kCifarSide, kCifarSide, 3,
                           std::vector<std::uint8_t>(bytes.begin() + off + 1,
                                                     bytes.begin() + off + 1 + 3 * plane));
  }
  return ds;
}

ImageDataset load_cifar10_binary(std::span<const std::filesystem::path> paths) {
  ImageDataset all;
  for (const auto& path : paths) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cifar10: cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    ImageDataset part = parse_cifar10_records(bytes, path.string());
    all.images.insert(all.images.end(), part.images.begin(), part.images.end());
    all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
    all.source += (all.source.empty() ? "" : ",") + path.string();
  }
  all.validate();
  return all;
}

std::vector<std::uint8_t> cifar10_record(const DiscreteImage& image, int label) {
  if (image.height != kCifarSide || image.width != kCifarSide || image.channels != 3) {
    throw std::invalid_argument("cifar10_record: image must be 32x32x3");
  }
  if (label < 0 || label > 9) throw std::invalid_argument("cifar10_record: label out of range");
  std::vector<std::uint8_t> out;
  out.reserve(kCifarRecordBytes);
  out.push_back(static_cast<std::uint8_t>(label));
  out.insert(out.end(), image.values.begin(), image.values.end());
  return out;
}

ImageDataset gen_toy_shapes(std::size_t n, std::size_t extent, std::uint64_t seed) {
  if (extent < 8 || extent % 2) {
    throw std::invalid_argument("gen_toy_shapes: extent must be even and >= 8");
  }
  ImageDataset ds;
  ds.source = "toy:" + std::to_string(extent) + ":" + std::to_string(seed);
  const RngStream root = RngStream(seed).child("toy_shapes");
  const double side = static_cast<double>(extent);

  for (std::size_t i = 0; i < n; ++i) {
    RngStream rng = root.child(i);
    auto color = [&rng] {
      return std::array<std::uint8_t, 3>{static_cast<std::uint8_t>(rng.below(256)),
                                         static_cast<std::uint8_t>(rng.below(256)),
                                         static_cast<std::uint8_t>(rng.below(256))};
    };
    DiscreteImage im(extent, extent, 3);
    const auto bg = color();
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < extent; ++y)
        for (std::size_t x = 0; x < extent; ++x) im.at(c, y, x) = bg[c];

    const std::size_t shapes = 1 + rng.below(3);
    for (std::size_t s = 0; s < shapes; ++s) {
      const bool disc = rng.below(2) == 1;
      const auto fg = color();
      const double cx = rng.uniform() * side, cy = rng.uniform() * side;
      // half-extents between an eighth and a quarter of the side
      const double rx = side * (0.125 + 0.125 * rng.uniform());
      const double ry = disc ? rx : side * (0.125 + 0.125 * rng.uniform());
      for (std::size_t y = 0; y < extent; ++y)
        for (std::size_t x = 0; x < extent; ++x) {
          const double dx = static_cast<double>(x) + 0.5 - cx;
          const double dy = static_cast<double>(y) + 0.5 - cy;
          const bool inside = disc ? dx * dx + dy * dy <= rx * rx
                                   : std::abs(dx) <= rx && std::abs(dy) <= ry;
          if (!inside) continue;
          for (std::size_t c = 0; c < 3; ++c) im.at(c, y, x) = fg[c];
        }
    }
    ds.images.push_back(std::move(im));
  }
  return ds;
}

}  // namespace srvae
