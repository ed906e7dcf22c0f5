#include "srvae/image.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>

namespace srvae {

DiscreteImage::DiscreteImage(std::size_t h, std::size_t w, std::size_t c, std::uint8_t fill)
    : height(h), width(w), channels(c), values(h * w * c, fill) {
  if (h == 0 || w == 0 || c == 0) throw std::invalid_argument("DiscreteImage: zero extent");
}

DiscreteImage::DiscreteImage(std::size_t h, std::size_t w, std::size_t c,
                             std::vector<std::uint8_t> v)
    : height(h), width(w), channels(c), values(std::move(v)) {
  if (h == 0 || w == 0 || c == 0) throw std::invalid_argument("DiscreteImage: zero extent");
  if (values.size() != h * w * c) {
    throw std::invalid_argument("DiscreteImage: " + std::to_string(values.size()) +
                                " values for extents " + std::to_string(h) + "x" +
                                std::to_string(w) + "x" + std::to_string(c));
  }
}

namespace {
Shape batch_shape(std::span<const DiscreteImage> images) {
  if (images.empty()) throw std::invalid_argument("stack: empty image list");
  const DiscreteImage& f = images.front();
  for (const auto& im : images) {
    if (!im.same_extents(f)) throw std::invalid_argument("stack: images have mixed extents");
  }
  return {images.size(), f.channels, f.height, f.width};
}
}  // namespace

DenseArray stack_pixels(std::span<const DiscreteImage> images) {
  DenseArray out(batch_shape(images));
  std::size_t k = 0;
  for (const auto& im : images)
    for (auto v : im.values) out[k++] = v;
  return out;
}

DenseArray stack_scaled(std::span<const DiscreteImage> images) {
  DenseArray out = stack_pixels(images);
  for (double& v : out.values()) v = v / 127.5 - 1.0;
  return out;
}

std::vector<DiscreteImage> unstack_pixels(const DenseArray& pixels) {
  if (pixels.rank() != 4) throw std::invalid_argument("unstack_pixels: expected rank 4");
  const auto& s = pixels.shape();
  std::vector<DiscreteImage> out;
  const std::size_t per = s[1] * s[2] * s[3];
  for (std::size_t i = 0; i < s[0]; ++i) {
    DiscreteImage im(s[2], s[3], s[1]);
    for (std::size_t k = 0; k < per; ++k) {
      const double v = pixels[i * per + k];
      if (v < 0.0 || v > 255.0 || v != std::floor(v)) {
        throw std::invalid_argument("unstack_pixels: non-pixel value " + std::to_string(v));
      }
      im.values[k] = static_cast<std::uint8_t>(v);
    }
    out.push_back(std::move(im));
  }
  return out;
}

DiscreteImage upscale_nearest(const DiscreteImage& image, std::size_t factor) {
  DiscreteImage out(image.height * factor, image.width * factor, image.channels);
  for (std::size_t c = 0; c < image.channels; ++c)
    for (std::size_t y = 0; y < out.height; ++y)
      for (std::size_t x = 0; x < out.width; ++x) out.at(c, y, x) = image.at(c, y / factor, x / factor);
  return out;
}

void write_ppm(const DiscreteImage& image, const std::filesystem::path& path) {
  if (image.channels != 1 && image.channels != 3) {
    throw std::invalid_argument("write_ppm: channels must be 1 or 3");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_ppm: cannot open " + path.string());
  os << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<char> rgb(image.width * image.height * 3);
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t k = 0; k < 3; ++k) {
        const std::size_t c = image.channels == 1 ? 0 : k;
        rgb[(y * image.width + x) * 3 + k] = static_cast<char>(image.at(c, y, x));
      }
  os.write(rgb.data(), static_cast<std::streamsize>(rgb.size()));
  if (!os) throw std::runtime_error("write_ppm: write failed for " + path.string());
}

namespace {
std::string next_token(std::istream& is) {
  std::string tok;
  char ch = 0;
  while (is.get(ch)) {
    if (ch == '#') {
      std::string skip;
      std::getline(is, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(ch);
  }
  return tok;
}
}  // namespace

DiscreteImage read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_ppm: cannot open " + path.string());
  if (next_token(is) != "P6") throw std::runtime_error("read_ppm: " + path.string() + " is not P6");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(next_token(is));
    h = std::stoul(next_token(is));
    maxval = std::stoul(next_token(is));
  } catch (const std::exception&) {
    throw std::runtime_error("read_ppm: malformed header in " + path.string());
  }
  if (maxval != 255 || w == 0 || h == 0) {
    throw std::runtime_error("read_ppm: unsupported header in " + path.string());
  }
  std::vector<char> rgb(w * h * 3);
  is.read(rgb.data(), static_cast<std::streamsize>(rgb.size()));
  if (static_cast<std::size_t>(is.gcount()) != rgb.size()) {
    throw std::runtime_error("read_ppm: truncated pixel data in " + path.string());
  }
  DiscreteImage im(h, w, 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        im.at(c, y, x) = static_cast<std::uint8_t>(rgb[(y * w + x) * 3 + c]);
  return im;
}

}  // namespace srvae
