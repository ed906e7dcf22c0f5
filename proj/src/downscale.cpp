#include "srvae/downscale.hpp"

#include <stdexcept>
#include <string>

namespace srvae {

namespace {
std::uint8_t round_quarter_half_even(unsigned sum) {
  const unsigned q = sum / 4, r = sum % 4;
  if (r < 2) return static_cast<std::uint8_t>(q);
  if (r > 2) return static_cast<std::uint8_t>(q + 1);
  return static_cast<std::uint8_t>(q % 2 == 0 ? q : q + 1);
}
}  // namespace

DiscreteImage downscale(const DiscreteImage& x) {
  if (x.height % 2 || x.width % 2) {
    throw std::invalid_argument("downscale: extents " + std::to_string(x.height) + "x" +
                                std::to_string(x.width) + " are not even");
  }
  DiscreteImage y(x.height / 2, x.width / 2, x.channels);
  for (std::size_t c = 0; c < x.channels; ++c)
    for (std::size_t i = 0; i < y.height; ++i)
      for (std::size_t j = 0; j < y.width; ++j) {
        const unsigned s = x.at(c, 2 * i, 2 * j) + x.at(c, 2 * i, 2 * j + 1) +
                           x.at(c, 2 * i + 1, 2 * j) + x.at(c, 2 * i + 1, 2 * j + 1);
        y.at(c, i, j) = round_quarter_half_even(s);
      }
  return y;
}

double degenerate_log_mass(const DiscreteImage& y, const DiscreteImage& x) {
  if (y.channels != x.channels || 2 * y.height != x.height || 2 * y.width != x.width) {
    throw std::invalid_argument("degenerate_log_mass: y must have half the extents of x");
  }
  return downscale(x) == y ? 0.0 : kOffSupport;
}

}  // namespace srvae
