#pragma once

#include <limits>

#include "srvae/image.hpp"

namespace srvae {

/// Log-mass of a point off the support of the degenerate q(y|x). Never used
/// in arithmetic; test with is_off_support().
inline constexpr double kOffSupport = -std::numeric_limits<double>::infinity();
inline bool is_off_support(double log_mass) { return log_mass == kOffSupport; }

/// 2x2 box average per channel, rounded half to even. Height and width must
/// be even.
DiscreteImage downscale(const DiscreteImage& x);

/// log q(y|x) for q(y|x) = delta(y = downscale(x)): 0 on support, kOffSupport
/// otherwise.
double degenerate_log_mass(const DiscreteImage& y, const DiscreteImage& x);

}  // namespace srvae
