#pragma once

#include <cmath>
#include <vector>

#include "srvae/image.hpp"
#include "srvae/models.hpp"
#include "srvae/network.hpp"
#include "srvae/numerics.hpp"

namespace srvae::testing {

// Smallest srVAE that still exercises every network: 8x8x1 images, a 2x2
// latent grid with two channels for u and for z.
inline ModelConfig tiny_config(ModelKind kind, std::uint64_t seed = 0) {
  ModelConfig c;
  c.kind = kind;
  c.height = 8;
  c.width = 8;
  c.channels = 1;
  c.latent_u = 8;
  c.latent_z = 8;
  c.n_mix = 1;
  c.flow_depth = 2;
  c.flow_hidden = 8;
  c.hidden = 4;
  c.seed = seed;
  return c;
}

inline DiscreteImage random_image(std::size_t h, std::size_t w, std::size_t c, RngStream& rng) {
  DiscreteImage im(h, w, c);
  for (auto& v : im.values) v = static_cast<std::uint8_t>(rng.below(256));
  return im;
}

inline DenseArray random_array(const Shape& shape, RngStream& rng, double scale = 1.0) {
  DenseArray a = rng.normal_array(shape);
  for (double& v : a.values()) v *= scale;
  return a;
}

// Adds N(0, scale^2) noise to every parameter, including zero-initialized ones.
inline void perturb(ParamSet& params, RngStream& rng, double scale) {
  for (std::size_t i = 0; i < params.size(); ++i)
    for (double& v : params[i].value.values()) v += scale * rng.normal();
}

// Noise with sd scale / sqrt(leading extent): for [in, out] weights that is
// the fan-in, so wide and narrow layers move their outputs alike.
inline void perturb_scaled(ParamSet& params, RngStream& rng, double scale) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    DenseArray& v = params[i].value;
    const double sd = scale / std::sqrt(static_cast<double>(v.extent(0)));
    for (double& x : v.values()) x += sd * rng.normal();
  }
}

// Naive discretized-logistic bin mass for one component, in long double,
// straight from the CDF difference with the open-ended edge bins. Above the
// mean the survival function is differenced instead, so neither tail cancels.
inline long double naive_bin_mass(int x, long double mu, long double log_s) {
  const long double s = std::exp(log_s);
  const long double xt = x / 127.5L - 1.0L;
  auto cdf = [&](long double v) { return 1.0L / (1.0L + std::exp(-(v - mu) / s)); };
  auto sf = [&](long double v) { return 1.0L / (1.0L + std::exp((v - mu) / s)); };
  if (xt < mu) {
    const long double hi = x == 255 ? 1.0L : cdf(xt + 1.0L / 255.0L);
    const long double lo = x == 0 ? 0.0L : cdf(xt - 1.0L / 255.0L);
    return hi - lo;
  }
  const long double lo = x == 0 ? 1.0L : sf(xt - 1.0L / 255.0L);
  const long double hi = x == 255 ? 0.0L : sf(xt + 1.0L / 255.0L);
  return lo - hi;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double std_error_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

}  // namespace srvae::testing
