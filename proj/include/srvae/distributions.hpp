#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "srvae/autodiff.hpp"
#include "srvae/numerics.hpp"

namespace srvae {

inline constexpr double kLogVarMin = -7.0;
inline constexpr double kLogVarMax = 7.0;
inline constexpr double kLogScaleMin = -7.0;
inline constexpr int kDefaultMixtures = 5;

/// Diagonal Gaussian; log_var is clamped into [-7, 7] on construction.
struct DiagGaussianParams {
  DenseArray mean;
  DenseArray log_var;

  DiagGaussianParams(DenseArray mean, DenseArray log_var);
};

DenseArray gaussian_sample(const DiagGaussianParams& params, const DenseArray& noise);
double gaussian_log_prob(const DiagGaussianParams& params, const DenseArray& value);
double gaussian_kl(const DiagGaussianParams& q, const DiagGaussianParams& p);
double std_normal_log_prob(std::span<const double> value);

/// Mixture of discretized logistics, one independent mixture per pixel.
/// All arrays are [pixels, n_mix]; means live on the [-1, 1] pixel scale.
struct DLogisticMixtureParams {
  DenseArray logit_weights;
  DenseArray means;
  DenseArray log_scales;

  std::size_t pixels() const { return means.extent(0); }
  std::size_t n_mix() const { return means.extent(1); }
  void validate() const;
};

/// Unpacks a decoder output [C * 3 * n_mix, H, W] into per-pixel mixtures in
/// (channel, row, column) pixel order. Channel c occupies planes
/// [3cn, 3cn + n) for logits, [3cn + n, 3cn + 2n) for means and
/// [3cn + 2n, 3cn + 3n) for log-scales.
DLogisticMixtureParams mixture_from_planes(const DenseArray& planes, std::size_t n_mix);

/// Sum over pixels of log P(value), values in {0..255}.
double dlogistic_log_prob(const DLogisticMixtureParams& params, std::span<const int> pixels);

/// Per-pixel draws: one uniform selects the component, a second gives the
/// logistic variate; results are quantized to the nearest of 256 bin centres.
std::vector<std::uint8_t> dlogistic_sample(const DLogisticMixtureParams& params, RngStream& rng);

/// Log-probability of one pixel value under a single pixel's mixture.
/// Parameters for component k are read at offset k * stride. When the grad
/// pointers are non-null, d(log P)/d(param) * gscale is accumulated into them
/// at the same offsets.
double dlogistic_pixel_log_prob(const double* logits, const double* means, const double* log_scales,
                                std::size_t stride, std::size_t n_mix, int value, double gscale,
                                double* g_logits, double* g_means, double* g_log_scales);

namespace ad {

struct GaussianVars {
  Var mean;
  Var log_var;
};

/// Splits [N, 2c, h, w] into mean/log-var halves flattened to [N, c*h*w],
/// clamping the log-variance.
GaussianVars gaussian_from_planes(Var planes);

Var gaussian_sample(const GaussianVars& q, const DenseArray& noise);
/// Per-row log density: [N, D] -> [N].
Var gaussian_log_prob(const GaussianVars& q, Var value);
/// Per-row standard normal log density: [N, D] -> [N].
Var std_normal_log_prob(Var value);
/// Per-row analytic KL(q || p): [N].
Var gaussian_kl(const GaussianVars& q, const GaussianVars& p);

/// Per-example log P(pixels) for decoder planes [N, C*3*n_mix, H, W] and
/// pixel values [N, C, H, W] in {0..255}. Returns [N].
Var dlogistic_log_prob(Var planes, const DenseArray& pixels, std::size_t n_mix);

}  // namespace ad

}  // namespace srvae
