#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <span>
#include <vector>

#include "srvae/image.hpp"
#include "srvae/models.hpp"

namespace srvae {

/// nats / (h * w * c * ln 2).
double bits_per_dim(double nats, std::size_t h, std::size_t w, std::size_t c);

/// log p(x, w_i) - log q(w_i | x) for k sequential draws of the model's noise
/// (the same draws model_elbo would consume for k = 1).
std::vector<double> iw_log_weights(const Model& model, const DiscreteImage& x, std::size_t k,
                                   RngStream& rng);

/// Importance-weighted negative log-likelihood bound, in nats:
/// -log_mean_exp(iw_log_weights(...)).
double iw_nll(const Model& model, const DiscreteImage& x, std::size_t k, RngStream& rng);

/// Mean and covariance of flattened images on the [0, 1] pixel scale.
struct PixelStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  std::size_t count = 0;

  /// pool > 1 averages non-overlapping pool x pool blocks per channel first.
  static PixelStats from_images(std::span<const DiscreteImage> images, std::size_t pool = 1);
};

/// |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2). A Frechet
/// distance on raw pixels, not FID.
double pixel_frechet(const PixelStats& a, const PixelStats& b);

/// Symmetric PSD square root with negative eigenvalues clamped to zero.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m);

inline constexpr std::size_t kGridGutter = 2;

/// Tiles images row-major into an RGB canvas with black gutters.
DiscreteImage tile_grid(std::span<const DiscreteImage> images, std::size_t cols);
void write_ppm_grid(std::span<const DiscreteImage> images, std::size_t cols,
                    const std::filesystem::path& path);

}  // namespace srvae
