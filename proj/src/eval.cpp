#include "srvae/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace srvae {

namespace {
constexpr std::size_t kIwChunk = 64;
}

double bits_per_dim(double nats, std::size_t h, std::size_t w, std::size_t c) {
  if (h == 0 || w == 0 || c == 0) throw std::invalid_argument("bits_per_dim: zero extent");
  return nats / (static_cast<double>(h * w * c) * std::numbers::ln2);
}

std::vector<double> iw_log_weights(const Model& model, const DiscreteImage& x, std::size_t k,
                                   RngStream& rng) {
  if (k == 0) throw std::invalid_argument("iw_nll: k must be >= 1");
  const DenseArray noise = draw_noise(model, k, rng);
  const std::size_t d = model.noise_dim();
  std::vector<double> out;
  out.reserve(k);
  for (std::size_t start = 0; start < k; start += kIwChunk) {
    const std::size_t n = std::min(kIwChunk, k - start);
    DenseArray chunk({n, d}, std::vector<double>(noise.data() + start * d,
                                                 noise.data() + (start + n) * d));
    std::vector<DiscreteImage> xs(n, x);
    ad::Tape tape;
    auto p = model.params().bind(tape, false);
    ElboGraph g = model.build(p, xs, {}, chunk);
    const DenseArray& w = log_weight(g).value();
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(w[i])) {
        throw std::runtime_error("iw_nll: non-finite log weight at draw " +
                                 std::to_string(start + i));
      }
      out.push_back(w[i]);
    }
  }
  return out;
}

double iw_nll(const Model& model, const DiscreteImage& x, std::size_t k, RngStream& rng) {
  return -log_mean_exp(iw_log_weights(model, x, k, rng));
}

PixelStats PixelStats::from_images(std::span<const DiscreteImage> images, std::size_t pool) {
  if (images.size() < 2) throw std::invalid_argument("PixelStats: need at least 2 images");
  if (pool == 0) throw std::invalid_argument("PixelStats: pool must be >= 1");
  const DiscreteImage& first = images.front();
  if (first.height % pool || first.width % pool) {
    throw std::invalid_argument("PixelStats: extents not divisible by pool size");
  }
  const std::size_t ph = first.height / pool, pw = first.width / pool;
  const std::size_t dim = first.channels * ph * pw;
  const double norm = 1.0 / (255.0 * static_cast<double>(pool * pool));

  Eigen::MatrixXd data(static_cast<Eigen::Index>(images.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t n = 0; n < images.size(); ++n) {
    const DiscreteImage& im = images[n];
    if (!im.same_extents(first)) throw std::invalid_argument("PixelStats: mixed extents");
    std::size_t k = 0;
    for (std::size_t c = 0; c < im.channels; ++c)
      for (std::size_t i = 0; i < ph; ++i)
        for (std::size_t j = 0; j < pw; ++j, ++k) {
          double s = 0.0;
          for (std::size_t a = 0; a < pool; ++a)
            for (std::size_t b = 0; b < pool; ++b) s += im.at(c, i * pool + a, j * pool + b);
          data(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k)) = s * norm;
        }
  }
  PixelStats st;
  st.count = images.size();
  st.mean = data.colwise().mean().transpose();
  const Eigen::MatrixXd centered = data.rowwise() - st.mean.transpose();
  st.cov = (centered.transpose() * centered) / static_cast<double>(images.size() - 1);
  return st;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

double pixel_frechet(const PixelStats& a, const PixelStats& b) {
  if (a.mean.size() != b.mean.size() || a.cov.rows() != b.cov.rows() ||
      a.cov.rows() != a.mean.size()) {
    throw std::invalid_argument("pixel_frechet: dimension mismatch");
  }
  // (S_a S_b)^1/2 has the same trace as (S_a^1/2 S_b S_a^1/2)^1/2, which is
  // symmetric and so admits the eigendecomposition route.
  const Eigen::MatrixXd ra = psd_sqrt(a.cov);
  const Eigen::MatrixXd cross = psd_sqrt(ra * b.cov * ra);
  const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() -
                   2.0 * cross.trace();
  return std::max(d, 0.0);
}

DiscreteImage tile_grid(std::span<const DiscreteImage> images, std::size_t cols) {
  if (images.empty()) throw std::invalid_argument("write_ppm_grid: no images");
  if (cols == 0) throw std::invalid_argument("write_ppm_grid: cols must be >= 1");
  const DiscreteImage& first = images.front();
  for (const auto& im : images) {
    if (!im.same_extents(first)) throw std::invalid_argument("write_ppm_grid: mixed extents");
  }
  if (first.channels != 1 && first.channels != 3) {
    throw std::invalid_argument("write_ppm_grid: channels must be 1 or 3");
  }
  const std::size_t c = std::min(cols, images.size());
  const std::size_t rows = (images.size() + c - 1) / c;
  const std::size_t h = first.height, w = first.width;
  DiscreteImage canvas(rows * h + (rows - 1) * kGridGutter, c * w + (c - 1) * kGridGutter, 3);
  for (std::size_t n = 0; n < images.size(); ++n) {
    const std::size_t oy = (n / c) * (h + kGridGutter), ox = (n % c) * (w + kGridGutter);
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const std::size_t src = first.channels == 1 ? 0 : ch;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) canvas.at(ch, oy + y, ox + x) = images[n].at(src, y, x);
    }
  }
  return canvas;
}

void write_ppm_grid(std::span<const DiscreteImage> images, std::size_t cols,
                    const std::filesystem::path& path) {
  write_ppm(tile_grid(images, cols), path);
}

}  // namespace srvae
