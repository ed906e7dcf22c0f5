#include "srvae/distributions.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace srvae {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * ln(2 pi)
constexpr double kBinHalfWidth = 1.0 / 255.0;
constexpr double kSampleEps = 1e-5;
constexpr std::size_t kMaxMixtures = 64;

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require_same(const DenseArray& a, const DenseArray& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                " vs " + shape_string(b.shape()));
  }
}

}  // namespace

DiagGaussianParams::DiagGaussianParams(DenseArray m, DenseArray lv)
    : mean(std::move(m)), log_var(std::move(lv)) {
  require_same(mean, log_var, "DiagGaussianParams");
  for (double& v : log_var.values()) v = std::clamp(v, kLogVarMin, kLogVarMax);
}

DenseArray gaussian_sample(const DiagGaussianParams& params, const DenseArray& noise) {
  require_same(params.mean, noise, "gaussian_sample");
  DenseArray out(params.mean.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = params.mean[i] + std::exp(0.5 * params.log_var[i]) * noise[i];
  return out;
}

double gaussian_log_prob(const DiagGaussianParams& params, const DenseArray& value) {
  require_same(params.mean, value, "gaussian_log_prob");
  double s = 0.0;
  for (std::size_t i = 0; i < value.size(); ++i) {
    const double d = value[i] - params.mean[i];
    s += -kHalfLog2Pi - 0.5 * params.log_var[i] - 0.5 * d * d * std::exp(-params.log_var[i]);
  }
  return s;
}

double gaussian_kl(const DiagGaussianParams& q, const DiagGaussianParams& p) {
  require_same(q.mean, p.mean, "gaussian_kl");
  double s = 0.0;
  for (std::size_t i = 0; i < q.mean.size(); ++i) {
    const double lq = q.log_var[i], lp = p.log_var[i];
    const double d = q.mean[i] - p.mean[i];
    s += 0.5 * (std::exp(lq - lp) + d * d * std::exp(-lp) - 1.0 + lp - lq);
  }
  return s;
}

double std_normal_log_prob(std::span<const double> value) {
  double s = 0.0;
  for (double v : value) s += -kHalfLog2Pi - 0.5 * v * v;
  return s;
}

void DLogisticMixtureParams::validate() const {
  if (means.rank() != 2 || logit_weights.shape() != means.shape() ||
      log_scales.shape() != means.shape()) {
    throw std::invalid_argument("DLogisticMixtureParams: arrays must share shape [pixels, n_mix]");
  }
  if (n_mix() > kMaxMixtures) throw std::invalid_argument("DLogisticMixtureParams: too many mixtures");
}

DLogisticMixtureParams mixture_from_planes(const DenseArray& planes, std::size_t n_mix) {
  if (planes.rank() != 3 || n_mix == 0 || planes.extent(0) % (3 * n_mix) != 0) {
    throw std::invalid_argument("mixture_from_planes: bad plane shape " +
                                shape_string(planes.shape()));
  }
  const std::size_t channels = planes.extent(0) / (3 * n_mix);
  const std::size_t hw = planes.extent(1) * planes.extent(2);
  DLogisticMixtureParams out{DenseArray({channels * hw, n_mix}), DenseArray({channels * hw, n_mix}),
                             DenseArray({channels * hw, n_mix})};
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t k = 0; k < n_mix; ++k)
      for (std::size_t p = 0; p < hw; ++p) {
        const std::size_t dst = (c * hw + p) * n_mix + k;
        const std::size_t base = 3 * c * n_mix;
        out.logit_weights[dst] = planes[(base + k) * hw + p];
        out.means[dst] = planes[(base + n_mix + k) * hw + p];
        out.log_scales[dst] = planes[(base + 2 * n_mix + k) * hw + p];
      }
  return out;
}

// Bin masses use the exact identity
//   sigma(a) - sigma(b) = sigma(a) * sigma(-b) * (1 - exp(b - a)),
// so the log-mass is -softplus(-a) - softplus(b) + log(-expm1(-delta)) with
// delta = a - b = (2/255) / s. Edge bins drop the missing CDF factor.
double dlogistic_pixel_log_prob(const double* logits, const double* means, const double* log_scales,
                                std::size_t stride, std::size_t n_mix, int value, double gscale,
                                double* g_logits, double* g_means, double* g_log_scales) {
  if (value < 0 || value > 255) {
    throw std::invalid_argument("dlogistic: pixel value " + std::to_string(value) +
                                " outside [0, 255]");
  }
  std::array<double, kMaxMixtures> lw{}, lp{}, dmu{}, dls{};
  const double xt = static_cast<double>(value) / 127.5 - 1.0;

  double lmax = -INFINITY;
  for (std::size_t k = 0; k < n_mix; ++k) lmax = std::max(lmax, logits[k * stride]);
  double lsum = 0.0;
  for (std::size_t k = 0; k < n_mix; ++k) lsum += std::exp(logits[k * stride] - lmax);
  const double lnorm = lmax + std::log(lsum);

  double tmax = -INFINITY;
  for (std::size_t k = 0; k < n_mix; ++k) {
    const double raw_ls = log_scales[k * stride];
    const bool clamped = raw_ls < kLogScaleMin;
    const double ls = clamped ? kLogScaleMin : raw_ls;
    const double inv_s = std::exp(-ls);
    const double centred = xt - means[k * stride];
    double lpk = 0.0, d_mu = 0.0, d_ls = 0.0;
    if (value > 0 && value < 255) {
      const double a = (centred + kBinHalfWidth) * inv_s;
      const double b = (centred - kBinHalfWidth) * inv_s;
      const double delta = 2.0 * kBinHalfWidth * inv_s;
      lpk = -softplus(-a) - softplus(b) + std::log(-std::expm1(-delta));
      const double da = sigmoid(-a), db = -sigmoid(b), ddelta = 1.0 / std::expm1(delta);
      d_mu = -(da + db) * inv_s;
      d_ls = -(da * a + db * b + ddelta * delta);
    } else if (value == 0) {
      const double a = (centred + kBinHalfWidth) * inv_s;
      lpk = -softplus(-a);
      const double da = sigmoid(-a);
      d_mu = -da * inv_s;
      d_ls = -da * a;
    } else {
      const double b = (centred - kBinHalfWidth) * inv_s;
      lpk = -softplus(b);
      const double db = -sigmoid(b);
      d_mu = -db * inv_s;
      d_ls = -db * b;
    }
    lw[k] = logits[k * stride] - lnorm;
    lp[k] = lpk;
    dmu[k] = d_mu;
    dls[k] = clamped ? 0.0 : d_ls;
    tmax = std::max(tmax, lw[k] + lpk);
  }
  double tsum = 0.0;
  for (std::size_t k = 0; k < n_mix; ++k) tsum += std::exp(lw[k] + lp[k] - tmax);
  const double total = tmax + std::log(tsum);

  if (g_logits) {
    for (std::size_t k = 0; k < n_mix; ++k) {
      const double r = std::exp(lw[k] + lp[k] - total);
      g_logits[k * stride] += gscale * (r - std::exp(lw[k]));
      g_means[k * stride] += gscale * r * dmu[k];
      g_log_scales[k * stride] += gscale * r * dls[k];
    }
  }
  return total;
}

double dlogistic_log_prob(const DLogisticMixtureParams& params, std::span<const int> pixels) {
  params.validate();
  if (pixels.size() != params.pixels()) {
    throw std::invalid_argument("dlogistic_log_prob: " + std::to_string(pixels.size()) +
                                " pixels vs " + std::to_string(params.pixels()) + " mixtures");
  }
  const std::size_t n = params.n_mix();
  double s = 0.0;
  for (std::size_t p = 0; p < pixels.size(); ++p) {
    s += dlogistic_pixel_log_prob(params.logit_weights.data() + p * n, params.means.data() + p * n,
                                  params.log_scales.data() + p * n, 1, n, pixels[p], 0.0, nullptr,
                                  nullptr, nullptr);
  }
  return s;
}

std::vector<std::uint8_t> dlogistic_sample(const DLogisticMixtureParams& params, RngStream& rng) {
  params.validate();
  const std::size_t n = params.n_mix();
  std::vector<std::uint8_t> out(params.pixels());
  std::array<double, kMaxMixtures> w{};
  for (std::size_t p = 0; p < out.size(); ++p) {
    const double* logits = params.logit_weights.data() + p * n;
    const double m = *std::max_element(logits, logits + n);
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) total += (w[k] = std::exp(logits[k] - m));

    const double pick = rng.uniform() * total;
    std::size_t comp = n - 1;
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      acc += w[k];
      if (pick < acc) {
        comp = k;
        break;
      }
    }
    const double t = kSampleEps + (1.0 - 2.0 * kSampleEps) * rng.uniform();
    const double s = std::exp(std::max(params.log_scales[p * n + comp], kLogScaleMin));
    double v = params.means[p * n + comp] + s * (std::log(t) - std::log1p(-t));
    v = std::clamp(v, -1.0, 1.0);
    const long bin = std::lround((v + 1.0) * 127.5);
    out[p] = static_cast<std::uint8_t>(std::clamp(bin, 0L, 255L));
  }
  return out;
}

namespace ad {

GaussianVars gaussian_from_planes(Var planes) {
  const Shape& s = planes.shape();
  if (s.size() != 4 || s[1] % 2 != 0) {
    throw std::invalid_argument("gaussian_from_planes: expected [N, 2c, h, w], got " +
                                shape_string(s));
  }
  const std::size_t c = s[1] / 2, d = c * s[2] * s[3];
  Var mean = reshape(slice_channels(planes, 0, c), {s[0], d});
  Var log_var = clamp(reshape(slice_channels(planes, c, c), {s[0], d}), kLogVarMin, kLogVarMax);
  return {mean, log_var};
}

Var gaussian_sample(const GaussianVars& q, const DenseArray& noise) {
  if (noise.shape() != q.mean.shape()) {
    throw std::invalid_argument("gaussian_sample: noise " + shape_string(noise.shape()) +
                                " vs mean " + shape_string(q.mean.shape()));
  }
  Tape& t = *q.mean.tape;
  Var std_dev = exp(scale(q.log_var, 0.5));
  return add(q.mean, mul(std_dev, t.constant(noise)));
}

Var gaussian_log_prob(const GaussianVars& q, Var value) {
  const double d = static_cast<double>(value.shape()[1]);
  Var maha = mul(square(sub(value, q.mean)), exp(scale(q.log_var, -1.0)));
  Var per = add(q.log_var, maha);
  return add_scalar(scale(sum_rows(per), -0.5), -kHalfLog2Pi * d);
}

Var std_normal_log_prob(Var value) {
  const double d = static_cast<double>(value.shape()[1]);
  return add_scalar(scale(sum_rows(square(value)), -0.5), -kHalfLog2Pi * d);
}

Var gaussian_kl(const GaussianVars& q, const GaussianVars& p) {
  Var ratio = exp(sub(q.log_var, p.log_var));
  Var maha = mul(square(sub(q.mean, p.mean)), exp(scale(p.log_var, -1.0)));
  Var per = add(add(ratio, maha), sub(p.log_var, q.log_var));
  const double d = static_cast<double>(q.mean.shape()[1]);
  return scale(add_scalar(sum_rows(per), -d), 0.5);
}

Var dlogistic_log_prob(Var planes, const DenseArray& pixels, std::size_t n_mix) {
  const Shape& ps = planes.shape();
  const Shape& xs = pixels.shape();
  if (ps.size() != 4 || xs.size() != 4 || ps[0] != xs[0] || ps[2] != xs[2] || ps[3] != xs[3] ||
      ps[1] != xs[1] * 3 * n_mix) {
    throw std::invalid_argument("dlogistic_log_prob: planes " + shape_string(ps) +
                                " incompatible with pixels " + shape_string(xs) + " at n_mix " +
                                std::to_string(n_mix));
  }
  const std::size_t n = xs[0], c = xs[1], hw = xs[2] * xs[3], pc = ps[1];
  const double* pv = planes.value().data();
  DenseArray out({n});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* base = pv + (i * pc + 3 * ch * n_mix) * hw;
      for (std::size_t p = 0; p < hw; ++p) {
        const int x = static_cast<int>(pixels[(i * c + ch) * hw + p]);
        s += dlogistic_pixel_log_prob(base + p, base + n_mix * hw + p, base + 2 * n_mix * hw + p, hw,
                                      n_mix, x, 0.0, nullptr, nullptr, nullptr);
      }
    }
    out[i] = s;
  }
  const auto ip = planes.id;
  return planes.tape->push(std::move(out), {planes}, [=](Tape& t, std::uint32_t self) {
    const DenseArray& g = t.grad_mut(self);
    const double* pv2 = t.value(ip).data();
    double* gp = t.grad_mut(ip).data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t off = (i * pc + 3 * ch * n_mix) * hw;
        for (std::size_t p = 0; p < hw; ++p) {
          const int x = static_cast<int>(pixels[(i * c + ch) * hw + p]);
          dlogistic_pixel_log_prob(pv2 + off + p, pv2 + off + n_mix * hw + p,
                                   pv2 + off + 2 * n_mix * hw + p, hw, n_mix, x, g[i],
                                   gp + off + p, gp + off + n_mix * hw + p,
                                   gp + off + 2 * n_mix * hw + p);
        }
      }
  });
}

}  // namespace ad

}  // namespace srvae
