#include "srvae/training.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "srvae/eval.hpp"

namespace srvae {

AdaMaxState AdaMaxState::like(const ParamSet& params) {
  AdaMaxState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.value.shape());
    s.u_inf.emplace_back(p.value.shape());
  }
  return s;
}

void adamax_step(ParamSet& params, std::span<const DenseArray> grads, AdaMaxState& state,
                 const AdaMaxConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.u_inf.size() != params.size()) {
    throw std::invalid_argument("adamax_step: parameter/gradient/state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Shape& s = params[i].value.shape();
    if (grads[i].shape() != s || state.m[i].shape() != s || state.u_inf[i].shape() != s) {
      throw std::invalid_argument("adamax_step: shape mismatch for " + params[i].name);
    }
    if (!grads[i].all_finite()) {
      throw std::invalid_argument("adamax_step: non-finite gradient for " + params[i].name);
    }
  }
  const std::uint64_t t = state.t + 1;
  const double step = cfg.learning_rate / (1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
  for (std::size_t i = 0; i < params.size(); ++i) {
    DenseArray& theta = params[i].value;
    DenseArray& m = state.m[i];
    DenseArray& u = state.u_inf[i];
    const DenseArray& g = grads[i];
    for (std::size_t k = 0; k < theta.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      u[k] = std::max(cfg.beta2 * u[k], std::abs(g[k]));
      theta[k] -= step * m[k] / (u[k] + kAdaMaxEpsilon);
    }
  }
  state.t = t;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (!(optimizer.learning_rate > 0.0)) fail("learning_rate must be > 0");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0)) fail("beta1 must be in [0, 1)");
  if (!(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) fail("beta2 must be in [0, 1)");
  if (batch_size == 0) fail("batch_size must be >= 1");
  if (!(clip_norm > 0.0)) fail("clip_norm must be > 0");
  if (checkpoint_interval == 0) fail("checkpoint_interval must be >= 1");
}

std::vector<std::size_t> shuffled_indices(std::size_t n, RngStream rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

TrainResult train(Model& model, std::span<const DiscreteImage> dataset, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  const ModelConfig& mc = model.config();
  const RngStream root(cfg.seed);
  const RngStream shuffle_root = root.child("shuffle");
  const RngStream noise_root = root.child("noise");

  TrainResult result;
  result.state = AdaMaxState::like(model.params());
  const std::size_t n = dataset.size();
  const std::size_t batch = std::min(cfg.batch_size, n);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.max_steps && result.steps >= cfg.max_steps) break;
    const auto order = shuffled_indices(n, shuffle_root.child(epoch));
    RngStream noise_rng = noise_root.child(epoch);
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t seen = 0;

    for (std::size_t start = 0; start < n; start += batch) {
      if (cfg.max_steps && result.steps >= cfg.max_steps) break;
      const std::size_t end = std::min(start + batch, n);
      std::vector<DiscreteImage> images;
      for (std::size_t i = start; i < end; ++i) images.push_back(dataset[order[i]]);
      const double kl_weight =
          cfg.kl_warmup_steps == 0
              ? 1.0
              : std::min(1.0, static_cast<double>(result.steps) /
                                  static_cast<double>(cfg.kl_warmup_steps));

      ad::Tape tape;
      auto p = model.params().bind(tape, true);
      DenseArray noise = draw_noise(model, images.size(), noise_rng);
      ElboGraph g = model.build(p, images, {}, noise);
      BatchTerms terms = elbo_terms(g, KlMode::Analytic, kl_weight);
      const double loss = terms.loss.value()[0];
      if (!std::isfinite(loss)) {
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", step " + std::to_string(result.steps) +
                                 "; last written checkpoint retained");
      }
      tape.backward(terms.loss);

      std::vector<DenseArray> grads;
      double sq = 0.0;
      for (const auto& v : p) {
        grads.push_back(tape.grad(v));
        for (double x : grads.back().values()) sq += x * x;
      }
      const double norm = std::sqrt(sq);
      if (norm > cfg.clip_norm) {
        const double s = cfg.clip_norm / norm;
        for (auto& gr : grads)
          for (double& x : gr.values()) x *= s;
      }
      adamax_step(model.params(), grads, result.state, cfg.optimizer);
      ++result.steps;
      ++rec.steps;

      for (std::size_t i = 0; i < images.size(); ++i) {
        const ElboTerms e = terms.at(i);
        rec.mean.re_x += e.re_x;
        rec.mean.re_y += e.re_y;
        rec.mean.kl_z += e.kl_z;
        rec.mean.kl_u += e.kl_u;
      }
      seen += images.size();
    }
    if (seen == 0) break;
    const double inv = 1.0 / static_cast<double>(seen);
    rec.mean.re_x *= inv;
    rec.mean.re_y *= inv;
    rec.mean.kl_z *= inv;
    rec.mean.kl_u *= inv;
    rec.bits_per_dim = bits_per_dim(rec.mean.elbo_loss(), mc.height, mc.width, mc.channels);
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    const bool last = epoch + 1 == cfg.epochs || (cfg.max_steps && result.steps >= cfg.max_steps);
    if (!cfg.checkpoint_path.empty() && ((epoch + 1) % cfg.checkpoint_interval == 0 || last)) {
      save_checkpoint(model, result.state, cfg.checkpoint_path,
                      {{"epoch", std::to_string(epoch + 1)},
                       {"step", std::to_string(result.steps)},
                       {"train_seed", std::to_string(cfg.seed)}});
    }
  }
  return result;
}

}  // namespace srvae
