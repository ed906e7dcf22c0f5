#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "srvae/autodiff.hpp"
#include "srvae/distributions.hpp"
#include "srvae/flow.hpp"
#include "srvae/image.hpp"
#include "srvae/network.hpp"

namespace srvae {

enum class ModelKind { Vae, Srvae };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& s);

struct ModelConfig {
  ModelKind kind = ModelKind::Srvae;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 3;
  std::size_t latent_u = 32;   // K, dimensionality of u (srVAE only)
  std::size_t latent_z = 32;   // M, dimensionality of z
  std::size_t latent_hw = 0;   // side of the latent grid; 0 selects height / 4
  std::size_t n_mix = kDefaultMixtures;
  std::size_t flow_depth = 8;
  std::size_t flow_hidden = 0;  // 0 selects 4 * latent dim
  std::size_t hidden = 32;
  std::uint64_t seed = 0;

  /// Full-scale CIFAR-10 latent layout: K = M = 16 x 8 x 8 on 32x32x3.
  static ModelConfig cifar10_preset();

  std::size_t grid() const { return latent_hw ? latent_hw : height / 4; }
  std::size_t u_channels() const { return latent_u / (grid() * grid()); }
  std::size_t z_channels() const { return latent_z / (grid() * grid()); }
  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
};

/// Per-example ELBO decomposition in nats. re_* are negative log-likelihoods,
/// kl_* divergences (or their single-sample estimates).
struct ElboTerms {
  double re_x = 0.0;
  double re_y = 0.0;
  double kl_z = 0.0;
  double kl_u = 0.0;

  double elbo_loss() const { return re_x + re_y + kl_z + kl_u; }
};

/// How kl_z is evaluated for the srVAE. Analytic uses the closed-form
/// Gaussian KL given the sampled u; SampleBased uses log q(z|x) - log p(z|y,u)
/// at the sampled z. The VAE always uses the sample-based flow KL.
enum class KlMode { Analytic, SampleBased };

/// Graph of one ELBO evaluation over a batch. All per-example quantities are
/// [N]; the srVAE-only ones are zero constants for the VAE.
struct ElboGraph {
  ad::Var log_px;  // log p(x | y, z) or log p(x | z)
  ad::Var log_py;  // log p(y | u)
  ad::Var log_pz;  // log p(z | y, u) or flow log p(z)
  ad::Var log_pu;  // flow log p(u)
  ad::Var log_qz;  // log q(z | x)
  ad::Var log_qu;  // log q(u | y)
  ad::GaussianVars q_z;
  std::optional<ad::GaussianVars> p_z;  // conditional Gaussian prior (srVAE)
  ad::Var u;
  ad::Var z;
};

struct BatchTerms {
  ad::Var re_x, re_y, kl_z, kl_u;  // [N]
  ad::Var loss;                    // mean over batch of the weighted sum

  ElboTerms at(std::size_t i) const;
};

BatchTerms elbo_terms(const ElboGraph& g, KlMode mode, double kl_weight = 1.0);
/// log p(x, w) - log q(w | x) per example; log q(y|x) = 0 on support.
ad::Var log_weight(const ElboGraph& g);

class Model {
 public:
  explicit Model(ModelConfig config) : config_(std::move(config)) {}
  virtual ~Model() = default;

  const ModelConfig& config() const { return config_; }
  ModelKind kind() const { return config_.kind; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  /// Standard-normal draws consumed per example by one ELBO evaluation:
  /// srVAE draws eps_u (K values) then eps_z (M values); the VAE draws eps_z.
  virtual std::size_t noise_dim() const = 0;

  /// Builds the ELBO graph. `y` must be downscale(x) for each example (the
  /// srVAE ignores an empty span and computes it); `noise` is [N, noise_dim].
  virtual ElboGraph build(Bound p, std::span<const DiscreteImage> x,
                          std::span<const DiscreteImage> y, const DenseArray& noise) const = 0;

  virtual std::unique_ptr<Model> clone() const = 0;

 protected:
  ModelConfig config_;
  ParamSet params_;
};

class VaeModel : public Model {
 public:
  explicit VaeModel(const ModelConfig& config);

  std::size_t noise_dim() const override { return config_.latent_z; }
  ElboGraph build(Bound p, std::span<const DiscreteImage> x, std::span<const DiscreteImage> y,
                  const DenseArray& noise) const override;
  std::unique_ptr<Model> clone() const override { return std::make_unique<VaeModel>(*this); }

  ad::GaussianVars posterior_z(Bound p, ad::Var x_scaled) const;
  /// z [N, M] -> mixture planes [N, C*3*n_mix, H, W].
  ad::Var decode_x(Bound p, ad::Var z) const;

  const FlowPrior& prior() const { return prior_; }
  const ConvNet& encoder() const { return enc_; }
  const ConvNet& decoder() const { return dec_; }

 private:
  ConvNet enc_, dec_;
  FlowPrior prior_;
};

class SrvaeModel : public Model {
 public:
  explicit SrvaeModel(const ModelConfig& config);

  std::size_t noise_dim() const override { return config_.latent_u + config_.latent_z; }
  ElboGraph build(Bound p, std::span<const DiscreteImage> x, std::span<const DiscreteImage> y,
                  const DenseArray& noise) const override;
  std::unique_ptr<Model> clone() const override { return std::make_unique<SrvaeModel>(*this); }

  ad::GaussianVars posterior_u(Bound p, ad::Var y_scaled) const;
  ad::GaussianVars posterior_z(Bound p, ad::Var x_scaled) const;
  ad::Var decode_y(Bound p, ad::Var u) const;
  ad::GaussianVars prior_z(Bound p, ad::Var y_scaled, ad::Var u) const;
  ad::Var decode_x(Bound p, ad::Var z, ad::Var y_scaled) const;

  const FlowPrior& prior_u() const { return prior_u_; }

 private:
  ad::Var u_grid(ad::Var u) const;

  ConvNet enc_u_, enc_z_, dec_y_, cond_z_, dec_x_;
  FlowPrior prior_u_;
};

VaeModel build_vae(ModelConfig config);
SrvaeModel build_srvae(ModelConfig config);
std::unique_ptr<Model> build_model(const ModelConfig& config);

/// Draws [N, noise_dim] standard normals from rng, example by example.
DenseArray draw_noise(const Model& model, std::size_t n, RngStream& rng);

/// Single-sample ELBO terms with noise drawn from rng.
ElboTerms vae_elbo(const VaeModel& model, const DiscreteImage& x, RngStream& rng);
ElboTerms srvae_elbo(const SrvaeModel& model, const DiscreteImage& x, RngStream& rng,
                     KlMode mode = KlMode::Analytic);
ElboTerms model_elbo(const Model& model, const DiscreteImage& x, RngStream& rng,
                     KlMode mode = KlMode::Analytic);

/// Sample-based ELBO of one draw evaluated two ways: (a) the direct
/// log p(x,y,z,u) - log q(y,z,u|x) from the joint factorization and (b) the
/// negated four-term loss. Returns |a - b|.
double elbo_identity_check(const SrvaeModel& model, const DiscreteImage& x, RngStream& rng);
/// Direct form (a) for an explicit y. Throws std::domain_error when y is off
/// the support of q(y|x).
double direct_log_weight(const SrvaeModel& model, const DiscreteImage& x, const DiscreteImage& y,
                         const DenseArray& noise);

/// Mean over images of per-dimension KL_z: analytic KL(q(z|x) || p(z|y,u))
/// for the srVAE (one u draw per image); KL(q(z|x) || N(0, I)) for the VAE.
std::vector<double> kl_z_per_dim(const Model& model, std::span<const DiscreteImage> images,
                                 RngStream& rng);

struct GeneratedSample {
  std::optional<DiscreteImage> y;  // intermediate compressed sample (srVAE)
  DiscreteImage x;
};

std::vector<GeneratedSample> generate(const Model& model, RngStream& rng, std::size_t n);
std::vector<DiscreteImage> super_resolve(const SrvaeModel& model, std::span<const DiscreteImage> y,
                                         RngStream& rng);
std::vector<DiscreteImage> reconstruct(const Model& model, std::span<const DiscreteImage> x,
                                       RngStream& rng);
/// Returns the re-sampled compressed images alongside the reconstructions.
struct GenerativeReconstruction {
  std::vector<DiscreteImage> y;
  std::vector<DiscreteImage> x;
};
GenerativeReconstruction generative_reconstruct(const SrvaeModel& model,
                                                std::span<const DiscreteImage> x, RngStream& rng);

/// Draws one image per example from decoder planes [N, C*3*n_mix, H, W].
std::vector<DiscreteImage> sample_planes(const DenseArray& planes, std::size_t n_mix,
                                         RngStream& rng);

}  // namespace srvae
