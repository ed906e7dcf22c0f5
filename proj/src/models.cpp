#include "srvae/models.hpp"

#include <cmath>
#include <stdexcept>

#include "srvae/downscale.hpp"

namespace srvae {

namespace {

bool is_power_of_two(std::size_t v) { return v > 0 && (v & (v - 1)) == 0; }

std::size_t log2_exact(std::size_t v) {
  std::size_t k = 0;
  while ((std::size_t{1} << k) < v) ++k;
  return k;
}

ad::Tape& tape_of(Bound p) {
  if (p.empty() || !p[0].tape) throw std::logic_error("model: unbound parameters");
  return *p[0].tape;
}

DenseArray noise_columns(const DenseArray& noise, std::size_t begin, std::size_t count) {
  const std::size_t n = noise.extent(0), d = noise.extent(1);
  DenseArray out({n, count});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = noise[i * d + begin + j];
  return out;
}

void check_images(const ModelConfig& cfg, std::span<const DiscreteImage> x) {
  if (x.empty()) throw std::invalid_argument("model: empty batch");
  for (const auto& im : x) {
    if (im.height != cfg.height || im.width != cfg.width || im.channels != cfg.channels) {
      throw std::invalid_argument("model: image extents " + std::to_string(im.height) + "x" +
                                  std::to_string(im.width) + "x" + std::to_string(im.channels) +
                                  " do not match config " + std::to_string(cfg.height) + "x" +
                                  std::to_string(cfg.width) + "x" + std::to_string(cfg.channels));
    }
  }
}

void check_noise(const Model& m, const DenseArray& noise, std::size_t n) {
  if (noise.rank() != 2 || noise.extent(0) != n || noise.extent(1) != m.noise_dim()) {
    throw std::invalid_argument("model: noise must be [" + std::to_string(n) + ", " +
                                std::to_string(m.noise_dim()) + "], got " +
                                shape_string(noise.shape()));
  }
}

ad::Var zeros(ad::Tape& t, std::size_t n) { return t.constant(DenseArray({n})); }

}  // namespace

std::string to_string(ModelKind kind) { return kind == ModelKind::Vae ? "vae" : "srvae"; }

ModelKind parse_model_kind(const std::string& s) {
  if (s == "vae") return ModelKind::Vae;
  if (s == "srvae") return ModelKind::Srvae;
  throw std::invalid_argument("unknown model kind '" + s + "' (expected vae or srvae)");
}

ModelConfig ModelConfig::cifar10_preset() {
  ModelConfig c;
  c.height = c.width = 32;
  c.channels = 3;
  c.latent_u = c.latent_z = 16 * 8 * 8;
  c.latent_hw = 8;
  c.hidden = 64;
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (height == 0 || width == 0 || channels == 0) fail("image extents must be positive");
  if (height != width) fail("images must be square");
  if (n_mix == 0 || n_mix > 64) fail("n_mix must be in [1, 64]");
  if (hidden == 0) fail("hidden must be positive");
  const std::size_t g = grid();
  if (g == 0 || height % g != 0 || !is_power_of_two(height / g)) {
    fail("latent grid " + std::to_string(g) + " must divide the image side by a power of two");
  }
  if (latent_z == 0 || latent_z % (g * g) != 0) {
    fail("latent_z must be a positive multiple of the latent grid area " + std::to_string(g * g));
  }
  if (kind == ModelKind::Srvae) {
    if (height % 2 != 0) fail("srvae needs even image extents");
    if (height / g < 2) fail("srvae latent grid must be at most half the image side");
    if (latent_u == 0 || latent_u % (g * g) != 0) {
      fail("latent_u must be a positive multiple of the latent grid area " + std::to_string(g * g));
    }
  }
}

ElboTerms BatchTerms::at(std::size_t i) const {
  return {re_x.value()[i], re_y.value()[i], kl_z.value()[i], kl_u.value()[i]};
}

BatchTerms elbo_terms(const ElboGraph& g, KlMode mode, double kl_weight) {
  BatchTerms t;
  t.re_x = ad::scale(g.log_px, -1.0);
  t.re_y = ad::scale(g.log_py, -1.0);
  t.kl_u = ad::sub(g.log_qu, g.log_pu);
  if (g.p_z && mode == KlMode::Analytic) {
    t.kl_z = ad::gaussian_kl(g.q_z, *g.p_z);
  } else {
    t.kl_z = ad::sub(g.log_qz, g.log_pz);
  }
  ad::Var kl = ad::add(t.kl_z, t.kl_u);
  if (kl_weight != 1.0) kl = ad::scale(kl, kl_weight);
  t.loss = ad::mean_all(ad::add(ad::add(t.re_x, t.re_y), kl));
  return t;
}

ad::Var log_weight(const ElboGraph& g) {
  ad::Var log_joint = ad::add(ad::add(g.log_px, g.log_pz), ad::add(g.log_py, g.log_pu));
  return ad::sub(log_joint, ad::add(g.log_qz, g.log_qu));
}

// VAE ------------------------------------------------------------------------

VaeModel::VaeModel(const ModelConfig& config) : Model(config) {
  config_.kind = ModelKind::Vae;
  config_.validate();
  const RngStream init = RngStream(config_.seed).child("init");
  const std::size_t g = config_.grid(), ratio = config_.height / g;
  RngStream r_enc = init.child("enc_z"), r_dec = init.child("dec_x"), r_pri = init.child("prior_z");
  enc_ = ConvNet::encoder(params_, "enc_z", config_.channels, config_.hidden,
                          2 * config_.z_channels(), log2_exact(ratio), r_enc);
  dec_ = ConvNet::decoder(params_, "dec_x", config_.z_channels(), config_.hidden,
                          config_.channels * 3 * config_.n_mix, r_dec);
  prior_ = FlowPrior::create(params_, "prior_z", config_.latent_z, config_.flow_depth,
                             config_.flow_hidden, r_pri, true);
}

ad::GaussianVars VaeModel::posterior_z(Bound p, ad::Var x_scaled) const {
  return ad::gaussian_from_planes(enc_.forward(p, x_scaled));
}

ad::Var VaeModel::decode_x(Bound p, ad::Var z) const {
  const std::size_t n = z.shape()[0], g = config_.grid();
  ad::Var grid = ad::reshape(z, {n, config_.z_channels(), g, g});
  return dec_.forward(p, ad::upsample_bilinear(grid, config_.height / g));
}

ElboGraph VaeModel::build(Bound p, std::span<const DiscreteImage> x, std::span<const DiscreteImage>,
                          const DenseArray& noise) const {
  check_images(config_, x);
  check_noise(*this, noise, x.size());
  ad::Tape& t = tape_of(p);
  const std::size_t n = x.size();
  ElboGraph g;
  g.q_z = posterior_z(p, t.constant(stack_scaled(x)));
  g.z = ad::gaussian_sample(g.q_z, noise);
  g.log_px = ad::dlogistic_log_prob(decode_x(p, g.z), stack_pixels(x), config_.n_mix);
  g.log_pz = prior_.log_prob(p, g.z);
  g.log_qz = ad::gaussian_log_prob(g.q_z, g.z);
  g.log_py = zeros(t, n);
  g.log_pu = zeros(t, n);
  g.log_qu = zeros(t, n);
  g.u = g.z;
  return g;
}

// srVAE ----------------------------------------------------------------------

SrvaeModel::SrvaeModel(const ModelConfig& config) : Model(config) {
  config_.kind = ModelKind::Srvae;
  config_.validate();
  const RngStream init = RngStream(config_.seed).child("init");
  const std::size_t g = config_.grid();
  const std::size_t ratio_x = config_.height / g, ratio_y = ratio_x / 2;
  const std::size_t c = config_.channels, h = config_.hidden;
  const std::size_t cu = config_.u_channels(), cz = config_.z_channels();
  const std::size_t mix_planes = c * 3 * config_.n_mix;
  RngStream r1 = init.child("enc_u"), r2 = init.child("enc_z"), r3 = init.child("dec_y"),
            r4 = init.child("cond_z"), r5 = init.child("dec_x"), r6 = init.child("prior_u");
  enc_u_ = ConvNet::encoder(params_, "enc_u", c, h, 2 * cu, log2_exact(ratio_y), r1);
  enc_z_ = ConvNet::encoder(params_, "enc_z", c, h, 2 * cz, log2_exact(ratio_x), r2);
  dec_y_ = ConvNet::decoder(params_, "dec_y", cu, h, mix_planes, r3);
  cond_z_ = ConvNet::encoder(params_, "cond_z", c + cu, h, 2 * cz, log2_exact(ratio_y), r4);
  dec_x_ = ConvNet::decoder(params_, "dec_x", c + cz, h, mix_planes, r5);
  prior_u_ = FlowPrior::create(params_, "prior_u", config_.latent_u, config_.flow_depth,
                               config_.flow_hidden, r6, true);
}

ad::Var SrvaeModel::u_grid(ad::Var u) const {
  const std::size_t g = config_.grid();
  ad::Var grid = ad::reshape(u, {u.shape()[0], config_.u_channels(), g, g});
  return ad::upsample_nearest(grid, config_.height / 2 / g);
}

ad::GaussianVars SrvaeModel::posterior_u(Bound p, ad::Var y_scaled) const {
  return ad::gaussian_from_planes(enc_u_.forward(p, y_scaled));
}

ad::GaussianVars SrvaeModel::posterior_z(Bound p, ad::Var x_scaled) const {
  return ad::gaussian_from_planes(enc_z_.forward(p, x_scaled));
}

ad::Var SrvaeModel::decode_y(Bound p, ad::Var u) const { return dec_y_.forward(p, u_grid(u)); }

ad::GaussianVars SrvaeModel::prior_z(Bound p, ad::Var y_scaled, ad::Var u) const {
  return ad::gaussian_from_planes(cond_z_.forward(p, ad::concat_channels(y_scaled, u_grid(u))));
}

ad::Var SrvaeModel::decode_x(Bound p, ad::Var z, ad::Var y_scaled) const {
  const std::size_t n = z.shape()[0], g = config_.grid();
  ad::Var z_grid = ad::reshape(z, {n, config_.z_channels(), g, g});
  ad::Var z_up = ad::upsample_bilinear(z_grid, config_.height / g);
  return dec_x_.forward(p, ad::concat_channels(ad::upsample_nearest(y_scaled, 2), z_up));
}

ElboGraph SrvaeModel::build(Bound p, std::span<const DiscreteImage> x,
                            std::span<const DiscreteImage> y, const DenseArray& noise) const {
  check_images(config_, x);
  check_noise(*this, noise, x.size());
  std::vector<DiscreteImage> ys;
  if (y.empty()) {
    for (const auto& im : x) ys.push_back(downscale(im));
  } else {
    if (y.size() != x.size()) throw std::invalid_argument("srvae: x and y batch sizes differ");
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (2 * y[i].height != x[i].height || 2 * y[i].width != x[i].width ||
          y[i].channels != x[i].channels) {
        throw std::invalid_argument("srvae: y must have half the extents of x");
      }
    }
    ys.assign(y.begin(), y.end());
  }
  ad::Tape& t = tape_of(p);
  const std::size_t k = config_.latent_u, m = config_.latent_z;
  ad::Var x_in = t.constant(stack_scaled(x));
  ad::Var y_in = t.constant(stack_scaled(ys));

  ElboGraph g;
  ad::GaussianVars q_u = posterior_u(p, y_in);
  g.u = ad::gaussian_sample(q_u, noise_columns(noise, 0, k));
  g.q_z = posterior_z(p, x_in);
  g.z = ad::gaussian_sample(g.q_z, noise_columns(noise, k, m));

  g.log_py = ad::dlogistic_log_prob(decode_y(p, g.u), stack_pixels(ys), config_.n_mix);
  g.p_z = prior_z(p, y_in, g.u);
  g.log_px = ad::dlogistic_log_prob(decode_x(p, g.z, y_in), stack_pixels(x), config_.n_mix);
  g.log_pz = ad::gaussian_log_prob(*g.p_z, g.z);
  g.log_qz = ad::gaussian_log_prob(g.q_z, g.z);
  g.log_qu = ad::gaussian_log_prob(q_u, g.u);
  g.log_pu = prior_u_.log_prob(p, g.u);
  return g;
}

VaeModel build_vae(ModelConfig config) {
  config.kind = ModelKind::Vae;
  return VaeModel(config);
}

SrvaeModel build_srvae(ModelConfig config) {
  config.kind = ModelKind::Srvae;
  return SrvaeModel(config);
}

std::unique_ptr<Model> build_model(const ModelConfig& config) {
  if (config.kind == ModelKind::Vae) return std::make_unique<VaeModel>(config);
  return std::make_unique<SrvaeModel>(config);
}

DenseArray draw_noise(const Model& model, std::size_t n, RngStream& rng) {
  return rng.normal_array({n, model.noise_dim()});
}

namespace {

ElboTerms checked_terms(const BatchTerms& t) {
  ElboTerms e = t.at(0);
  const std::pair<const char*, double> named[] = {
      {"re_x", e.re_x}, {"re_y", e.re_y}, {"kl_z", e.kl_z}, {"kl_u", e.kl_u}};
  for (const auto& [name, v] : named) {
    if (!std::isfinite(v)) throw std::runtime_error(std::string("elbo: non-finite ") + name);
  }
  return e;
}

}  // namespace

ElboTerms model_elbo(const Model& model, const DiscreteImage& x, RngStream& rng, KlMode mode) {
  ad::Tape tape;
  auto p = model.params().bind(tape, false);
  DenseArray noise = draw_noise(model, 1, rng);
  ElboGraph g = model.build(p, std::span(&x, 1), {}, noise);
  return checked_terms(elbo_terms(g, mode));
}

ElboTerms vae_elbo(const VaeModel& model, const DiscreteImage& x, RngStream& rng) {
  return model_elbo(model, x, rng, KlMode::SampleBased);
}

ElboTerms srvae_elbo(const SrvaeModel& model, const DiscreteImage& x, RngStream& rng, KlMode mode) {
  return model_elbo(model, x, rng, mode);
}

double direct_log_weight(const SrvaeModel& model, const DiscreteImage& x, const DiscreteImage& y,
                         const DenseArray& noise) {
  const double log_qy = degenerate_log_mass(y, x);
  if (is_off_support(log_qy)) {
    throw std::domain_error("direct_log_weight: y is off the support of q(y|x)");
  }
  ad::Tape tape;
  auto p = model.params().bind(tape, false);
  ElboGraph g = model.build(p, std::span(&x, 1), std::span(&y, 1), noise);
  // log p(x,y,z,u) = log p(x|y,z) + log p(z|y,u) + log p(y|u) + log p(u)
  const double log_joint =
      g.log_px.value()[0] + g.log_pz.value()[0] + g.log_py.value()[0] + g.log_pu.value()[0];
  // log q(y,z,u|x) = log q(z|x) + log q(u|y) + log q(y|x)
  const double log_q = g.log_qz.value()[0] + g.log_qu.value()[0] + log_qy;
  return log_joint - log_q;
}

double elbo_identity_check(const SrvaeModel& model, const DiscreteImage& x, RngStream& rng) {
  DenseArray noise = draw_noise(model, 1, rng);
  const double direct = direct_log_weight(model, x, downscale(x), noise);
  ad::Tape tape;
  auto p = model.params().bind(tape, false);
  ElboGraph g = model.build(p, std::span(&x, 1), {}, noise);
  const ElboTerms terms = checked_terms(elbo_terms(g, KlMode::SampleBased));
  return std::abs(direct - (-terms.elbo_loss()));
}

std::vector<double> kl_z_per_dim(const Model& model, std::span<const DiscreteImage> images,
                                 RngStream& rng) {
  const std::size_t m = model.config().latent_z;
  std::vector<double> out(m, 0.0);
  ad::Tape tape;
  auto p = model.params().bind(tape, false);
  DenseArray noise = draw_noise(model, images.size(), rng);
  ElboGraph g = model.build(p, images, {}, noise);
  const DenseArray& mq = g.q_z.mean.value();
  const DenseArray& lq = g.q_z.log_var.value();
  for (std::size_t i = 0; i < images.size(); ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t k = i * m + j;
      double mp = 0.0, lp = 0.0;
      if (g.p_z) {
        mp = g.p_z->mean.value()[k];
        lp = g.p_z->log_var.value()[k];
      }
      const double d = mq[k] - mp;
      out[j] += 0.5 * (std::exp(lq[k] - lp) + d * d * std::exp(-lp) - 1.0 + lp - lq[k]);
    }
  for (double& v : out) v /= static_cast<double>(images.size());
  return out;
}

// Pipelines -------------------------------------------------------------------

std::vector<DiscreteImage> sample_planes(const DenseArray& planes, std::size_t n_mix,
                                         RngStream& rng) {
  const auto& s = planes.shape();
  if (s.size() != 4 || s[1] % (3 * n_mix) != 0) {
    throw std::invalid_argument("sample_planes: bad plane shape " + shape_string(s));
  }
  const std::size_t per = s[1] * s[2] * s[3], c = s[1] / (3 * n_mix);
  std::vector<DiscreteImage> out;
  for (std::size_t i = 0; i < s[0]; ++i) {
    DenseArray one({s[1], s[2], s[3]},
                   std::vector<double>(planes.data() + i * per, planes.data() + (i + 1) * per));
    out.emplace_back(s[2], s[3], c, dlogistic_sample(mixture_from_planes(one, n_mix), rng));
  }
  return out;
}

std::vector<GeneratedSample> generate(const Model& model, RngStream& rng, std::size_t n) {
  if (n == 0) return {};
  const ModelConfig& cfg = model.config();
  ad::Tape tape;
  auto p = model.params().bind(tape, false);
  std::vector<GeneratedSample> out;
  if (const auto* vae = dynamic_cast<const VaeModel*>(&model)) {
    ad::Var v = tape.constant(rng.normal_array({n, cfg.latent_z}));
    ad::Var z = vae->prior().forward(p, v).out;
    for (auto& x : sample_planes(vae->decode_x(p, z).value(), cfg.n_mix, rng))
      out.push_back({std::nullopt, std::move(x)});
    return out;
  }
  const auto& sr = dynamic_cast<const SrvaeModel&>(model);
  ad::Var v = tape.constant(rng.normal_array({n, cfg.latent_u}));
  ad::Var u = sr.prior_u().forward(p, v).out;
  std::vector<DiscreteImage> ys = sample_planes(sr.decode_y(p, u).value(), cfg.n_mix, rng);
  ad::Var y_in = tape.constant(stack_scaled(ys));
  ad::Var z = ad::gaussian_sample(sr.prior_z(p, y_in, u), rng.normal_array({n, cfg.latent_z}));
  std::vector<DiscreteImage> xs = sample_planes(sr.decode_x(p, z, y_in).value(), cfg.n_mix, rng);
  for (std::size_t i = 0; i < n; ++i) out.push_back({std::move(ys[i]), std::move(xs[i])});
  return out;
}

std::vector<DiscreteImage> super_resolve(const SrvaeModel& model, std::span<const DiscreteImage> y,
                                         RngStream& rng) {
  const ModelConfig& cfg = model.config();
  if (y.empty()) return {};
  for (const auto& im : y) {
    if (2 * im.height != cfg.height || 2 * im.width != cfg.width || im.channels != cfg.channels) {
      throw std::invalid_argument("super_resolve: y must have half the model's image extents");
    }
  }
  const std::size_t n = y.size();
  ad::Tape tape;
  auto p = model.params().bind(tape, false);
  ad::Var y_in = tape.constant(stack_scaled(y));
  ad::Var u = ad::gaussian_sample(model.posterior_u(p, y_in), rng.normal_array({n, cfg.latent_u}));
  ad::Var z = ad::gaussian_sample(model.prior_z(p, y_in, u), rng.normal_array({n, cfg.latent_z}));
  return sample_planes(model.decode_x(p, z, y_in).value(), cfg.n_mix, rng);
}

std::vector<DiscreteImage> reconstruct(const Model& model, std::span<const DiscreteImage> x,
                                       RngStream& rng) {
  const ModelConfig& cfg = model.config();
  if (x.empty()) return {};
  check_images(cfg, x);
  const std::size_t n = x.size();
  ad::Tape tape;
  auto p = model.params().bind(tape, false);
  ad::Var x_in = tape.constant(stack_scaled(x));
  if (const auto* vae = dynamic_cast<const VaeModel*>(&model)) {
    ad::Var z = ad::gaussian_sample(vae->posterior_z(p, x_in), rng.normal_array({n, cfg.latent_z}));
    return sample_planes(vae->decode_x(p, z).value(), cfg.n_mix, rng);
  }
  const auto& sr = dynamic_cast<const SrvaeModel&>(model);
  std::vector<DiscreteImage> ys;
  for (const auto& im : x) ys.push_back(downscale(im));
  ad::Var y_in = tape.constant(stack_scaled(ys));
  ad::Var z = ad::gaussian_sample(sr.posterior_z(p, x_in), rng.normal_array({n, cfg.latent_z}));
  return sample_planes(sr.decode_x(p, z, y_in).value(), cfg.n_mix, rng);
}

GenerativeReconstruction generative_reconstruct(const SrvaeModel& model,
                                                std::span<const DiscreteImage> x, RngStream& rng) {
  const ModelConfig& cfg = model.config();
  if (x.empty()) return {};
  check_images(cfg, x);
  const std::size_t n = x.size();
  ad::Tape tape;
  auto p = model.params().bind(tape, false);
  std::vector<DiscreteImage> y_star;
  for (const auto& im : x) y_star.push_back(downscale(im));
  ad::Var ys_in = tape.constant(stack_scaled(y_star));
  ad::Var u = ad::gaussian_sample(model.posterior_u(p, ys_in), rng.normal_array({n, cfg.latent_u}));
  GenerativeReconstruction out;
  out.y = sample_planes(model.decode_y(p, u).value(), cfg.n_mix, rng);
  ad::Var y_in = tape.constant(stack_scaled(out.y));
  ad::Var z = ad::gaussian_sample(model.prior_z(p, y_in, u), rng.normal_array({n, cfg.latent_z}));
  out.x = sample_planes(model.decode_x(p, z, y_in).value(), cfg.n_mix, rng);
  return out;
}

}  // namespace srvae
