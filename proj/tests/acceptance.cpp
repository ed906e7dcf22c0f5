// Runs the ten acceptance criteria and prints one PASS/FAIL line each.
// Exit status is nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <set>
#include <sstream>
#include <string>

#include "srvae/cli.hpp"
#include "srvae/data.hpp"
#include "srvae/distributions.hpp"
#include "srvae/downscale.hpp"
#include "srvae/eval.hpp"
#include "srvae/flow.hpp"
#include "srvae/training.hpp"
#include "support.hpp"

using namespace srvae;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

// --- 1 -----------------------------------------------------------------------
Outcome elbo_identity() {
  RngStream gen(101);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    SrvaeModel m = build_srvae(testing::tiny_config(ModelKind::Srvae, 1000 + t));
    testing::perturb(m.params(), gen, 0.1);
    const DiscreteImage x = testing::random_image(8, 8, 1, gen);
    RngStream rng = gen.child(static_cast<std::uint64_t>(t));
    worst = std::max(worst, elbo_identity_check(m, x, rng));
  }
  return {worst < 1e-6, fmt("max |direct - four-term| = %.3g nats over 100 triples", worst)};
}

// --- 2 -----------------------------------------------------------------------
Outcome flow_correctness() {
  RngStream gen(202);
  double round = 0.0, anti = 0.0, span = 0.0, widest = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t dim = 1 + gen.below(64), depth = 1 + gen.below(8);
    ParamSet params;
    RngStream init = gen.child(static_cast<std::uint64_t>(t));
    const FlowPrior flow = FlowPrior::create(params, "f", dim, depth, 0, init, true);
    testing::perturb_scaled(params, init, 0.3);
    const DenseArray u = testing::random_array({4, dim}, gen, 1.5);
    ad::Tape tape;
    auto p = params.bind(tape, false);
    const auto inv = flow.inverse(p, tape.constant(u));
    const auto back = flow.forward(p, inv.out);
    const auto fw = flow.forward(p, tape.constant(u));
    const auto again = flow.inverse(p, fw.out);
    for (std::size_t i = 0; i < u.size(); ++i) {
      round = std::max(round, std::abs(back.out.value()[i] - u[i]));
      round = std::max(round, std::abs(again.out.value()[i] - u[i]));
    }
    for (std::size_t i = 0; i < 4; ++i) {
      anti = std::max(anti, std::abs(fw.log_det.value()[i] + again.log_det.value()[i]));
      anti = std::max(anti, std::abs(inv.log_det.value()[i] + back.log_det.value()[i]));
      span = std::max(span, std::abs(fw.log_det.value()[i]));
    }
    for (std::size_t i = 0; i < u.size(); ++i)
      widest = std::max({widest, std::abs(inv.out.value()[i]), std::abs(fw.out.value()[i])});
  }
  double worst_mass = 0.0;
  for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
    ParamSet params;
    RngStream init(300 + seed);
    const FlowPrior flow = FlowPrior::create(params, "f", 1, 4, 0, init, true);
    testing::perturb(params, init, 0.3);
    // 1-D coupling layers are increasing affine maps: integrate over the
    // image of the base interval [-8, 8]
    ad::Tape tape;
    auto p = params.bind(tape, false);
    const DenseArray ends = flow.forward(p, tape.constant(DenseArray({2, 1}, {-8.0, 8.0}))).out.value();
    const int pts = 4001;
    const double lo = ends[0], h = (ends[1] - ends[0]) / (pts - 1);
    DenseArray grid({static_cast<std::size_t>(pts), 1});
    for (int i = 0; i < pts; ++i) grid[i] = lo + i * h;
    const DenseArray lp = flow_log_prob_batch(flow, params, grid);
    double mass = 0.0;
    for (int i = 0; i < pts; ++i) mass += (i == 0 || i == pts - 1 ? 0.5 : 1.0) * std::exp(lp[i]);
    worst_mass = std::max(worst_mass, std::abs(mass * h - 1.0));
  }
  const bool ok = round < 1e-8 && anti < 1e-10 && worst_mass < 1e-3;
  return {ok, fmt("round trip %.3g, log-det antisymmetry %.3g, 1-D |mass - 1| %.3g", round, anti,
                  worst_mass) +
                  fmt(" (50 flows, max |log det| %.1f, max |value| %.3g)", span, widest)};
}

// --- 3 -----------------------------------------------------------------------
Outcome pmf_normalization() {
  RngStream rng(303);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + rng.below(5);
    std::vector<double> logits(n), means(n), log_scales(n);
    for (std::size_t k = 0; k < n; ++k) {
      logits[k] = 2.0 * rng.normal();
      means[k] = 2.4 * rng.uniform() - 1.2;
      log_scales[k] = -7.0 + 7.5 * rng.uniform();
    }
    double total = 0.0;
    for (int v = 0; v < 256; ++v)
      total += std::exp(dlogistic_pixel_log_prob(logits.data(), means.data(), log_scales.data(), 1,
                                                 n, v, 0.0, nullptr, nullptr, nullptr));
    worst = std::max(worst, std::abs(total - 1.0));
  }
  return {worst < 1e-9, fmt("max |sum P - 1| = %.3g over 100 settings", worst)};
}

// --- 4 -----------------------------------------------------------------------
Outcome gradient_fidelity() {
  SrvaeModel m = build_srvae(testing::tiny_config(ModelKind::Srvae, 404));
  RngStream rng(405);
  testing::perturb(m.params(), rng, 0.05);
  const std::vector<DiscreteImage> xs{testing::random_image(8, 8, 1, rng)};
  const DenseArray noise = draw_noise(m, 1, rng);
  SrvaeModel work = m;
  ObjectiveFn f = [&](const DenseArray& flat, DenseArray* g) {
    work.params().assign_flat(flat);
    ad::Tape tape;
    auto p = work.params().bind(tape, true);
    const BatchTerms t = elbo_terms(work.build(p, xs, {}, noise), KlMode::Analytic);
    if (g) {
      tape.backward(t.loss);
      *g = gather_grads(tape, p);
    }
    return t.loss.value()[0];
  };
  const double err = grad_check(f, m.params().flatten(), 1e-4);
  return {err < 1e-4, fmt("max relative error %.3g over %.0f parameters", err,
                          static_cast<double>(m.params().scalar_count()))};
}

// --- 5 -----------------------------------------------------------------------
struct Quadrature {
  double log_px = 0.0;
  double corr = 0.0;  // posterior correlation of z0 and z1 on the grid
};

Quadrature quadrature_log_px(const VaeModel& m, const DiscreteImage& x) {
  const int pts = 301;
  const double lo = -6.0, h = 12.0 / (pts - 1);
  const std::size_t total = static_cast<std::size_t>(pts) * pts, chunk = 2048;
  std::vector<double> terms, z0, z1;
  terms.reserve(total);
  for (std::size_t start = 0; start < total; start += chunk) {
    const std::size_t n = std::min(chunk, total - start);
    DenseArray z({n, 2});
    std::vector<double> log_w(n);
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t i = (start + r) / pts, j = (start + r) % pts;
      z[2 * r] = lo + static_cast<double>(i) * h;
      z[2 * r + 1] = lo + static_cast<double>(j) * h;
      const double wi = i == 0 || i == pts - 1 ? 0.5 : 1.0;
      const double wj = j == 0 || j == pts - 1 ? 0.5 : 1.0;
      log_w[r] = std::log(wi * wj * h * h);
    }
    const std::vector<DiscreteImage> xs(n, x);
    ad::Tape tape;
    auto p = m.params().bind(tape, false);
    const ad::Var lpx = ad::dlogistic_log_prob(m.decode_x(p, tape.constant(z)), stack_pixels(xs),
                                               m.config().n_mix);
    for (std::size_t r = 0; r < n; ++r) {
      const double lz = std_normal_log_prob(std::span<const double>(z.data() + 2 * r, 2));
      terms.push_back(lpx.value()[r] + lz + log_w[r]);
      z0.push_back(z[2 * r]);
      z1.push_back(z[2 * r + 1]);
    }
  }
  Quadrature q;
  q.log_px = log_sum_exp(terms);
  double m0 = 0, m1 = 0, s00 = 0, s11 = 0, s01 = 0;
  for (std::size_t k = 0; k < terms.size(); ++k) {
    const double w = std::exp(terms[k] - q.log_px);
    m0 += w * z0[k];
    m1 += w * z1[k];
    s00 += w * z0[k] * z0[k];
    s11 += w * z1[k] * z1[k];
    s01 += w * z0[k] * z1[k];
  }
  q.corr = (s01 - m0 * m1) / std::sqrt((s00 - m0 * m0) * (s11 - m1 * m1));
  return q;
}

Outcome oracle_nll() {
  ModelConfig c = testing::tiny_config(ModelKind::Vae, 505);
  c.latent_hw = 1;
  c.latent_z = 2;
  c.flow_depth = 0;
  VaeModel m = build_vae(c);
  const ImageDataset inputs = gen_toy_shapes(5, 8, 506);
  std::vector<DiscreteImage> xs;
  for (const auto& im : inputs.images) {
    DiscreteImage g(8, 8, 1);
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) g.at(0, y, x) = im.at(0, y, x);
    xs.push_back(g);
  }
  // k=20000 and the posterior correlation are diagnostics only; the verdict uses k=500.
  double worst = 0.0, worst_big = 0.0, min_corr = 1.0;
  std::string per;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    RngStream rng = RngStream(507).child(i);
    const double iw = iw_nll(m, xs[i], 500, rng);
    RngStream big_rng = RngStream(508).child(i);
    const double iw_big = iw_nll(m, xs[i], 20000, big_rng);
    const Quadrature quad = quadrature_log_px(m, xs[i]);
    worst = std::max(worst, std::abs(iw + quad.log_px));
    worst_big = std::max(worst_big, std::abs(iw_big + quad.log_px));
    min_corr = std::min(min_corr, std::abs(quad.corr));
    per += fmt(" %.4f/%.4f", iw, -quad.log_px);
  }
  return {worst < 0.02, fmt("max |iw_nll(k=500) - quadrature| = %.3g nats;", worst) +
                            " iw/quad per input:" + per +
                            fmt("; k=20000 max diff %.3g; |posterior corr| >= %.2f", worst_big,
                                min_corr)};
}

// --- 6 -----------------------------------------------------------------------
Outcome analytic_kl() {
  RngStream rng(606);
  int outside = 0;
  double worst_z = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t d = 1 + rng.below(6);
    DiagGaussianParams q(testing::random_array({d}, rng), testing::random_array({d}, rng, 0.7));
    DiagGaussianParams p(testing::random_array({d}, rng), testing::random_array({d}, rng, 0.7));
    std::vector<double> ratios;
    ratios.reserve(10000);
    for (int s = 0; s < 10000; ++s) {
      const DenseArray z = gaussian_sample(q, rng.normal_array({d}));
      ratios.push_back(gaussian_log_prob(q, z) - gaussian_log_prob(p, z));
    }
    const double zscore =
        std::abs(testing::mean_of(ratios) - gaussian_kl(q, p)) / testing::std_error_of(ratios);
    worst_z = std::max(worst_z, zscore);
    outside += zscore > 3.0;
  }
  return {outside == 0, fmt("%.0f of 50 pairs outside 3 s.e.; max |z| = %.3g",
                            static_cast<double>(outside), worst_z)};
}

// --- 7 -----------------------------------------------------------------------
struct Trained {
  std::unique_ptr<Model> model;
  ImageDataset test;
};

Outcome trainability(Trained& out) {
  ModelConfig mc;  // 16x16x3, K = M = 32
  mc.seed = 707;
  auto model = build_model(mc);
  const ImageDataset data = gen_toy_shapes(512, 16, 708);
  TrainConfig tc;
  tc.batch_size = 32;
  tc.epochs = 32;
  tc.max_steps = 500;
  tc.seed = 709;
  const TrainResult r = train(*model, data.images, tc);
  const double first = r.history.front().mean.elbo_loss();
  const double last = r.history.back().mean.elbo_loss();

  const ImageDataset test = gen_toy_shapes(64, 16, 710);
  RngStream rng(711);
  const std::vector<double> kl = kl_z_per_dim(*model, test.images, rng);
  double lo = kl.front(), hi = kl.front(), sum = 0.0;
  std::size_t active = 0;
  for (double v : kl) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    sum += v;
    active += v > 0.01;
  }
  const bool kl_nonzero = sum > 0.0 && std::all_of(kl.begin(), kl.end(), [](double v) {
                            return std::isfinite(v);
                          });
  const bool ok = r.steps == 500 && last <= 0.8 * first && kl_nonzero;
  std::string detail = fmt("%.0f steps; first epoch %.2f, final epoch %.2f nats", static_cast<double>(r.steps), first, last) +
                       fmt(" (ratio %.3f); kl_z per dim min %.4f", last / first, lo) +
                       fmt(" mean %.4f max %.4f", sum / static_cast<double>(kl.size()), hi) +
                       fmt(", %.0f/%.0f dims above 0.01 nats", static_cast<double>(active),
                           static_cast<double>(kl.size()));
  out.model = std::move(model);
  out.test = test;
  return {ok, detail};
}

// --- 8 -----------------------------------------------------------------------
Outcome table_arithmetic() {
  const double a = bits_per_dim(5540.0 + 1966.0, 32, 32, 3);
  const double b = bits_per_dim(5107.0 + 1241.0 + 619.0 + 819.0, 32, 32, 3);
  const bool ok = std::abs(a - 3.525) <= 0.001 && std::abs(b - 3.657) <= 0.001;
  return {ok, fmt("VAE %.4f (3.525), srVAE %.4f (3.657) bits/dim", a, b)};
}

// --- 9 -----------------------------------------------------------------------
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "srvae_acceptance_determinism";
  fs::remove_all(root);
  const std::vector<std::string> files{"history.csv", "checkpoint.bin", "config.txt", "samples.ppm",
                                       "samples_y.ppm", "superres.ppm", "reconstruct.ppm",
                                       "genrecon.ppm"};
  for (const std::string run_name : {"a", "b"}) {
    const fs::path dir = root / run_name;
    fs::create_directories(dir);
    const fs::path cfg = dir / "run.cfg";
    std::ofstream(cfg) << "model = srvae\noutput_dir = " << (dir / "out").string()
                       << "\nseed = 909\nheight = 8\nwidth = 8\nchannels = 3\n"
                          "latent_u = 8\nlatent_z = 8\nn_mix = 2\nflow_depth = 2\n"
                          "flow_hidden = 8\nhidden = 4\nbatch_size = 8\nepochs = 3\n"
                          "toy_train_size = 24\ntoy_test_size = 4\n";
    for (const std::string cmd : {"train", "sample", "superres", "reconstruct", "genrecon"}) {
      std::ostringstream o, e;
      if (run({"srvae", cmd, "--config", cfg.string()}, o, e) != 0) {
        return {false, "run " + run_name + ": " + cmd + " failed: " + e.str()};
      }
    }
  }
  std::size_t bytes = 0;
  for (const auto& f : files) {
    const fs::path a = root / "a" / "out" / f, b = root / "b" / "out" / f;
    if (!fs::exists(a) || !fs::exists(b)) return {false, f + " missing"};
    const std::string sa = slurp(a), sb = slurp(b);
    if (f == "config.txt") continue;  // output_dir differs by construction
    if (sa != sb) return {false, f + " differs between runs"};
    bytes += sa.size();
  }
  return {true, fmt("%.0f files, %.0f bytes identical across two runs",
                    static_cast<double>(files.size() - 1), static_cast<double>(bytes))};
}

// --- 10 ----------------------------------------------------------------------
Outcome pipelines(const Trained& t) {
  if (!t.model) return {false, "no trained model (criterion 7 did not run)"};
  const auto* sr = dynamic_cast<const SrvaeModel*>(t.model.get());
  if (!sr) return {false, "trained model is not an srVAE"};
  const ModelConfig& mc = sr->config();
  const std::span<const DiscreteImage> xs(t.test.images.data(), 8);
  auto full = [&](const DiscreteImage& im) {
    return im.height == mc.height && im.width == mc.width && im.channels == mc.channels &&
           im.values.size() == mc.height * mc.width * mc.channels;
  };
  std::vector<std::string> problems;

  RngStream g(1001);
  const auto gen = generate(*sr, g, 8);
  for (const auto& s : gen) {
    if (!full(s.x)) problems.push_back("generate: x extents");
    if (!s.y || s.y->height != mc.height / 2 || s.y->width != mc.width / 2)
      problems.push_back("generate: y extents");
  }

  std::vector<DiscreteImage> ys;
  for (const auto& x : xs) ys.push_back(downscale(x));
  RngStream s(1002);
  const auto up = super_resolve(*sr, ys, s);
  double mae = 0.0;
  for (std::size_t i = 0; i < up.size(); ++i) {
    if (!full(up[i])) problems.push_back("superres: extents");
    if (!downscale(up[i]).same_extents(ys[i])) problems.push_back("superres: downscale extents");
    for (std::size_t k = 0; k < up[i].values.size(); ++k)
      mae += std::abs(int(up[i].values[k]) - int(xs[i].values[k]));
  }
  mae /= static_cast<double>(up.size() * up[0].values.size());

  RngStream r(1003);
  const auto rec = reconstruct(*sr, xs, r);
  for (const auto& im : rec)
    if (!full(im)) problems.push_back("reconstruct: extents");

  RngStream q(1004);
  const auto gr = generative_reconstruct(*sr, xs, q);
  for (std::size_t i = 0; i < gr.x.size(); ++i) {
    if (!full(gr.x[i])) problems.push_back("genrecon: x extents");
    if (!gr.y[i].same_extents(ys[i])) problems.push_back("genrecon: y extents");
  }
  if (gen.size() != 8 || up.size() != 8 || rec.size() != 8 || gr.x.size() != 8)
    problems.push_back("wrong output count");

  std::string detail = fmt("generate/superres/reconstruct/genrecon on 8 images; superres MAE %.2f", mae);
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty(), detail};
}

}  // namespace

// With arguments, only the listed criterion numbers run; 10 also runs 7.
int main(int argc, char** argv) {
  std::set<int> only;
  for (int a = 1; a < argc; ++a) only.insert(std::atoi(argv[a]));
  if (only.count(10)) only.insert(7);
  Trained trained;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"1 ELBO identity", elbo_identity},
      {"2 flow correctness", flow_correctness},
      {"3 likelihood normalization", pmf_normalization},
      {"4 gradient fidelity", gradient_fidelity},
      {"5 oracle NLL", oracle_nll},
      {"6 analytic KL", analytic_kl},
      {"7 trainability", [&] { return trainability(trained); }},
      {"8 arithmetic cross-checks", table_arithmetic},
      {"9 determinism", determinism},
      {"10 pipelines", [&] { return pipelines(trained); }},
  };
  int failed = 0, ran = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && !only.count(std::atoi(name.c_str()))) continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::printf("%s  [%s] %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(),
                secs);
    std::fflush(stdout);
  }
  std::printf("%d of %d criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
