#include "srvae/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "srvae/config.hpp"
#include "srvae/downscale.hpp"
#include "srvae/eval.hpp"

namespace srvae {

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
};

struct Inputs {
  std::vector<std::string> files;
  std::vector<std::size_t> indices;
  std::size_t n = 8;
};

RunConfig prepare(const Common& c) {
  RunConfig cfg = load_run_config(c.config, c.overrides);
  std::filesystem::create_directories(cfg.output_dir);
  std::ofstream echo(cfg.output_dir / "config.txt", std::ios::binary | std::ios::trunc);
  echo << cfg.echo();
  if (!echo) throw std::runtime_error("cannot write config echo in " + cfg.output_dir.string());
  return cfg;
}

LoadedCheckpoint load_for(const RunConfig& cfg, const std::string& checkpoint) {
  const std::filesystem::path path =
      checkpoint.empty() ? cfg.output_dir / "checkpoint.bin" : std::filesystem::path(checkpoint);
  if (!std::filesystem::exists(path)) throw std::runtime_error("missing checkpoint " + path.string());
  return load_checkpoint(path);
}

const SrvaeModel& require_srvae(const Model& m, const char* command) {
  const auto* sr = dynamic_cast<const SrvaeModel*>(&m);
  if (!sr) throw std::runtime_error(std::string(command) + " needs an srvae checkpoint");
  return *sr;
}

std::string history_row(const EpochRecord& r) {
  return std::to_string(r.epoch + 1) + "," + format_double(r.mean.re_x) + "," +
         format_double(r.mean.re_y) + "," + format_double(r.mean.kl_z) + "," +
         format_double(r.mean.kl_u) + "," + format_double(r.mean.elbo_loss()) + "," +
         format_double(r.bits_per_dim) + "\n";
}

/// PPM files (matched to the model's channel count) or test-set indices;
/// without either, the first n test images.
std::vector<DiscreteImage> read_inputs(const RunConfig& cfg, const Inputs& in) {
  std::vector<DiscreteImage> out;
  for (const auto& f : in.files) {
    DiscreteImage im = read_ppm(f);
    if (cfg.model.channels == 1) {
      DiscreteImage gray(im.height, im.width, 1);
      for (std::size_t y = 0; y < im.height; ++y)
        for (std::size_t x = 0; x < im.width; ++x) gray.at(0, y, x) = im.at(0, y, x);
      im = std::move(gray);
    }
    out.push_back(std::move(im));
  }
  if (!in.files.empty()) return out;
  const ImageDataset test = cfg.test_set();
  std::vector<std::size_t> idx = in.indices;
  if (idx.empty())
    for (std::size_t i = 0; i < std::min(in.n, test.size()); ++i) idx.push_back(i);
  for (std::size_t i : idx) {
    if (i >= test.size()) {
      throw std::runtime_error("index " + std::to_string(i) + " beyond test set of " +
                               std::to_string(test.size()));
    }
    out.push_back(test.images[i]);
  }
  return out;
}

void require_extents(const ModelConfig& mc, std::span<const DiscreteImage> xs) {
  for (const auto& x : xs) {
    if (x.height != mc.height || x.width != mc.width || x.channels != mc.channels) {
      throw std::runtime_error("input image is " + std::to_string(x.height) + "x" +
                               std::to_string(x.width) + "x" + std::to_string(x.channels) +
                               ", model expects " + std::to_string(mc.height) + "x" +
                               std::to_string(mc.width) + "x" + std::to_string(mc.channels));
    }
  }
}

int cmd_train(const Common& c, std::ostream& out) {
  const RunConfig cfg = prepare(c);
  const ImageDataset data = cfg.train_set();
  std::unique_ptr<Model> model = build_model(cfg.model);
  const auto history_path = cfg.output_dir / "history.csv";
  std::string csv = "epoch,re_x,re_y,kl_z,kl_u,elbo_loss,bits_per_dim\n";
  auto flush = [&] {
    std::ofstream f(history_path, std::ios::binary | std::ios::trunc);
    f << csv;
    if (!f) throw std::runtime_error("cannot write " + history_path.string());
  };
  flush();
  out << to_string(cfg.model.kind) << ": " << model->params().scalar_count() << " parameters, "
      << data.size() << " training images\n";
  const TrainResult result = train(*model, data.images, cfg.train, [&](const EpochRecord& r) {
    csv += history_row(r);
    flush();
    out << "epoch " << r.epoch + 1 << "  loss " << std::fixed << std::setprecision(3)
        << r.mean.elbo_loss() << "  bits/dim " << std::setprecision(4) << r.bits_per_dim << "\n";
    out.unsetf(std::ios::floatfield);
  });
  out << "trained " << result.steps << " steps; wrote " << cfg.train.checkpoint_path.string()
      << "\n";
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, std::size_t k, std::size_t n,
             bool frechet, std::size_t pool, std::ostream& out) {
  const RunConfig cfg = prepare(c);
  const LoadedCheckpoint ck = load_for(cfg, checkpoint);
  const Model& model = *ck.model;
  const ModelConfig& mc = model.config();
  const ImageDataset test = cfg.test_set();
  require_extents(mc, test.images);
  const std::size_t count = std::min(n, test.size());
  if (count == 0) throw std::runtime_error("eval: no test images");

  ElboTerms mean;
  double sample_loss = 0.0, nll = 0.0;
  const RngStream root = RngStream(cfg.seed).child("eval");
  for (std::size_t i = 0; i < count; ++i) {
    const DiscreteImage& x = test.images[i];
    RngStream a = root.child(i), b = root.child(i), w = root.child(i);
    const ElboTerms t = model_elbo(model, x, a, KlMode::Analytic);
    mean.re_x += t.re_x;
    mean.re_y += t.re_y;
    mean.kl_z += t.kl_z;
    mean.kl_u += t.kl_u;
    sample_loss += model_elbo(model, x, b, KlMode::SampleBased).elbo_loss();
    nll += iw_nll(model, x, k, w);
  }
  const double inv = 1.0 / static_cast<double>(count);
  mean.re_x *= inv;
  mean.re_y *= inv;
  mean.kl_z *= inv;
  mean.kl_u *= inv;
  sample_loss *= inv;
  nll *= inv;
  auto bpd = [&](double v) { return bits_per_dim(v, mc.height, mc.width, mc.channels); };

  out << std::fixed << std::setprecision(6);
  out << "model " << to_string(mc.kind) << ", " << count << " test images\n";
  out << "term                    nats\n";
  out << "re_x        " << std::setw(16) << mean.re_x << "\n";
  out << "re_y        " << std::setw(16) << mean.re_y << "\n";
  out << "kl_z        " << std::setw(16) << mean.kl_z << "\n";
  out << "kl_u        " << std::setw(16) << mean.kl_u << "\n";
  out << "elbo_loss   " << std::setw(16) << mean.elbo_loss() << "   bits/dim " << bpd(mean.elbo_loss())
      << "\n";
  out << "elbo_loss (single draw, sample-based KL) " << sample_loss << "   bits/dim "
      << bpd(sample_loss) << "\n";
  out << "iw_nll (k=" << k << ") " << nll << "   bits/dim " << bpd(nll) << "\n";
  if (frechet) {
    if (count < 2) throw std::runtime_error("eval: pixel-Frechet needs at least 2 images");
    RngStream rng = RngStream(cfg.seed).child("eval_frechet");
    std::vector<DiscreteImage> gen;
    for (auto& s : generate(model, rng, count)) gen.push_back(std::move(s.x));
    const std::span<const DiscreteImage> real(test.images.data(), count);
    const double d = pixel_frechet(PixelStats::from_images(gen, pool),
                                   PixelStats::from_images(real, pool));
    out << "pixel-Fr\xC3\xA9" << "chet (not FID), pool " << pool << ": " << d << "\n";
  }
  out.unsetf(std::ios::floatfield);
  return 0;
}

int cmd_sample(const Common& c, const std::string& checkpoint, std::size_t n, std::size_t cols,
               std::ostream& out) {
  const RunConfig cfg = prepare(c);
  const LoadedCheckpoint ck = load_for(cfg, checkpoint);
  if (n == 0) throw std::runtime_error("sample: --n must be >= 1");
  RngStream rng = RngStream(cfg.seed).child("sample");
  std::vector<DiscreteImage> xs, ys;
  for (auto& s : generate(*ck.model, rng, n)) {
    xs.push_back(std::move(s.x));
    if (s.y) ys.push_back(std::move(*s.y));
  }
  write_ppm_grid(xs, cols, cfg.output_dir / "samples.ppm");
  out << "wrote " << (cfg.output_dir / "samples.ppm").string() << "\n";
  if (!ys.empty()) {
    write_ppm_grid(ys, cols, cfg.output_dir / "samples_y.ppm");
    out << "wrote " << (cfg.output_dir / "samples_y.ppm").string() << "\n";
  }
  return 0;
}

int cmd_superres(const Common& c, const std::string& checkpoint, const Inputs& in,
                 std::ostream& out) {
  const RunConfig cfg = prepare(c);
  const LoadedCheckpoint ck = load_for(cfg, checkpoint);
  const SrvaeModel& model = require_srvae(*ck.model, "superres");
  const ModelConfig& mc = model.config();
  std::vector<DiscreteImage> inputs = read_inputs(cfg, in);
  if (inputs.empty()) throw std::runtime_error("superres: no inputs");
  std::vector<DiscreteImage> ys;
  std::vector<std::optional<DiscreteImage>> truth;
  for (auto& im : inputs) {
    if (im.height == mc.height && im.width == mc.width) {
      ys.push_back(downscale(im));
      truth.emplace_back(im);
    } else {
      ys.push_back(im);
      truth.emplace_back(std::nullopt);
    }
  }
  RngStream rng = RngStream(cfg.seed).child("superres");
  const std::vector<DiscreteImage> xs = super_resolve(model, ys, rng);
  const bool all_truth = std::all_of(truth.begin(), truth.end(), [](auto& t) { return t.has_value(); });
  std::vector<DiscreteImage> tiles;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    tiles.push_back(upscale_nearest(ys[i], 2));
    if (all_truth) tiles.push_back(*truth[i]);
    tiles.push_back(xs[i]);
  }
  const auto path = cfg.output_dir / "superres.ppm";
  write_ppm_grid(tiles, all_truth ? 3 : 2, path);
  out << "wrote " << path.string() << "\n";
  return 0;
}

int cmd_reconstruct(const Common& c, const std::string& checkpoint, const Inputs& in,
                    std::ostream& out) {
  const RunConfig cfg = prepare(c);
  const LoadedCheckpoint ck = load_for(cfg, checkpoint);
  const std::vector<DiscreteImage> xs = read_inputs(cfg, in);
  require_extents(ck.model->config(), xs);
  RngStream rng = RngStream(cfg.seed).child("reconstruct");
  const std::vector<DiscreteImage> rec = reconstruct(*ck.model, xs, rng);
  std::vector<DiscreteImage> tiles;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    tiles.push_back(xs[i]);
    tiles.push_back(rec[i]);
  }
  const auto path = cfg.output_dir / "reconstruct.ppm";
  write_ppm_grid(tiles, 2, path);
  out << "wrote " << path.string() << "\n";
  return 0;
}

int cmd_genrecon(const Common& c, const std::string& checkpoint, const Inputs& in,
                 std::ostream& out) {
  const RunConfig cfg = prepare(c);
  const LoadedCheckpoint ck = load_for(cfg, checkpoint);
  const SrvaeModel& model = require_srvae(*ck.model, "genrecon");
  const std::vector<DiscreteImage> xs = read_inputs(cfg, in);
  require_extents(model.config(), xs);
  RngStream rng = RngStream(cfg.seed).child("genrecon");
  const GenerativeReconstruction g = generative_reconstruct(model, xs, rng);
  std::vector<DiscreteImage> tiles;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    tiles.push_back(xs[i]);
    tiles.push_back(upscale_nearest(g.y[i], 2));
    tiles.push_back(g.x[i]);
  }
  const auto path = cfg.output_dir / "genrecon.ppm";
  write_ppm_grid(tiles, 3, path);
  out << "wrote " << path.string() << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Super-resolution VAE and VAE baseline: training, evaluation and sampling"};
  app.require_subcommand(1);
  const std::string keys = config_key_help();

  Common common;
  std::string checkpoint;
  Inputs inputs;
  std::size_t k = 500, n = 16, cols = 4, pool = 1;
  bool frechet = false;

  auto with_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "config file of key = value lines")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--override", common.overrides, "key=value, applied after the file (repeatable)");
    sub->footer(keys);
    return sub;
  };
  auto with_checkpoint = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", checkpoint, "checkpoint file [default <output_dir>/checkpoint.bin]");
    return sub;
  };
  auto with_inputs = [&](CLI::App* sub) {
    sub->add_option("--input", inputs.files, "PPM input image (repeatable)");
    sub->add_option("--index", inputs.indices, "test-set index (repeatable)");
    sub->add_option("--n", inputs.n, "number of leading test images when no input is given")
        ->capture_default_str();
    return sub;
  };

  auto* train_cmd = with_common(app.add_subcommand("train", "train a model, writing history.csv and checkpoint.bin"));
  auto* eval_cmd = with_checkpoint(with_common(app.add_subcommand("eval", "ELBO terms, bits/dim and importance-weighted NLL on the test set")));
  eval_cmd->add_option("--k", k, "importance samples")->capture_default_str();
  eval_cmd->add_option("--n", n, "test images to evaluate")->capture_default_str();
  eval_cmd->add_flag("--frechet", frechet, "also report pixel-Frechet (not FID) of n samples vs n test images");
  eval_cmd->add_option("--pool", pool, "average-pooling factor before pixel statistics")->capture_default_str();
  auto* sample_cmd = with_checkpoint(with_common(app.add_subcommand("sample", "write samples.ppm (and samples_y.ppm for srvae)")));
  sample_cmd->add_option("--n", n, "number of samples")->capture_default_str();
  sample_cmd->add_option("--cols", cols, "grid columns")->capture_default_str();
  auto* superres_cmd = with_inputs(with_checkpoint(with_common(app.add_subcommand(
      "superres", "super-resolve compressed images: y | ground truth | output"))));
  auto* reconstruct_cmd = with_inputs(with_checkpoint(with_common(
      app.add_subcommand("reconstruct", "reconstruct images: input | output"))));
  auto* genrecon_cmd = with_inputs(with_checkpoint(with_common(app.add_subcommand(
      "genrecon", "generative reconstruction with re-sampled y: input | y | output"))));

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (train_cmd->parsed()) return cmd_train(common, out);
    if (eval_cmd->parsed()) return cmd_eval(common, checkpoint, k, n, frechet, pool, out);
    if (sample_cmd->parsed()) return cmd_sample(common, checkpoint, n, cols, out);
    if (superres_cmd->parsed()) return cmd_superres(common, checkpoint, inputs, out);
    if (reconstruct_cmd->parsed()) return cmd_reconstruct(common, checkpoint, inputs, out);
    if (genrecon_cmd->parsed()) return cmd_genrecon(common, checkpoint, inputs, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace srvae
