#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "srvae/image.hpp"
#include "srvae/models.hpp"
#include "srvae/network.hpp"

namespace srvae {

struct AdaMaxConfig {
  double learning_rate = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
};

inline constexpr double kAdaMaxEpsilon = 1e-8;

/// First moments and infinity-norm accumulators mirroring a ParamSet.
struct AdaMaxState {
  std::vector<DenseArray> m;
  std::vector<DenseArray> u_inf;
  std::uint64_t t = 0;

  static AdaMaxState like(const ParamSet& params);
  bool operator==(const AdaMaxState&) const = default;
};

/// m <- b1 m + (1 - b1) g;  u <- max(b2 u, |g|);
/// theta <- theta - lr / (1 - b1^t) * m / (u + 1e-8), with t incremented first.
/// Shape mismatches and non-finite gradients throw before anything changes.
void adamax_step(ParamSet& params, std::span<const DenseArray> grads, AdaMaxState& state,
                 const AdaMaxConfig& cfg);

struct TrainConfig {
  AdaMaxConfig optimizer;
  std::size_t batch_size = 32;
  std::size_t epochs = 1;
  std::size_t max_steps = 0;  // 0 = no cap; a capped run ends mid-epoch
  std::uint64_t seed = 0;
  double clip_norm = 100.0;
  std::size_t kl_warmup_steps = 0;  // 0 = off; otherwise KL weight ramps 0 -> 1
  std::filesystem::path checkpoint_path;  // empty = no checkpoints
  std::size_t checkpoint_interval = 1;    // in epochs

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t steps = 0;     // optimizer steps taken in this epoch
  ElboTerms mean;            // mean per-example terms over the epoch
  double bits_per_dim = 0.0; // of mean.elbo_loss()
};

struct TrainResult {
  std::vector<EpochRecord> history;
  AdaMaxState state;
  std::size_t steps = 0;
};

/// Minibatch AdaMax on the mean per-example loss re_x + re_y + kl_z + kl_u
/// (analytic kl_z for the srVAE). Epoch e shuffles with
/// RngStream(seed).child("shuffle").child(e) and draws reparameterization
/// noise from RngStream(seed).child("noise").child(e), so the run is a pure
/// function of (model, dataset, cfg). A non-finite loss aborts with
/// std::runtime_error, leaving the last written checkpoint in place.
TrainResult train(Model& model, std::span<const DiscreteImage> dataset, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Fisher-Yates permutation of [0, n) driven by rng.
std::vector<std::size_t> shuffled_indices(std::size_t n, RngStream rng);

// Checkpoints ----------------------------------------------------------------
//
// Layout (all integers little-endian):
//   "SRVAE01\0"
//   u64 metadata length, metadata bytes ("key=value\n" lines, sorted)
//   u64 tensor count, then per tensor:
//     u64 name length, name bytes, u64 rank, rank x u64 extents,
//     prod(extents) x f32 values
//   u32 CRC-32 of every byte between the magic and the CRC
// Tensors are the model parameters followed by "adamax.m/<name>" and
// "adamax.u/<name>" for each parameter.

inline constexpr char kCheckpointMagic[8] = {'S', 'R', 'V', 'A', 'E', '0', '1', '\0'};

using Metadata = std::map<std::string, std::string>;

Metadata model_config_metadata(const ModelConfig& config);
ModelConfig model_config_from_metadata(const Metadata& meta);

void save_checkpoint(const Model& model, const AdaMaxState& state,
                     const std::filesystem::path& path, const Metadata& extra = {});

struct LoadedCheckpoint {
  std::unique_ptr<Model> model;
  AdaMaxState state;
  Metadata metadata;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Rounds every value through float32, matching what a checkpoint stores.
DenseArray to_float32_precision(const DenseArray& a);

}  // namespace srvae
