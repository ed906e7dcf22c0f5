#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "srvae/autodiff.hpp"
#include "srvae/network.hpp"
#include "srvae/numerics.hpp"

namespace srvae {

inline constexpr double kCouplingScaleBound = 2.0;

/// Affine coupling: coordinates with mask 1 pass through and condition the
/// log-scale s = 2 tanh(scale_net(.)) and shift t = translate_net(.) applied to
/// the mask-0 coordinates. A one-dimensional flow has no pass-through
/// coordinate; its conditioners then see a constant input and the layer is a
/// learned affine map.
struct CouplingLayer {
  std::vector<std::uint8_t> mask;
  std::vector<std::size_t> pass;
  std::vector<std::size_t> active;
  Mlp scale_net;
  Mlp translate_net;
};

struct FlowPass {
  ad::Var out;
  ad::Var log_det;  // [N]
};

/// Stack of coupling layers over R^dim with a standard-normal base. Masks
/// alternate coordinate parity: layer i passes coordinates j with j % 2 == i % 2.
class FlowPrior {
 public:
  FlowPrior() = default;

  /// hidden == 0 selects 4 * dim. With zero_final the conditioners' output
  /// layers start at zero, so the flow starts as the identity.
  static FlowPrior create(ParamSet& params, const std::string& prefix, std::size_t dim,
                          std::size_t depth, std::size_t hidden, RngStream& rng,
                          bool zero_final = true);

  std::size_t dim() const { return dim_; }
  std::size_t depth() const { return layers_.size(); }
  const std::vector<CouplingLayer>& layers() const { return layers_; }

  /// v [N, dim] -> layer output, log|det J| per row.
  FlowPass forward_layer(Bound p, std::size_t layer, ad::Var v) const;
  FlowPass inverse_layer(Bound p, std::size_t layer, ad::Var v_out) const;

  /// Base sample v -> u through all layers in order.
  FlowPass forward(Bound p, ad::Var v) const;
  /// u -> v through all layers in reverse, with the inverse log-determinant.
  FlowPass inverse(Bound p, ad::Var u) const;

  /// log p(u) = log N(v; 0, I) + inverse log-determinant; [N].
  ad::Var log_prob(Bound p, ad::Var u) const;

 private:
  ad::Var conditioner_input(ad::Var v, const CouplingLayer& layer) const;
  ad::Var log_scale(Bound p, const CouplingLayer& layer, ad::Var cond) const;

  std::size_t dim_ = 0;
  std::vector<CouplingLayer> layers_;
};

struct CouplingResult {
  DenseArray out;
  double log_det = 0.0;
};

// Single-vector conveniences over the graph versions. Inputs are [dim].
CouplingResult coupling_forward(const FlowPrior& flow, const ParamSet& params, std::size_t layer,
                                const DenseArray& v);
CouplingResult coupling_inverse(const FlowPrior& flow, const ParamSet& params, std::size_t layer,
                                const DenseArray& v_out);
double flow_log_prob(const FlowPrior& flow, const ParamSet& params, const DenseArray& u);
DenseArray flow_sample(const FlowPrior& flow, const ParamSet& params, RngStream& rng);

/// Batched: u [N, dim] -> [N] log densities, and n samples as [n, dim].
DenseArray flow_log_prob_batch(const FlowPrior& flow, const ParamSet& params, const DenseArray& u);
DenseArray flow_sample_batch(const FlowPrior& flow, const ParamSet& params, std::size_t n,
                             RngStream& rng);

}  // namespace srvae
