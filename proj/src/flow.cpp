#include "srvae/flow.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "srvae/distributions.hpp"

namespace srvae {

FlowPrior FlowPrior::create(ParamSet& params, const std::string& prefix, std::size_t dim,
                            std::size_t depth, std::size_t hidden, RngStream& rng, bool zero_final) {
  if (dim == 0) throw std::invalid_argument("FlowPrior: dim must be positive");
  if (hidden == 0) hidden = 4 * dim;
  FlowPrior flow;
  flow.dim_ = dim;
  for (std::size_t i = 0; i < depth; ++i) {
    CouplingLayer layer;
    layer.mask.assign(dim, 0);
    for (std::size_t j = 0; j < dim; ++j) {
      if (dim > 1 && j % 2 == i % 2) {
        layer.mask[j] = 1;
        layer.pass.push_back(j);
      } else {
        layer.active.push_back(j);
      }
    }
    const std::size_t in = layer.pass.empty() ? 1 : layer.pass.size();
    const std::string name = prefix + ".layer" + std::to_string(i);
    layer.scale_net = Mlp::create(params, name + ".scale", in, hidden, layer.active.size(), rng,
                                  zero_final);
    layer.translate_net = Mlp::create(params, name + ".translate", in, hidden,
                                      layer.active.size(), rng, zero_final);
    flow.layers_.push_back(std::move(layer));
  }
  return flow;
}

ad::Var FlowPrior::conditioner_input(ad::Var v, const CouplingLayer& layer) const {
  if (v.shape().size() != 2 || v.shape()[1] != dim_) {
    throw std::invalid_argument("FlowPrior: expected [N, " + std::to_string(dim_) + "], got " +
                                shape_string(v.shape()));
  }
  if (layer.pass.empty()) return v.tape->constant(DenseArray({v.shape()[0], 1}, 1.0));
  return ad::gather_cols(v, layer.pass);
}

ad::Var FlowPrior::log_scale(Bound p, const CouplingLayer& layer, ad::Var cond) const {
  return ad::scale(ad::tanh(layer.scale_net.forward(p, cond)), kCouplingScaleBound);
}

namespace {
ad::Var assemble(const CouplingLayer& layer, ad::Var v, ad::Var active_out, std::size_t dim) {
  if (layer.pass.empty()) return active_out;
  return ad::scatter_cols(ad::gather_cols(v, layer.pass), layer.pass, active_out, layer.active, dim);
}
}  // namespace

FlowPass FlowPrior::forward_layer(Bound p, std::size_t index, ad::Var v) const {
  const CouplingLayer& layer = layers_.at(index);
  ad::Var cond = conditioner_input(v, layer);
  ad::Var s = log_scale(p, layer, cond);
  ad::Var t = layer.translate_net.forward(p, cond);
  ad::Var x_act = ad::gather_cols(v, layer.active);
  ad::Var y_act = ad::add(ad::mul(x_act, ad::exp(s)), t);
  return {assemble(layer, v, y_act, dim_), ad::sum_rows(s)};
}

FlowPass FlowPrior::inverse_layer(Bound p, std::size_t index, ad::Var v_out) const {
  const CouplingLayer& layer = layers_.at(index);
  ad::Var cond = conditioner_input(v_out, layer);
  ad::Var s = log_scale(p, layer, cond);
  ad::Var t = layer.translate_net.forward(p, cond);
  ad::Var y_act = ad::gather_cols(v_out, layer.active);
  ad::Var x_act = ad::mul(ad::sub(y_act, t), ad::exp(ad::scale(s, -1.0)));
  return {assemble(layer, v_out, x_act, dim_), ad::scale(ad::sum_rows(s), -1.0)};
}

FlowPass FlowPrior::forward(Bound p, ad::Var v) const {
  ad::Var log_det = v.tape->constant(DenseArray({v.shape().at(0)}));
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    FlowPass step = forward_layer(p, i, v);
    v = step.out;
    log_det = ad::add(log_det, step.log_det);
  }
  return {v, log_det};
}

FlowPass FlowPrior::inverse(Bound p, ad::Var u) const {
  std::vector<ad::Var> dets(layers_.size());
  for (std::size_t i = layers_.size(); i-- > 0;) {
    FlowPass step = inverse_layer(p, i, u);
    if (!step.out.value().all_finite() || !step.log_det.value().all_finite()) {
      throw std::runtime_error("flow: non-finite value in coupling layer " + std::to_string(i));
    }
    u = step.out;
    dets[i] = step.log_det;
  }
  // summed in forward layer order so forward and inverse round alike
  ad::Var log_det = u.tape->constant(DenseArray({u.shape().at(0)}));
  for (const ad::Var& d : dets) log_det = ad::add(log_det, d);
  return {u, log_det};
}

ad::Var FlowPrior::log_prob(Bound p, ad::Var u) const {
  FlowPass inv = inverse(p, u);
  return ad::add(ad::std_normal_log_prob(inv.out), inv.log_det);
}

namespace {

DenseArray as_row(const DenseArray& v, std::size_t dim) {
  if (v.size() != dim) {
    throw std::invalid_argument("flow: expected " + std::to_string(dim) + " coordinates, got " +
                                std::to_string(v.size()));
  }
  return v.reshaped({1, dim});
}

}  // namespace

CouplingResult coupling_forward(const FlowPrior& flow, const ParamSet& params, std::size_t layer,
                                const DenseArray& v) {
  ad::Tape tape;
  auto p = params.bind(tape, false);
  FlowPass r = flow.forward_layer(p, layer, tape.constant(as_row(v, flow.dim())));
  return {r.out.value().reshaped({flow.dim()}), r.log_det.value()[0]};
}

CouplingResult coupling_inverse(const FlowPrior& flow, const ParamSet& params, std::size_t layer,
                                const DenseArray& v_out) {
  ad::Tape tape;
  auto p = params.bind(tape, false);
  FlowPass r = flow.inverse_layer(p, layer, tape.constant(as_row(v_out, flow.dim())));
  return {r.out.value().reshaped({flow.dim()}), r.log_det.value()[0]};
}

double flow_log_prob(const FlowPrior& flow, const ParamSet& params, const DenseArray& u) {
  return flow_log_prob_batch(flow, params, as_row(u, flow.dim()))[0];
}

DenseArray flow_sample(const FlowPrior& flow, const ParamSet& params, RngStream& rng) {
  return flow_sample_batch(flow, params, 1, rng).reshaped({flow.dim()});
}

DenseArray flow_log_prob_batch(const FlowPrior& flow, const ParamSet& params, const DenseArray& u) {
  ad::Tape tape;
  auto p = params.bind(tape, false);
  return flow.log_prob(p, tape.constant(u)).value();
}

DenseArray flow_sample_batch(const FlowPrior& flow, const ParamSet& params, std::size_t n,
                             RngStream& rng) {
  ad::Tape tape;
  auto p = params.bind(tape, false);
  DenseArray v = rng.normal_array({n, flow.dim()});
  return flow.forward(p, tape.constant(std::move(v))).out.value();
}

}  // namespace srvae
