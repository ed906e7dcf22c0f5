#include "srvae/network.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace srvae {

std::size_t ParamSet::add(std::string name, DenseArray value) {
  if (find(name)) throw std::invalid_argument("ParamSet: duplicate parameter " + name);
  entries_.push_back(Parameter{std::move(name), std::move(value)});
  return entries_.size() - 1;
}

std::optional<std::size_t> ParamSet::find(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return i;
  return std::nullopt;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

DenseArray ParamSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(scalar_count());
  for (const auto& e : entries_) flat.insert(flat.end(), e.value.values().begin(), e.value.values().end());
  const std::size_t n = flat.size();
  return DenseArray({n}, std::move(flat));
}

void ParamSet::assign_flat(const DenseArray& flat) {
  if (flat.size() != scalar_count()) {
    throw std::invalid_argument("ParamSet::assign_flat: expected " + std::to_string(scalar_count()) +
                                " values, got " + std::to_string(flat.size()));
  }
  std::size_t off = 0;
  for (auto& e : entries_) {
    std::copy_n(flat.data() + off, e.value.size(), e.value.data());
    off += e.value.size();
  }
}

std::vector<ad::Var> ParamSet::bind(ad::Tape& tape, bool trainable) const {
  std::vector<ad::Var> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(trainable ? tape.variable(e.value) : tape.constant(e.value));
  return out;
}

bool ParamSet::operator==(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name || !(entries_[i].value == other.entries_[i].value))
      return false;
  }
  return true;
}

DenseArray gather_grads(const ad::Tape& tape, Bound bound) {
  std::vector<double> flat;
  for (const ad::Var& v : bound) {
    DenseArray g = tape.grad(v);
    flat.insert(flat.end(), g.values().begin(), g.values().end());
  }
  const std::size_t n = flat.size();
  return DenseArray({n}, std::move(flat));
}

namespace {

DenseArray he_normal(Shape shape, std::size_t fan_in, double gain, RngStream& rng) {
  DenseArray w(std::move(shape));
  const double sd = std::sqrt(gain / static_cast<double>(fan_in));
  for (double& v : w.values()) v = sd * rng.normal();
  return w;
}

}  // namespace

Mlp Mlp::create(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t hidden,
                std::size_t out, RngStream& rng, bool zero_final) {
  Mlp m;
  m.w1 = params.add(prefix + ".w1", he_normal({in, hidden}, in, 2.0, rng));
  m.b1 = params.add(prefix + ".b1", DenseArray({hidden}));
  m.w2 = params.add(prefix + ".w2", zero_final ? DenseArray({hidden, out})
                                                : he_normal({hidden, out}, hidden, 1.0, rng));
  m.b2 = params.add(prefix + ".b2", DenseArray({out}));
  return m;
}

ad::Var Mlp::forward(Bound p, ad::Var x) const {
  return ad::linear(ad::elu(ad::linear(x, p[w1], p[b1])), p[w2], p[b2]);
}

ConvNet ConvNet::encoder(ParamSet& params, const std::string& prefix, std::size_t in_ch,
                         std::size_t hidden, std::size_t out_ch, std::size_t downsample,
                         RngStream& rng) {
  ConvNet net;
  net.in_channels = in_ch;
  net.out_channels = out_ch;
  const std::size_t depth = std::max<std::size_t>(3, downsample + 1);
  std::size_t c = in_ch;
  for (std::size_t i = 0; i < depth; ++i) {
    const bool last = i + 1 == depth;
    const std::size_t o = last ? out_ch : hidden;
    const std::string name = prefix + ".conv" + std::to_string(i);
    ConvLayer layer;
    layer.weight = params.add(name + ".weight", he_normal({o, c, 3, 3}, c * 9, last ? 1.0 : 2.0, rng));
    layer.bias = params.add(name + ".bias", DenseArray({o}));
    layer.stride = (i + downsample >= depth) ? 2 : 1;
    net.layers.push_back(layer);
    c = o;
  }
  return net;
}

ConvNet ConvNet::decoder(ParamSet& params, const std::string& prefix, std::size_t in_ch,
                         std::size_t hidden, std::size_t out_ch, RngStream& rng) {
  return encoder(params, prefix, in_ch, hidden, out_ch, 0, rng);
}

ad::Var ConvNet::forward(Bound p, ad::Var x) const {
  if (x.shape().size() != 4 || x.shape()[1] != in_channels) {
    throw std::invalid_argument("ConvNet: expected " + std::to_string(in_channels) +
                                " input channels, got " + shape_string(x.shape()));
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = ad::conv3x3(x, p[layers[i].weight], p[layers[i].bias], layers[i].stride);
    if (i + 1 < layers.size()) x = ad::elu(x);
  }
  return x;
}

}  // namespace srvae
