#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "srvae/autodiff.hpp"
#include "srvae/numerics.hpp"

namespace srvae {

struct Parameter {
  std::string name;
  DenseArray value;
};

/// Ordered, named parameter tensors. Components hold indices into one set.
class ParamSet {
 public:
  std::size_t add(std::string name, DenseArray value);

  std::size_t size() const { return entries_.size(); }
  Parameter& operator[](std::size_t i) { return entries_[i]; }
  const Parameter& operator[](std::size_t i) const { return entries_[i]; }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  std::optional<std::size_t> find(const std::string& name) const;

  /// Number of scalars across all tensors.
  std::size_t scalar_count() const;
  DenseArray flatten() const;
  void assign_flat(const DenseArray& flat);

  /// One tape leaf per tensor, in set order. Leaves are trainable variables
  /// when `trainable`, constants otherwise.
  std::vector<ad::Var> bind(ad::Tape& tape, bool trainable = true) const;

  bool operator==(const ParamSet& other) const;

 private:
  std::vector<Parameter> entries_;
};

using Bound = std::span<const ad::Var>;

/// Flattens tape gradients of bound leaves in set order.
DenseArray gather_grads(const ad::Tape& tape, Bound bound);

/// Two-layer perceptron with ELU hidden activation.
struct Mlp {
  std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0;

  static Mlp create(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t hidden,
                    std::size_t out, RngStream& rng, bool zero_final);
  ad::Var forward(Bound p, ad::Var x) const;
};

struct ConvLayer {
  std::size_t weight = 0, bias = 0;
  int stride = 1;
};

/// Stack of 3x3 convolutions with ELU between layers (none after the last).
struct ConvNet {
  std::vector<ConvLayer> layers;
  std::size_t in_channels = 0, out_channels = 0;

  /// max(3, downsample + 1) layers; the final `downsample` layers use stride 2.
  static ConvNet encoder(ParamSet& params, const std::string& prefix, std::size_t in_ch,
                         std::size_t hidden, std::size_t out_ch, std::size_t downsample,
                         RngStream& rng);
  /// Three stride-1 layers.
  static ConvNet decoder(ParamSet& params, const std::string& prefix, std::size_t in_ch,
                         std::size_t hidden, std::size_t out_ch, RngStream& rng);

  ad::Var forward(Bound p, ad::Var x) const;
};

}  // namespace srvae
