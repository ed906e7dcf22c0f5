#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "srvae/numerics.hpp"

// Reverse-mode differentiation over DenseArray values. Nodes are recorded in
// creation order, which is already a topological order, so backward() is a
// single reverse sweep. Only the operations the models need are provided.
namespace srvae::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const DenseArray& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  Var constant(DenseArray value);
  Var variable(DenseArray value);

  /// Records an op result. The node requires grad iff any parent does; the
  /// backward closure is dropped otherwise.
  Var push(DenseArray value, std::initializer_list<Var> parents, BackwardFn backward);

  const DenseArray& value(std::uint32_t id) const { return nodes_[id].value; }
  const DenseArray& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Gradient of the last backward() root with respect to v. Zero-filled when
  /// v received no contribution.
  DenseArray grad(Var v) const;
  /// Mutable accumulator, allocated on first use.
  DenseArray& grad_mut(std::uint32_t id);
  bool has_grad(std::uint32_t id) const { return !nodes_[id].grad.empty(); }

  /// `root` must hold a single element.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    DenseArray value;
    DenseArray grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var square(Var a);
Var exp(Var a);
Var tanh(Var a);
/// ELU with alpha = 1.
Var elu(Var a);
/// Values outside [lo, hi] are clamped and pass no gradient.
Var clamp(Var a, double lo, double hi);

/// [N, ...] -> [N]
Var sum_rows(Var a);
/// any -> [1]
Var sum_all(Var a);
/// [N] or [1] -> [1]
Var mean_all(Var a);

Var reshape(Var a, Shape shape);

/// x [N, in] * w [in, out] + b [out] -> [N, out]
Var linear(Var x, Var w, Var b);

/// 3x3 convolution with zero padding 1. x [N, C, H, W], w [O, C, 3, 3],
/// b [O]; stride 1 or 2 (H, W even for stride 2).
Var conv3x3(Var x, Var w, Var b, int stride);

/// Nearest-neighbour upsampling by an integer factor on [N, C, H, W].
Var upsample_nearest(Var x, std::size_t factor);
/// Bilinear upsampling by an integer factor with half-pixel centres and edge
/// clamping. A 1x1 input is broadcast.
Var upsample_bilinear(Var x, std::size_t factor);

Var concat_channels(Var a, Var b);
Var slice_channels(Var x, std::size_t begin, std::size_t count);

/// Column subset of a [N, D] matrix.
Var gather_cols(Var x, const std::vector<std::size_t>& cols);
/// Builds [N, width] with a placed at columns ia and b at columns ib.
Var scatter_cols(Var a, const std::vector<std::size_t>& ia, Var b,
                 const std::vector<std::size_t>& ib, std::size_t width);

}  // namespace srvae::ad
