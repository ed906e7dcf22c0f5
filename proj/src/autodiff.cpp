#include "srvae/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

namespace srvae::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

Tape& tape_of(Var a) {
  if (!a.tape) throw std::logic_error("ad: unbound Var");
  return *a.tape;
}

void require_same_shape(Var a, Var b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                " vs " + shape_string(b.shape()));
  }
}

void require_rank(Var a, std::size_t rank, const char* op) {
  if (a.shape().size() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got " + shape_string(a.shape()));
  }
}

// Elementwise unary op; dfdx(x, y) is the local derivative given input and output.
template <typename F, typename D>
Var unary(Var a, F f, D dfdx) {
  Tape& t = tape_of(a);
  const DenseArray& av = a.value();
  DenseArray out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  const std::uint32_t ia = a.id;
  return t.push(std::move(out), {a}, [ia, dfdx](Tape& tp, std::uint32_t self) {
    const DenseArray& g = tp.grad_mut(self);
    const DenseArray& x = tp.value(ia);
    const DenseArray& y = tp.value(self);
    DenseArray& ga = tp.grad_mut(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(x[i], y[i]);
  });
}

}  // namespace

const DenseArray& Var::value() const { return tape_of(*this).value(id); }
bool Var::requires_grad() const { return tape_of(*this).requires_grad(id); }

Var Tape::constant(DenseArray value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::variable(DenseArray value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::push(DenseArray value, std::initializer_list<Var> parents, BackwardFn backward) {
  bool rg = false;
  for (const Var& p : parents) rg = rg || nodes_[p.id].requires_grad;
  nodes_.push_back(Node{std::move(value), {}, rg, rg ? std::move(backward) : BackwardFn{}});
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

DenseArray Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.empty()) return DenseArray(n.value.shape());
  return n.grad;
}

DenseArray& Tape::grad_mut(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = DenseArray(n.value.shape());
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.tape != this) throw std::logic_error("Tape::backward: foreign Var");
  if (nodes_[root.id].value.size() != 1) {
    throw std::invalid_argument("Tape::backward: root must be a scalar, got " +
                                shape_string(nodes_[root.id].value.shape()));
  }
  for (auto& n : nodes_) n.grad = DenseArray();
  grad_mut(root.id)[0] = 1.0;
  for (std::int64_t i = root.id; i >= 0; --i) {
    const auto id = static_cast<std::uint32_t>(i);
    Node& n = nodes_[id];
    if (n.backward && !n.grad.empty()) n.backward(*this, id);
  }
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  DenseArray out = a.value();
  const DenseArray& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const auto ia = a.id, ib = b.id;
  return tape_of(a).push(std::move(out), {a, b}, [ia, ib](Tape& t, std::uint32_t self) {
    const DenseArray& g = t.grad_mut(self);
    for (auto id : {ia, ib}) {
      if (!t.requires_grad(id)) continue;
      DenseArray& gp = t.grad_mut(id);
      for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  DenseArray out = a.value();
  const DenseArray& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const auto ia = a.id, ib = b.id;
  return tape_of(a).push(std::move(out), {a, b}, [ia, ib](Tape& t, std::uint32_t self) {
    const DenseArray& g = t.grad_mut(self);
    if (t.requires_grad(ia)) {
      DenseArray& ga = t.grad_mut(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      DenseArray& gb = t.grad_mut(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  DenseArray out = a.value();
  const DenseArray& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const auto ia = a.id, ib = b.id;
  return tape_of(a).push(std::move(out), {a, b}, [ia, ib](Tape& t, std::uint32_t self) {
    const DenseArray& g = t.grad_mut(self);
    const DenseArray& av = t.value(ia);
    const DenseArray& bv = t.value(ib);
    if (t.requires_grad(ia)) {
      DenseArray& ga = t.grad_mut(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      DenseArray& gb = t.grad_mut(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var elu(Var a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : std::expm1(x); },
      [](double x, double y) { return x > 0.0 ? 1.0 : y + 1.0; });
}

Var clamp(Var a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
      [lo, hi](double x, double) { return (x < lo || x > hi) ? 0.0 : 1.0; });
}

Var sum_rows(Var a) {
  const DenseArray& av = a.value();
  if (av.rank() < 1) throw std::invalid_argument("sum_rows: rank 0");
  const std::size_t n = av.extent(0);
  const std::size_t inner = av.size() / n;
  DenseArray out({n});
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < inner; ++j) s += av[r * inner + j];
    out[r] = s;
  }
  const auto ia = a.id;
  return tape_of(a).push(std::move(out), {a}, [ia, inner](Tape& t, std::uint32_t self) {
    const DenseArray& g = t.grad_mut(self);
    DenseArray& ga = t.grad_mut(ia);
    for (std::size_t r = 0; r < g.size(); ++r)
      for (std::size_t j = 0; j < inner; ++j) ga[r * inner + j] += g[r];
  });
}

Var sum_all(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const auto ia = a.id;
  return tape_of(a).push(DenseArray::scalar(s), {a}, [ia](Tape& t, std::uint32_t self) {
    const double g = t.grad_mut(self)[0];
    DenseArray& ga = t.grad_mut(ia);
    for (double& v : ga.values()) v += g;
  });
}

Var mean_all(Var a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size()));
}

Var reshape(Var a, Shape shape) {
  DenseArray out = a.value().reshaped(std::move(shape));
  const auto ia = a.id;
  return tape_of(a).push(std::move(out), {a}, [ia](Tape& t, std::uint32_t self) {
    const DenseArray& g = t.grad_mut(self);
    DenseArray& ga = t.grad_mut(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var linear(Var x, Var w, Var b) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  const std::size_t n = x.shape()[0], in = x.shape()[1], out_dim = w.shape()[1];
  if (w.shape()[0] != in || b.value().size() != out_dim) {
    throw std::invalid_argument("linear: incompatible shapes " + shape_string(x.shape()) + ", " +
                                shape_string(w.shape()) + ", " + shape_string(b.shape()));
  }
  DenseArray out({n, out_dim});
  {
    ConstMapMat xm(x.value().data(), n, in);
    ConstMapMat wm(w.value().data(), in, out_dim);
    MapMat om(out.data(), n, out_dim);
    om.noalias() = xm * wm;
    const double* bv = b.value().data();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < out_dim; ++c) om(r, c) += bv[c];
  }
  const auto ix = x.id, iw = w.id, ib = b.id;
  return tape_of(x).push(
      std::move(out), {x, w, b}, [ix, iw, ib, n, in, out_dim](Tape& t, std::uint32_t self) {
        ConstMapMat g(t.grad_mut(self).data(), n, out_dim);
        if (t.requires_grad(ix)) {
          MapMat gx(t.grad_mut(ix).data(), n, in);
          gx.noalias() += g * ConstMapMat(t.value(iw).data(), in, out_dim).transpose();
        }
        if (t.requires_grad(iw)) {
          MapMat gw(t.grad_mut(iw).data(), in, out_dim);
          gw.noalias() += ConstMapMat(t.value(ix).data(), n, in).transpose() * g;
        }
        if (t.requires_grad(ib)) {
          DenseArray& gb = t.grad_mut(ib);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < out_dim; ++c) gb[c] += g(r, c);
        }
      });
}

Var conv3x3(Var x, Var w, Var b, int stride) {
  require_rank(x, 4, "conv3x3");
  require_rank(w, 4, "conv3x3");
  if (stride != 1 && stride != 2) throw std::invalid_argument("conv3x3: stride must be 1 or 2");
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  const std::size_t n = xs[0], c = xs[1], h = xs[2], wd = xs[3];
  const std::size_t o = ws[0];
  if (ws[1] != c || ws[2] != 3 || ws[3] != 3 || b.value().size() != o) {
    throw std::invalid_argument("conv3x3: weight " + shape_string(ws) + " incompatible with input " +
                                shape_string(xs));
  }
  if (stride == 2 && (h % 2 || wd % 2)) {
    throw std::invalid_argument("conv3x3: stride 2 needs even extents, got " + shape_string(xs));
  }
  const auto s = static_cast<std::size_t>(stride);
  const std::size_t ho = h / s, wo = wd / s, p = ho * wo, rows = c * 9, cols = n * p;

  auto col = std::make_shared<std::vector<double>>(rows * cols, 0.0);
  const double* xv = x.value().data();
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        double* row = col->data() + ((ci * 3 + ky) * 3 + kx) * cols;
        for (std::size_t ni = 0; ni < n; ++ni) {
          const double* plane = xv + (ni * c + ci) * h * wd;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s + ky) - 1;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * s + kx) - 1;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
              row[ni * p + oy * wo + ox] = plane[iy * static_cast<std::ptrdiff_t>(wd) + ix];
            }
          }
        }
      }

  RowMat om(o, cols);
  om.noalias() = ConstMapMat(w.value().data(), o, rows) * ConstMapMat(col->data(), rows, cols);
  DenseArray out({n, o, ho, wo});
  const double* bv = b.value().data();
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t oi = 0; oi < o; ++oi) {
      double* dst = out.data() + (ni * o + oi) * p;
      const double* src = om.data() + oi * cols + ni * p;
      for (std::size_t k = 0; k < p; ++k) dst[k] = src[k] + bv[oi];
    }

  const auto ix_id = x.id, iw = w.id, ib = b.id;
  return tape_of(x).push(
      std::move(out), {x, w, b},
      [=](Tape& t, std::uint32_t self) {
        const DenseArray& g = t.grad_mut(self);
        RowMat gm(o, cols);
        for (std::size_t ni = 0; ni < n; ++ni)
          for (std::size_t oi = 0; oi < o; ++oi) {
            const double* src = g.data() + (ni * o + oi) * p;
            double* dst = gm.data() + oi * cols + ni * p;
            for (std::size_t k = 0; k < p; ++k) dst[k] = src[k];
          }
        if (t.requires_grad(iw)) {
          MapMat gw(t.grad_mut(iw).data(), o, rows);
          gw.noalias() += gm * ConstMapMat(col->data(), rows, cols).transpose();
        }
        if (t.requires_grad(ib)) {
          DenseArray& gb = t.grad_mut(ib);
          for (std::size_t oi = 0; oi < o; ++oi) gb[oi] += gm.row(oi).sum();
        }
        if (t.requires_grad(ix_id)) {
          RowMat dcol(rows, cols);
          dcol.noalias() = ConstMapMat(t.value(iw).data(), o, rows).transpose() * gm;
          double* gx = t.grad_mut(ix_id).data();
          for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t ky = 0; ky < 3; ++ky)
              for (std::size_t kx = 0; kx < 3; ++kx) {
                const double* row = dcol.data() + ((ci * 3 + ky) * 3 + kx) * cols;
                for (std::size_t ni = 0; ni < n; ++ni) {
                  double* plane = gx + (ni * c + ci) * h * wd;
                  for (std::size_t oy = 0; oy < ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s + ky) - 1;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                      const std::ptrdiff_t ixx = static_cast<std::ptrdiff_t>(ox * s + kx) - 1;
                      if (ixx < 0 || ixx >= static_cast<std::ptrdiff_t>(wd)) continue;
                      plane[iy * static_cast<std::ptrdiff_t>(wd) + ixx] +=
                          row[ni * p + oy * wo + ox];
                    }
                  }
                }
              }
        }
      });
}

Var upsample_nearest(Var x, std::size_t factor) {
  require_rank(x, 4, "upsample_nearest");
  if (factor == 0) throw std::invalid_argument("upsample_nearest: zero factor");
  const Shape& xs = x.shape();
  const std::size_t nc = xs[0] * xs[1], h = xs[2], w = xs[3], ho = h * factor, wo = w * factor;
  DenseArray out({xs[0], xs[1], ho, wo});
  const double* xv = x.value().data();
  for (std::size_t k = 0; k < nc; ++k)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox)
        out[(k * ho + oy) * wo + ox] = xv[(k * h + oy / factor) * w + ox / factor];
  const auto ix = x.id;
  return tape_of(x).push(std::move(out), {x}, [=](Tape& t, std::uint32_t self) {
    const DenseArray& g = t.grad_mut(self);
    DenseArray& gx = t.grad_mut(ix);
    for (std::size_t k = 0; k < nc; ++k)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox)
          gx[(k * h + oy / factor) * w + ox / factor] += g[(k * ho + oy) * wo + ox];
  });
}

namespace {
struct Tap {
  std::size_t i0, i1;
  double w0, w1;
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t factor) {
  std::vector<Tap> taps(in * factor);
  for (std::size_t o = 0; o < taps.size(); ++o) {
    double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    const double w1 = src - static_cast<double>(i0);
    taps[o] = Tap{i0, i1, 1.0 - w1, w1};
  }
  return taps;
}
}  // namespace

Var upsample_bilinear(Var x, std::size_t factor) {
  require_rank(x, 4, "upsample_bilinear");
  if (factor == 0) throw std::invalid_argument("upsample_bilinear: zero factor");
  const Shape& xs = x.shape();
  const std::size_t nc = xs[0] * xs[1], h = xs[2], w = xs[3], ho = h * factor, wo = w * factor;
  auto ty = bilinear_taps(h, factor);
  auto tx = bilinear_taps(w, factor);
  DenseArray out({xs[0], xs[1], ho, wo});
  const double* xv = x.value().data();
  for (std::size_t k = 0; k < nc; ++k) {
    const double* plane = xv + k * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      const Tap& a = ty[oy];
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const Tap& b = tx[ox];
        out[(k * ho + oy) * wo + ox] =
            a.w0 * (b.w0 * plane[a.i0 * w + b.i0] + b.w1 * plane[a.i0 * w + b.i1]) +
            a.w1 * (b.w0 * plane[a.i1 * w + b.i0] + b.w1 * plane[a.i1 * w + b.i1]);
      }
    }
  }
  const auto ix = x.id;
  return tape_of(x).push(std::move(out), {x}, [=](Tape& t, std::uint32_t self) {
    const DenseArray& g = t.grad_mut(self);
    double* gx = t.grad_mut(ix).data();
    for (std::size_t k = 0; k < nc; ++k) {
      double* plane = gx + k * h * w;
      for (std::size_t oy = 0; oy < ho; ++oy) {
        const Tap& a = ty[oy];
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const Tap& b = tx[ox];
          const double gv = g[(k * ho + oy) * wo + ox];
          plane[a.i0 * w + b.i0] += gv * a.w0 * b.w0;
          plane[a.i0 * w + b.i1] += gv * a.w0 * b.w1;
          plane[a.i1 * w + b.i0] += gv * a.w1 * b.w0;
          plane[a.i1 * w + b.i1] += gv * a.w1 * b.w1;
        }
      }
    }
  });
}

Var concat_channels(Var a, Var b) {
  require_rank(a, 4, "concat_channels");
  require_rank(b, 4, "concat_channels");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3]) {
    throw std::invalid_argument("concat_channels: " + shape_string(as) + " vs " + shape_string(bs));
  }
  const std::size_t n = as[0], ca = as[1], cb = bs[1], p = as[2] * as[3];
  DenseArray out({n, ca + cb, as[2], as[3]});
  const double* av = a.value().data();
  const double* bv = b.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(av + i * ca * p, ca * p, out.data() + i * (ca + cb) * p);
    std::copy_n(bv + i * cb * p, cb * p, out.data() + (i * (ca + cb) + ca) * p);
  }
  const auto ia = a.id, ib = b.id;
  return tape_of(a).push(std::move(out), {a, b}, [=](Tape& t, std::uint32_t self) {
    const DenseArray& g = t.grad_mut(self);
    if (t.requires_grad(ia)) {
      DenseArray& ga = t.grad_mut(ia);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < ca * p; ++k) ga[i * ca * p + k] += g[i * (ca + cb) * p + k];
    }
    if (t.requires_grad(ib)) {
      DenseArray& gb = t.grad_mut(ib);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < cb * p; ++k)
          gb[i * cb * p + k] += g[(i * (ca + cb) + ca) * p + k];
    }
  });
}

Var slice_channels(Var x, std::size_t begin, std::size_t count) {
  require_rank(x, 4, "slice_channels");
  const Shape& xs = x.shape();
  if (count == 0 || begin + count > xs[1]) {
    throw std::invalid_argument("slice_channels: range out of bounds for " + shape_string(xs));
  }
  const std::size_t n = xs[0], c = xs[1], p = xs[2] * xs[3];
  DenseArray out({n, count, xs[2], xs[3]});
  const double* xv = x.value().data();
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(xv + (i * c + begin) * p, count * p, out.data() + i * count * p);
  const auto ix = x.id;
  return tape_of(x).push(std::move(out), {x}, [=](Tape& t, std::uint32_t self) {
    const DenseArray& g = t.grad_mut(self);
    DenseArray& gx = t.grad_mut(ix);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < count * p; ++k) gx[(i * c + begin) * p + k] += g[i * count * p + k];
  });
}

Var gather_cols(Var x, const std::vector<std::size_t>& cols) {
  require_rank(x, 2, "gather_cols");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  for (auto c : cols)
    if (c >= d) throw std::invalid_argument("gather_cols: column out of range");
  DenseArray out({n, cols.size()});
  const double* xv = x.value().data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < cols.size(); ++j) out[r * cols.size() + j] = xv[r * d + cols[j]];
  const auto ix = x.id;
  return tape_of(x).push(std::move(out), {x}, [ix, cols, n, d](Tape& t, std::uint32_t self) {
    const DenseArray& g = t.grad_mut(self);
    DenseArray& gx = t.grad_mut(ix);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < cols.size(); ++j) gx[r * d + cols[j]] += g[r * cols.size() + j];
  });
}

Var scatter_cols(Var a, const std::vector<std::size_t>& ia, Var b,
                 const std::vector<std::size_t>& ib, std::size_t width) {
  require_rank(a, 2, "scatter_cols");
  require_rank(b, 2, "scatter_cols");
  const std::size_t n = a.shape()[0];
  if (b.shape()[0] != n || a.shape()[1] != ia.size() || b.shape()[1] != ib.size() ||
      ia.size() + ib.size() != width) {
    throw std::invalid_argument("scatter_cols: inconsistent column sets");
  }
  DenseArray out({n, width});
  const double* av = a.value().data();
  const double* bv = b.value().data();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < ia.size(); ++j) out[r * width + ia[j]] = av[r * ia.size() + j];
    for (std::size_t j = 0; j < ib.size(); ++j) out[r * width + ib[j]] = bv[r * ib.size() + j];
  }
  const auto ida = a.id, idb = b.id;
  return tape_of(a).push(std::move(out), {a, b}, [=](Tape& t, std::uint32_t self) {
    const DenseArray& g = t.grad_mut(self);
    if (t.requires_grad(ida)) {
      DenseArray& ga = t.grad_mut(ida);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < ia.size(); ++j) ga[r * ia.size() + j] += g[r * width + ia[j]];
    }
    if (t.requires_grad(idb)) {
      DenseArray& gb = t.grad_mut(idb);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < ib.size(); ++j) gb[r * ib.size() + j] += g[r * width + ib[j]];
    }
  });
}

}  // namespace srvae::ad
