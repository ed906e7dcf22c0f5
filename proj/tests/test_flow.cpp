#include <doctest.h>

#include <cmath>
#include <numbers>

#include "srvae/distributions.hpp"
#include "srvae/flow.hpp"
#include "support.hpp"

using namespace srvae;

namespace {

struct RandomFlow {
  ParamSet params;
  FlowPrior flow;
};

// Zero-initialized output layers plus jitter keep the composed scales moderate;
// fully random conditioners push values past 1e9, where 1e-8 round trips are
// below double resolution.
RandomFlow random_flow(std::size_t dim, std::size_t depth, std::uint64_t seed, double jitter = 0.03) {
  RandomFlow r;
  RngStream rng(seed);
  r.flow = FlowPrior::create(r.params, "f", dim, depth, 0, rng, true);
  testing::perturb(r.params, rng, jitter);
  return r;
}

double trapezoid_1d(const std::function<double(double)>& f, double lo, double hi, int points) {
  const double h = (hi - lo) / (points - 1);
  double s = 0.0;
  for (int i = 0; i < points; ++i) s += (i == 0 || i == points - 1 ? 0.5 : 1.0) * f(lo + i * h);
  return s * h;
}

}  // namespace

TEST_CASE("zero-initialized coupling layers are the identity") {
  ParamSet params;
  RngStream rng(1);
  const FlowPrior flow = FlowPrior::create(params, "f", 6, 4, 0, rng, true);
  RngStream r(2);
  const DenseArray v = testing::random_array({6}, r);
  for (std::size_t l = 0; l < flow.depth(); ++l) {
    const auto fw = coupling_forward(flow, params, l, v);
    CHECK(fw.out == v);
    CHECK(fw.log_det == 0.0);
    const auto inv = coupling_inverse(flow, params, l, v);
    CHECK(inv.out == v);
    CHECK(inv.log_det == 0.0);
  }
  CHECK(flow_log_prob(flow, params, v) == doctest::Approx(std_normal_log_prob(v.values())));
}

TEST_CASE("masks alternate parity and pass-through coordinates are copied") {
  const auto r = random_flow(7, 4, 3, 0.5);
  RngStream rng(4);
  for (std::size_t l = 0; l < r.flow.depth(); ++l) {
    const auto& layer = r.flow.layers()[l];
    for (std::size_t j = 0; j < 7; ++j) CHECK(layer.mask[j] == (j % 2 == l % 2 ? 1 : 0));
    const DenseArray v = testing::random_array({7}, rng);
    const auto fw = coupling_forward(r.flow, r.params, l, v);
    for (std::size_t j : layer.pass) CHECK(fw.out[j] == v[j]);
  }
}

TEST_CASE("log-det equals the sum of bounded log-scales") {
  const auto r = random_flow(5, 3, 5, 3.0);
  RngStream rng(6);
  for (int t = 0; t < 50; ++t) {
    const DenseArray v = testing::random_array({5}, rng, 2.0);
    for (std::size_t l = 0; l < r.flow.depth(); ++l) {
      const auto fw = coupling_forward(r.flow, r.params, l, v);
      const auto& active = r.flow.layers()[l].active;
      double sum = 0.0;
      for (std::size_t j : active) {
        // recover s from the affine map: out = v e^s + t, with t read at v = 0
        DenseArray v0 = v;
        v0[j] = 0.0;
        const double shift = coupling_forward(r.flow, r.params, l, v0).out[j];
        if (std::abs(v[j]) < 1e-3) continue;
        const double s = std::log((fw.out[j] - shift) / v[j]);
        CHECK(std::abs(s) <= kCouplingScaleBound + 1e-12);
        sum += s;
      }
      bool skipped = false;
      for (std::size_t j : active) skipped |= std::abs(v[j]) < 1e-3;
      if (!skipped) CHECK(fw.log_det == doctest::Approx(sum).epsilon(1e-9));
    }
  }
}

TEST_CASE("flow round trips and log-det antisymmetry on random flows") {
  RngStream gen(7);
  for (int t = 0; t < 40; ++t) {
    const std::size_t dim = 1 + gen.below(64), depth = gen.below(9);
    RandomFlow r;
    RngStream init(100 + t);
    r.flow = FlowPrior::create(r.params, "f", dim, depth, 0, init, true);
    testing::perturb_scaled(r.params, init, 0.3);
    const std::size_t n = 3;
    const DenseArray u = testing::random_array({n, dim}, gen, 1.5);
    ad::Tape tape;
    auto p = r.params.bind(tape, false);
    const auto inv = r.flow.inverse(p, tape.constant(u));
    const auto back = r.flow.forward(p, inv.out);
    const auto fw = r.flow.forward(p, tape.constant(u));
    const auto again = r.flow.inverse(p, fw.out);
    double err = 0.0, det = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
      err = std::max(err, std::abs(back.out.value()[i] - u[i]));
      err = std::max(err, std::abs(again.out.value()[i] - u[i]));
    }
    for (std::size_t i = 0; i < n; ++i) {
      det = std::max(det, std::abs(fw.log_det.value()[i] + again.log_det.value()[i]));
      det = std::max(det, std::abs(inv.log_det.value()[i] + back.log_det.value()[i]));
    }
    CHECK(err < 1e-8);
    CHECK(det < 1e-10);
  }
}

TEST_CASE("flow_log_prob with no layers is the base density") {
  ParamSet params;
  RngStream rng(8);
  const FlowPrior flow = FlowPrior::create(params, "f", 4, 0, 0, rng);
  CHECK(flow_log_prob(flow, params, DenseArray({4})) ==
        doctest::Approx(-2.0 * std::log(2.0 * std::numbers::pi)).epsilon(1e-14));
  for (int t = 0; t < 20; ++t) {
    const DenseArray u = testing::random_array({4}, rng);
    CHECK(flow_log_prob(flow, params, u) == doctest::Approx(std_normal_log_prob(u.values())));
  }
  RngStream a(9), b(9);
  CHECK(flow_sample(flow, params, a) == b.normal_array({4}));
}

TEST_CASE("flow_log_prob is the change of variables through the inverse") {
  const auto r = random_flow(6, 5, 10);
  RngStream rng(11);
  for (int t = 0; t < 20; ++t) {
    DenseArray u = testing::random_array({6}, rng);
    DenseArray v = u;
    double log_det = 0.0;
    for (std::size_t l = r.flow.depth(); l-- > 0;) {
      const auto inv = coupling_inverse(r.flow, r.params, l, v);
      v = inv.out;
      log_det += inv.log_det;
    }
    CHECK(flow_log_prob(r.flow, r.params, u) ==
          doctest::Approx(std_normal_log_prob(v.values()) + log_det).epsilon(1e-12));
  }
}

TEST_CASE("one-dimensional flow density integrates to one") {
  for (std::uint64_t seed : {20, 21, 22, 23, 24}) {
    const auto r = random_flow(1, 4, seed, 0.3);
    // in 1-D every layer is an increasing affine map, so the image of the
    // base interval [-8, 8] holds all but ~1e-15 of the mass
    auto push = [&](double v) {
      DenseArray a({1}, {v});
      for (std::size_t l = 0; l < r.flow.depth(); ++l) a = coupling_forward(r.flow, r.params, l, a).out;
      return a[0];
    };
    const double mass = trapezoid_1d(
        [&](double u) { return std::exp(flow_log_prob(r.flow, r.params, DenseArray({1}, {u}))); },
        push(-8.0), push(8.0), 4001);
    CHECK(std::abs(mass - 1.0) < 1e-3);
  }
}

TEST_CASE("two-dimensional flow: quadrature normalization and sample moments") {
  const auto r = random_flow(2, 6, 30, 0.02);
  const int pts = 301;
  const double lo = -8.0, hi = 8.0, h = (hi - lo) / (pts - 1);
  DenseArray grid({static_cast<std::size_t>(pts * pts), 2});
  for (int i = 0; i < pts; ++i)
    for (int j = 0; j < pts; ++j) {
      grid[2 * (i * pts + j)] = lo + i * h;
      grid[2 * (i * pts + j) + 1] = lo + j * h;
    }
  const DenseArray lp = flow_log_prob_batch(r.flow, r.params, grid);
  double mass = 0.0, m0 = 0.0, m1 = 0.0, s00 = 0.0, s11 = 0.0, s01 = 0.0;
  for (int i = 0; i < pts; ++i)
    for (int j = 0; j < pts; ++j) {
      const double wt = (i == 0 || i == pts - 1 ? 0.5 : 1.0) * (j == 0 || j == pts - 1 ? 0.5 : 1.0);
      const double p = wt * std::exp(lp[i * pts + j]) * h * h;
      const double a = lo + i * h, b = lo + j * h;
      mass += p;
      m0 += p * a;
      m1 += p * b;
      s00 += p * a * a;
      s11 += p * b * b;
      s01 += p * a * b;
    }
  CHECK(std::abs(mass - 1.0) < 1e-3);
  const double c00 = s00 - m0 * m0, c11 = s11 - m1 * m1, c01 = s01 - m0 * m1;

  RngStream rng(31);
  const std::size_t n = 100000;
  const DenseArray s = flow_sample_batch(r.flow, r.params, n, rng);
  std::vector<double> x0(n), x1(n), q00(n), q11(n), q01(n);
  for (std::size_t k = 0; k < n; ++k) {
    x0[k] = s[2 * k];
    x1[k] = s[2 * k + 1];
    q00[k] = (x0[k] - m0) * (x0[k] - m0);
    q11[k] = (x1[k] - m1) * (x1[k] - m1);
    q01[k] = (x0[k] - m0) * (x1[k] - m1);
  }
  CHECK(std::abs(testing::mean_of(x0) - m0) < 3.0 * testing::std_error_of(x0));
  CHECK(std::abs(testing::mean_of(x1) - m1) < 3.0 * testing::std_error_of(x1));
  CHECK(std::abs(testing::mean_of(q00) - c00) < 3.0 * testing::std_error_of(q00));
  CHECK(std::abs(testing::mean_of(q11) - c11) < 3.0 * testing::std_error_of(q11));
  CHECK(std::abs(testing::mean_of(q01) - c01) < 3.0 * testing::std_error_of(q01));
}

TEST_CASE("flow samples have finite density") {
  const auto r = random_flow(5, 4, 40);
  RngStream rng(41);
  const DenseArray s = flow_sample_batch(r.flow, r.params, 1000, rng);
  const DenseArray lp = flow_log_prob_batch(r.flow, r.params, s);
  CHECK(lp.all_finite());
}

TEST_CASE("flow_log_prob gradient passes grad_check") {
  const auto r = random_flow(4, 3, 50);
  RngStream rng(51);
  const DenseArray u = testing::random_array({3, 4}, rng);
  ParamSet work = r.params;
  ObjectiveFn f = [&](const DenseArray& flat, DenseArray* g) {
    work.assign_flat(flat);
    ad::Tape tape;
    auto p = work.bind(tape, true);
    ad::Var uv = tape.variable(u);
    ad::Var loss = ad::sum_all(r.flow.log_prob(p, uv));
    if (g) {
      tape.backward(loss);
      *g = gather_grads(tape, p);
    }
    return loss.value()[0];
  };
  CHECK(grad_check(f, r.params.flatten(), 1e-4) < 1e-5);

  // gradient with respect to u
  ObjectiveFn fu = [&](const DenseArray& x, DenseArray* g) {
    ad::Tape tape;
    auto p = r.params.bind(tape, false);
    ad::Var uv = tape.variable(x);
    ad::Var loss = ad::sum_all(r.flow.log_prob(p, uv));
    if (g) {
      tape.backward(loss);
      *g = tape.grad(uv);
    }
    return loss.value()[0];
  };
  CHECK(grad_check(fu, u, 1e-4) < 1e-5);
}

TEST_CASE("non-finite values in the inverse name the layer") {
  auto r = random_flow(3, 2, 60);
  ad::Tape tape;
  auto p = r.params.bind(tape, false);
  DenseArray u({1, 3}, {1.0, std::nan(""), 0.5});
  try {
    r.flow.inverse(p, tape.constant(u));
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("layer") != std::string::npos);
  }
}
