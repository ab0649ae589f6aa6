#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "sosuq/errors.hpp"
#include "sosuq/forward_model.hpp"
#include "sosuq/geometry.hpp"
#include "sosuq/grid.hpp"
#include "sosuq/phantom.hpp"
#include "sosuq/rng.hpp"
#include "sosuq/varnet.hpp"

using namespace sosuq;

namespace {

struct Setup {
  GridSpec grid;
  ForwardModel model;
  MeasurementSet d;
};

Setup make_setup(uint64_t seed = 11) {
  GridSpec g = make_grid(12, 10, 3e-4, 3e-4);
  AcquisitionGeometry geom = default_geometry(g, 4, 1, 22.0, 4, 4);
  ForwardModel fm = build_operator(g, geom, 1540.0);
  PhantomConfig pc;
  auto [truth, mask] = sample_phantom(seed, pc, g);
  MeasurementSet d = simulate_measurements(fm, to_slowness(truth), 1e-9, seed);
  return {g, std::move(fm), std::move(d)};
}

VnParams small_net(const ForwardModel& fm, int layers = 4, int filters = 3,
                   int o = 3, int knots = 7, uint64_t seed = 5) {
  return init_vn_params(fm, layers, filters, o, knots, 1.0, 1e4, 1e7, seed);
}

} // namespace

TEST_CASE("parameter layout, flatten, and unflatten round-trip") {
  Setup s = make_setup();
  VnParams p = small_net(s.model);
  const ParamLayout lay = layout_of(p);

  const size_t taps = 9, npix = 120, nlat = 16, nk = 7;
  const size_t per_layer = 3 * (taps + npix + nk) + nlat + nk;
  CHECK(lay.total == 4 * per_layer);
  CHECK(lay.n_filters == 3);
  CHECK(lay.kernel_taps == 9);
  CHECK(lay.npix == 120);
  CHECK(lay.n_knots == 7);
  CHECK(lay.n_lattice == 16);
  REQUIRE(lay.layers.size() == 4);
  for (size_t k = 0; k < 4; ++k) {
    const auto& L = lay.layers[k];
    CHECK(L.filters == k * per_layer);
    CHECK(L.reg_weights == L.filters + 3 * taps);
    CHECK(L.phi == L.reg_weights + 3 * npix);
    CHECK(L.data_weights == L.phi + 3 * nk);
    CHECK(L.psi == L.data_weights + nlat);
  }

  CHECK(lay.kind_of(lay.layers[1].filters) == ParamLayout::Kind::filter);
  CHECK(lay.kind_of(lay.layers[1].reg_weights) == ParamLayout::Kind::reg_weight);
  CHECK(lay.kind_of(lay.layers[1].phi) == ParamLayout::Kind::phi);
  CHECK(lay.kind_of(lay.layers[1].data_weights) == ParamLayout::Kind::data_weight);
  CHECK(lay.kind_of(lay.layers[1].psi) == ParamLayout::Kind::psi);
  CHECK(lay.kind_of(lay.total - 1) == ParamLayout::Kind::psi);
  CHECK_THROWS_AS(lay.kind_of(lay.total), ConfigError);

  // Random content survives the round trip bit for bit.
  Rng r(2);
  std::vector<double> flat(lay.total);
  for (double& v : flat) v = r.uniform(-1.0, 1.0);
  VnParams q = p;
  unflatten(q, flat);
  std::vector<double> back;
  flatten(q, back);
  CHECK(back == flat);
}

TEST_CASE("shape validation rejects inconsistent parameters") {
  Setup s = make_setup();
  VnParams p = small_net(s.model);
  CHECK_NOTHROW(p.validate());
  CHECK_NOTHROW(p.validate_against(s.model));

  VnParams bad = p;
  bad.layers[0].filters.pop_back();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = p;
  bad.layers[1].filters[0].resize(4);
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = p;
  bad.layers[2].data_weights.clear();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = p;
  bad.slowness_scale = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = p;
  bad.grid = make_grid(5, 5, 3e-4, 3e-4);
  CHECK_THROWS_AS(bad.validate_against(s.model), ConfigError);
}

TEST_CASE("a silent network returns the exact background") {
  Setup s = make_setup();
  VnParams p = small_net(s.model);
  for (auto& layer : p.layers) {
    layer.data_activation.set_zero();
    for (auto& phi : layer.reg_activations) phi.set_zero();
  }
  VnTrajectory traj;
  SosMap c = vn_forward(p, s.model, s.d, {}, &traj);
  REQUIRE(traj.states.size() == 4);
  for (const auto& st : traj.states)
    for (double v : st) CHECK(v == 0.0);
  for (double v : c.values) CHECK(v == doctest::Approx(1540.0).epsilon(1e-14));
}

TEST_CASE("with identity psi and silent prior the unrolling is gradient descent") {
  Setup s = make_setup();
  VnParams p = small_net(s.model, 5);
  for (auto& layer : p.layers)
    for (auto& phi : layer.reg_activations) phi.set_zero();

  VnTrajectory traj;
  SosMap c = vn_forward(p, s.model, s.d, {}, &traj);
  REQUIRE(traj.states.size() == 5);

  // Manual descent on 1/2 || s . (L' x - d') ||^2 in normalized units.
  const double lscale = p.delay_scale / p.slowness_scale;
  const int npix = s.grid.npix();
  const int nmeas = s.model.geom.n_meas();
  const int npts = s.model.geom.lattice.npix();
  std::vector<double> x(npix, 0.0), r(nmeas), b(nmeas), g(npix);
  for (int k = 0; k < 5; ++k) {
    s.model.L.matvec(x.data(), r.data(), false);
    for (int i = 0; i < nmeas; ++i)
      r[i] = lscale * r[i] - p.delay_scale * s.d.values[i];
    for (int i = 0; i < nmeas; ++i) {
      const double sw = p.layers[k].data_weights[i % npts];
      b[i] = sw * (sw * r[i]);
    }
    s.model.Lt.matvec(b.data(), g.data(), false);
    for (int i = 0; i < npix; ++i) x[i] -= lscale * g[i];

    const auto& st = traj.states[k];
    for (int i = 0; i < npix; ++i)
      CHECK(st[i] == doctest::Approx(x[i]).epsilon(1e-9).scale(1e-6));
  }
  SosMap manual = denormalize_state(p, traj.states.back());
  for (int i = 0; i < npix; ++i) CHECK(c.values[i] == manual.values[i]);
}

TEST_CASE("deeply supervised loss matches its definition") {
  VnTrajectory traj;
  Rng r(3);
  const size_t n = 17;
  for (int k = 0; k < 3; ++k) {
    std::vector<double> st(n);
    for (double& v : st) v = r.uniform(-2.0, 2.0);
    traj.states.push_back(std::move(st));
  }
  std::vector<double> xs(n);
  for (double& v : xs) v = r.uniform(-2.0, 2.0);

  const double tau = 5.0;
  double want = 0.0;
  for (int k = 1; k <= 3; ++k) {
    double l1 = 0.0;
    for (size_t i = 0; i < n; ++i)
      l1 += std::abs(traj.states[k - 1][i] - xs[i]);
    want += std::exp(-tau * (3 - k)) * l1;
  }
  CHECK(vn_data_loss(traj, xs, tau) == doctest::Approx(want).epsilon(1e-14));

  VnTrajectory empty;
  CHECK_THROWS_AS(vn_data_loss(empty, xs, tau), ConfigError);
  std::vector<double> wrong(n + 1, 0.0);
  CHECK_THROWS_AS(vn_data_loss(traj, wrong, tau), ConfigError);
}

TEST_CASE("target normalization and state denormalization invert each other") {
  Setup s = make_setup();
  VnParams p = small_net(s.model);

  SlownessMap xs(s.grid, 0.0);
  Rng r(6);
  for (double& v : xs.values) v = 1.0 / r.uniform(1450.0, 1620.0);

  std::vector<double> norm = normalize_target(p, xs);
  for (size_t i = 0; i < norm.size(); ++i)
    CHECK(norm[i] ==
          doctest::Approx(p.slowness_scale * (xs.values[i] - 1.0 / 1540.0)));

  SosMap c = denormalize_state(p, norm);
  SosMap direct = to_sos(xs);
  for (size_t i = 0; i < c.values.size(); ++i)
    CHECK(c.values[i] == doctest::Approx(direct.values[i]).epsilon(1e-12));

  std::vector<double> poison(norm.size(), -p.slowness_scale / 1540.0 * 1.01);
  CHECK_THROWS_AS(denormalize_state(p, poison), NumericError);

  SlownessMap off(make_grid(3, 3, 1e-3, 1e-3), 1.0 / 1540.0);
  CHECK_THROWS_AS(normalize_target(p, off), ConfigError);
}

TEST_CASE("knot smoothing penalty and gradient match the definition") {
  Setup s = make_setup();
  VnParams p = small_net(s.model);
  Rng r(7);
  for (auto& layer : p.layers) {
    for (auto& phi : layer.reg_activations)
      for (double& y : phi.ordinates()) y = r.uniform(-1.0, 1.0);
    for (double& y : layer.data_activation.ordinates()) y = r.uniform(-1.0, 1.0);
  }

  const double eps = 1e-8;
  double want = 0.0;
  auto acc = [&](const KnotFunction& f) {
    const auto& y = f.ordinates();
    for (size_t j = 1; j + 1 < y.size(); ++j) {
      const double t = y[j - 1] - 2.0 * y[j] + y[j + 1];
      want += std::sqrt(t * t + eps);
    }
  };
  for (const auto& layer : p.layers) {
    for (const auto& phi : layer.reg_activations) acc(phi);
    acc(layer.data_activation);
  }
  CHECK(knot_smoothing(p, eps) == doctest::Approx(want).epsilon(1e-13));

  // Gradient against central differences on a sample of knot coordinates.
  const ParamLayout lay = layout_of(p);
  const double lam = 3.0;
  std::vector<double> grad(lay.total, 0.0);
  knot_smoothing_grad(p, lam, eps, grad);

  std::vector<double> flat;
  flatten(p, flat);
  int checked = 0;
  for (size_t i = 0; i < lay.total; ++i) {
    const auto kind = lay.kind_of(i);
    const bool is_knot =
        kind == ParamLayout::Kind::phi || kind == ParamLayout::Kind::psi;
    if (!is_knot) {
      if (i % 97 == 0) CHECK(grad[i] == 0.0);  // penalty touches knots only
      continue;
    }
    if (checked >= 30) continue;
    ++checked;
    const double h = 1e-6;
    VnParams q = p;
    std::vector<double> fp = flat, fm = flat;
    fp[i] += h;
    fm[i] -= h;
    unflatten(q, fp);
    const double up = knot_smoothing(q, eps);
    unflatten(q, fm);
    const double dn = knot_smoothing(q, eps);
    CHECK(grad[i] == doctest::Approx(lam * (up - dn) / (2 * h))
                         .epsilon(1e-5)
                         .scale(1e-3));
  }
  CHECK(checked == 30);
}

TEST_CASE("fresh networks start as a convergent weighted Landweber scheme") {
  Setup s = make_setup();
  VnParams p = init_vn_params(s.model, 3, 4, 5, 9, 1.25, 1e4, 1e7, 77, 2e-2, 0.3);
  CHECK(p.train_seed == 77);
  CHECK(p.train_iterations == 0);
  CHECK(p.anchor() == 2);

  const double sigma = (1e7 / 1e4) * operator_norm_estimate(s.model);
  const double s0 = std::sqrt(0.9) / sigma;

  double sum = 0.0, sum2 = 0.0;
  int nf = 0;
  for (const auto& layer : p.layers) {
    for (const auto& w : layer.data_weights)
      CHECK(w == doctest::Approx(s0).epsilon(1e-14));
    for (const auto& phi : layer.reg_activations)
      for (double y : phi.ordinates()) CHECK(y == 0.0);
    for (int j = 0; j < 9; ++j)
      CHECK(layer.data_activation.ordinates()[j] ==
            doctest::Approx(layer.data_activation.abscissa(j)));
    for (const auto& w : layer.reg_weights)
      for (double v : w) CHECK(v == 0.3);
    for (const auto& f : layer.filters)
      for (double v : f) {
        sum += v;
        sum2 += v * v;
        ++nf;
      }
  }
  const double mean = sum / nf;
  const double sd = std::sqrt(sum2 / nf - mean * mean);
  CHECK(std::abs(mean) < 5e-3);
  CHECK(sd == doctest::Approx(2e-2).epsilon(0.25));

  VnParams q = init_vn_params(s.model, 3, 4, 5, 9, 1.25, 1e4, 1e7, 77, 2e-2, 0.3);
  CHECK(q.layers[2].filters[3] == p.layers[2].filters[3]);
  VnParams u = init_vn_params(s.model, 3, 4, 5, 9, 1.25, 1e4, 1e7, 78, 2e-2, 0.3);
  CHECK(u.layers[0].filters[0] != p.layers[0].filters[0]);
}

TEST_CASE("masking and overriding the filter bank") {
  Setup s = make_setup();
  VnParams p = small_net(s.model);
  Rng r(9);
  for (auto& layer : p.layers)
    for (auto& phi : layer.reg_activations) {
      phi.set_identity();
      for (double& y : phi.ordinates()) y += 0.05 * r.uniform(-1.0, 1.0);
    }

  SosMap base = vn_forward(p, s.model, s.d);

  // Explicit all-ones masks change nothing.
  std::vector<std::vector<uint8_t>> ones(4, std::vector<uint8_t>(3, 1));
  VnForwardOptions opt_ones;
  opt_ones.analysis_mask = &ones;
  opt_ones.synthesis_mask = &ones;
  SosMap same = vn_forward(p, s.model, s.d, opt_ones);
  CHECK(same.values == base.values);

  // Overriding with the stored filters changes nothing either.
  std::vector<std::vector<std::vector<double>>> own;
  for (const auto& layer : p.layers) own.push_back(layer.filters);
  VnForwardOptions opt_own;
  opt_own.filter_override = &own;
  SosMap same2 = vn_forward(p, s.model, s.d, opt_own);
  CHECK(same2.values == base.values);

  // Silencing every synthesis filter removes the prior entirely: the result
  // equals the network with zeroed activations.
  std::vector<std::vector<uint8_t>> zeros(4, std::vector<uint8_t>(3, 0));
  VnForwardOptions opt_syn;
  opt_syn.synthesis_mask = &zeros;
  SosMap no_prior = vn_forward(p, s.model, s.d, opt_syn);
  VnParams stripped = p;
  for (auto& layer : stripped.layers)
    for (auto& phi : layer.reg_activations) phi.set_zero();
  SosMap want = vn_forward(stripped, s.model, s.d);
  CHECK(no_prior.values == want.values);

  // Masking analysis only still feeds phi(0) through the synthesis side, so
  // the two mask kinds behave differently.
  VnForwardOptions opt_ana;
  opt_ana.analysis_mask = &zeros;
  SosMap ana = vn_forward(p, s.model, s.d, opt_ana);
  CHECK(ana.values != no_prior.values);
  CHECK(ana.values != base.values);

  // Shape checks.
  std::vector<std::vector<uint8_t>> wrong(2, std::vector<uint8_t>(3, 1));
  VnForwardOptions opt_bad;
  opt_bad.analysis_mask = &wrong;
  CHECK_THROWS_AS(vn_forward(p, s.model, s.d, opt_bad), ConfigError);

  MeasurementSet dref = s.d;
  dref.values.pop_back();
  CHECK_THROWS_AS(vn_forward(p, s.model, dref), ConfigError);
}
