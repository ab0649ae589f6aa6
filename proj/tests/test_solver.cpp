#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <vector>

#include "sosuq/errors.hpp"
#include "sosuq/forward_model.hpp"
#include "sosuq/geometry.hpp"
#include "sosuq/grid.hpp"
#include "sosuq/phantom.hpp"
#include "sosuq/rng.hpp"
#include "sosuq/solver.hpp"

using namespace sosuq;

namespace {

struct Problem {
  GridSpec grid;
  ForwardModel model;
};

Problem small_problem() {
  GridSpec g = make_grid(12, 10, 3e-4, 3e-4);
  AcquisitionGeometry geom = default_geometry(g, 5, 1, 25.0, 4, 4);
  return {g, build_operator(g, geom, 1540.0)};
}

// Objective recomputed from its definition, independent of solver internals.
double objective_oracle(const ForwardModel& fm, const MeasurementSet& d,
                        const SolverConfig& cfg, const std::vector<double>& x) {
  std::vector<double> r(fm.L.rows, 0.0);
  fm.L.matvec(x.data(), r.data());
  for (int i = 0; i < fm.L.rows; ++i) r[i] -= d.values[i];

  double data = 0.0;
  if (cfg.data_norm == SolverConfig::DataNorm::l2) {
    double s = cfg.tv_epsilon * cfg.tv_epsilon;
    for (double v : r) s += v * v;
    data = std::sqrt(s);
  } else {
    for (double v : r)
      data += std::sqrt(v * v + cfg.tv_epsilon * cfg.tv_epsilon);
  }

  double tv = 0.0;
  const GridSpec& g = fm.grid;
  for (int iz = 0; iz < g.nz; ++iz)
    for (int ix = 0; ix < g.nx; ++ix) {
      const double v = x[g.index(ix, iz)];
      const double gx = ix + 1 < g.nx ? x[g.index(ix + 1, iz)] - v : 0.0;
      const double gz = iz + 1 < g.nz ? x[g.index(ix, iz + 1)] - v : 0.0;
      tv += std::sqrt(gx * gx + gz * gz + cfg.tv_epsilon * cfg.tv_epsilon);
    }
  return data + cfg.lambda * tv;
}

MeasurementSet zero_measurements(const AcquisitionGeometry& geom) {
  MeasurementSet d;
  d.n_pairs = geom.n_pairs();
  d.lattice = geom.lattice;
  d.values.assign(static_cast<size_t>(geom.n_meas()), 0.0);
  return d;
}

} // namespace

TEST_CASE("solver configuration validation") {
  SolverConfig c;
  CHECK_NOTHROW(c.validate());
  SolverConfig bad = c;
  bad.lambda = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.tv_epsilon = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.max_iters = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.lbfgs_memory = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.grad_tolerance = -1e-9;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("objective matches an independent recomputation") {
  Problem p = small_problem();
  MeasurementSet d = zero_measurements(p.model.geom);
  Rng r(91);
  for (double& v : d.values) v = r.gaussian() * 2e-9;

  for (auto norm :
       {SolverConfig::DataNorm::l2, SolverConfig::DataNorm::smoothed_l1}) {
    SolverConfig cfg;
    cfg.data_norm = norm;
    cfg.lambda = 2.5e-3;
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<double> x(p.grid.npix());
      for (double& v : x) v = r.gaussian() * 3e-6;
      const double got = solver_objective(p.model, d, cfg, x, nullptr);
      const double want = objective_oracle(p.model, d, cfg, x);
      CHECK(got == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("analytic gradient agrees with central differences") {
  Problem p = small_problem();
  MeasurementSet d = zero_measurements(p.model.geom);
  Rng r(92);
  for (double& v : d.values) v = r.gaussian() * 2e-9;

  for (auto norm :
       {SolverConfig::DataNorm::l2, SolverConfig::DataNorm::smoothed_l1}) {
    SolverConfig cfg;
    cfg.data_norm = norm;
    std::vector<double> x(p.grid.npix());
    for (double& v : x) v = r.gaussian() * 3e-6;

    std::vector<double> grad(x.size(), 0.0);
    const double f0 = solver_objective(p.model, d, cfg, x, &grad);
    CHECK(std::isfinite(f0));

    const double h = 1e-9;
    for (int k = 0; k < 10; ++k) {
      const int i = static_cast<int>(r.uniform_int(static_cast<uint64_t>(x.size())));
      std::vector<double> xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      const double fd = (solver_objective(p.model, d, cfg, xp, nullptr) -
                         solver_objective(p.model, d, cfg, xm, nullptr)) /
                        (2 * h);
      CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-5).scale(1e-6));
    }
  }
}

TEST_CASE("zero data reconstructs the background immediately") {
  Problem p = small_problem();
  MeasurementSet d = zero_measurements(p.model.geom);
  SolverConfig cfg;
  SolveTrace trace;
  SosMap c = lbfgs_reconstruct(p.model, d, cfg, &trace);
  for (double v : c.values) CHECK(v == doctest::Approx(1540.0).epsilon(1e-12));
  CHECK(trace.converged);
  CHECK(trace.iterations == 0);
}

TEST_CASE("objective trace is monotone and the solver converges") {
  GridSpec g = make_grid(16, 12, 3e-4, 3e-4);
  AcquisitionGeometry geom = default_geometry(g, 7, 1, 25.0, 6, 5);
  ForwardModel fm = build_operator(g, geom, 1540.0);

  PhantomConfig pc;
  pc.contrast_min_mps = 20.0;
  pc.contrast_max_mps = 40.0;
  auto [truth, mask] = sample_phantom(3, pc, g);
  REQUIRE(!mask.empty());
  MeasurementSet d = simulate_measurements(fm, to_slowness(truth), 0.0, 1);

  SolverConfig cfg;
  cfg.lambda = 1e-4;
  cfg.max_iters = 300;
  SolveTrace trace;
  SosMap c = lbfgs_reconstruct(fm, d, cfg, &trace);

  REQUIRE(!trace.objective.empty());
  for (size_t i = 1; i < trace.objective.size(); ++i)
    CHECK(trace.objective[i] <= trace.objective[i - 1] + 1e-15);
  CHECK(trace.iterations == static_cast<int>(trace.objective.size()));

  // The fit should beat the flat background by a clear margin.
  double err = 0.0, base = 0.0;
  for (int i = 0; i < g.npix(); ++i) {
    err += (c.values[i] - truth.values[i]) * (c.values[i] - truth.values[i]);
    base += (1540.0 - truth.values[i]) * (1540.0 - truth.values[i]);
  }
  CHECK(err < 0.5 * base);
}

TEST_CASE("a heavy smoothness weight flattens the image") {
  Problem p = small_problem();
  MeasurementSet d = zero_measurements(p.model.geom);
  Rng r(93);
  for (double& v : d.values) v = r.gaussian() * 5e-9;

  SolverConfig cfg;
  cfg.lambda = 1e3;  // regularizer dominates any data fit
  cfg.max_iters = 200;
  SosMap c = lbfgs_reconstruct(p.model, d, cfg, nullptr);

  double lo = c.values[0], hi = c.values[0];
  for (double v : c.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(hi - lo < 1e-3);  // m/s spread across the whole map
}

TEST_CASE("non-finite data aborts with a numeric error") {
  Problem p = small_problem();
  MeasurementSet d = zero_measurements(p.model.geom);
  d.values[3] = std::numeric_limits<double>::infinity();
  SolverConfig cfg;
  CHECK_THROWS_AS(lbfgs_reconstruct(p.model, d, cfg, nullptr), NumericError);
}
