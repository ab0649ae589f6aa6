#include "sosuq/solver.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <string>

#include "sosuq/errors.hpp"

namespace sosuq {

void SolverConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("solver config: " + m); };
  if (lambda < 0) fail("lambda must be non-negative");
  if (!(tv_epsilon > 0)) fail("tv_epsilon must be positive");
  if (max_iters < 1) fail("max_iters must be at least 1");
  if (!(grad_tolerance > 0)) fail("grad_tolerance must be positive");
  if (lbfgs_memory < 1) fail("lbfgs_memory must be at least 1");
}

double solver_objective(const ForwardModel& model, const MeasurementSet& d,
                        const SolverConfig& cfg, const std::vector<double>& x,
                        std::vector<double>* grad) {
  const int npix = model.grid.npix();
  const int nmeas = model.geom.n_meas();
  if (static_cast<int>(x.size()) != npix)
    throw ConfigError("solver_objective: state size mismatch");
  if (d.size() != nmeas) throw ConfigError("solver_objective: measurement size mismatch");

  if (grad) {
    grad->assign(static_cast<size_t>(npix), 0.0);
  }
  const double eps = cfg.tv_epsilon;
  const double eps2 = eps * eps;

  // Data term.
  std::vector<double> r(static_cast<size_t>(nmeas));
  model.L.matvec(x.data(), r.data(), false);
  for (int i = 0; i < nmeas; ++i) r[static_cast<size_t>(i)] -= d.values[static_cast<size_t>(i)];

  double data = 0.0;
  if (cfg.data_norm == SolverConfig::DataNorm::l2) {
    double ss = eps2;
    for (double v : r) ss += v * v;
    data = std::sqrt(ss);
    if (grad) {
      for (double& v : r) v /= data;
      model.Lt.matvec(r.data(), grad->data(), true);
    }
  } else {
    for (double& v : r) {
      double t = std::sqrt(v * v + eps2);
      data += t;
      v /= t;  // becomes the residual weight for the gradient
    }
    if (grad) model.Lt.matvec(r.data(), grad->data(), true);
  }

  // Total variation with forward differences.
  double tv = 0.0;
  const int nx = model.grid.nx, nz = model.grid.nz;
  for (int iz = 0; iz < nz; ++iz)
    for (int ix = 0; ix < nx; ++ix) {
      size_t p = static_cast<size_t>(iz * nx + ix);
      double gx = ix + 1 < nx ? x[p + 1] - x[p] : 0.0;
      double gz = iz + 1 < nz ? x[p + static_cast<size_t>(nx)] - x[p] : 0.0;
      double t = std::sqrt(gx * gx + gz * gz + eps2);
      tv += t;
      if (grad) {
        double inv = cfg.lambda / t;
        if (ix + 1 < nx) {
          (*grad)[p] -= gx * inv;
          (*grad)[p + 1] += gx * inv;
        }
        if (iz + 1 < nz) {
          (*grad)[p] -= gz * inv;
          (*grad)[p + static_cast<size_t>(nx)] += gz * inv;
        }
      }
    }

  return data + cfg.lambda * tv;
}

SosMap lbfgs_reconstruct(const ForwardModel& model, const MeasurementSet& d,
                         const SolverConfig& cfg, SolveTrace* trace) {
  cfg.validate();
  const int npix = model.grid.npix();
  std::vector<double> x(static_cast<size_t>(npix), 0.0);
  std::vector<double> g, g_new, p, x_new;

  double f = solver_objective(model, d, cfg, x, &g);
  if (!std::isfinite(f)) throw NumericError("lbfgs: non-finite objective at iteration 0");

  struct Pair {
    std::vector<double> s, y;
    double rho;
  };
  std::deque<Pair> hist;

  auto inf_norm = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double t : v) m = std::max(m, std::abs(t));
    return m;
  };
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };

  if (trace) {
    trace->objective.clear();
    trace->converged = false;
  }

  int it = 0;
  for (; it < cfg.max_iters; ++it) {
    double gnorm = inf_norm(g);
    if (trace) trace->grad_inf = gnorm;
    if (gnorm <= cfg.grad_tolerance) {
      if (trace) trace->converged = true;
      break;
    }

    // Two-loop recursion: p = -H g.
    p = g;
    std::vector<double> alpha(hist.size());
    for (size_t i = hist.size(); i-- > 0;) {
      alpha[i] = hist[i].rho * dot(hist[i].s, p);
      for (size_t k = 0; k < p.size(); ++k) p[k] -= alpha[i] * hist[i].y[k];
    }
    if (!hist.empty()) {
      const Pair& last = hist.back();
      double gamma = dot(last.s, last.y) / dot(last.y, last.y);
      for (double& v : p) v *= gamma;
    }
    for (size_t i = 0; i < hist.size(); ++i) {
      double beta = hist[i].rho * dot(hist[i].y, p);
      for (size_t k = 0; k < p.size(); ++k) p[k] += (alpha[i] - beta) * hist[i].s[k];
    }
    for (double& v : p) v = -v;

    double slope = dot(g, p);
    if (slope >= 0) {
      // Fall back to steepest descent if curvature information misleads.
      p = g;
      for (double& v : p) v = -v;
      slope = -dot(g, g);
      hist.clear();
    }

    // Armijo backtracking.
    double step = hist.empty() ? 1.0 / std::max(inf_norm(g), 1e-300) : 1.0;
    constexpr double c1 = 1e-4;
    double f_new = f;
    bool accepted = false;
    for (int ls = 0; ls < 48; ++ls) {
      x_new = x;
      for (size_t k = 0; k < x.size(); ++k) x_new[k] += step * p[k];
      f_new = solver_objective(model, d, cfg, x_new, nullptr);
      if (std::isfinite(f_new) && f_new <= f + c1 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // no further decrease representable

    solver_objective(model, d, cfg, x_new, &g_new);
    if (!std::isfinite(f_new))
      throw NumericError("lbfgs: non-finite objective at iteration " + std::to_string(it + 1));

    Pair pr;
    pr.s.resize(x.size());
    pr.y.resize(x.size());
    for (size_t k = 0; k < x.size(); ++k) {
      pr.s[k] = x_new[k] - x[k];
      pr.y[k] = g_new[k] - g[k];
    }
    double sy = dot(pr.s, pr.y);
    double sn = std::sqrt(dot(pr.s, pr.s)), yn = std::sqrt(dot(pr.y, pr.y));
    if (sy > 1e-12 * sn * yn) {
      pr.rho = 1.0 / sy;
      hist.push_back(std::move(pr));
      if (static_cast<int>(hist.size()) > cfg.lbfgs_memory) hist.pop_front();
    }

    x.swap(x_new);
    g.swap(g_new);
    f = f_new;
    if (trace) trace->objective.push_back(f);
  }
  if (trace) trace->iterations = it;

  SosMap c(model.grid, 0.0);
  double x0 = model.x0();
  for (int i = 0; i < npix; ++i) {
    double slowness = x[static_cast<size_t>(i)] + x0;
    if (!(slowness > 0)) throw NumericError("lbfgs: non-positive slowness in solution");
    c.values[static_cast<size_t>(i)] = 1.0 / slowness;
  }
  return c;
}

} // namespace sosuq
