#include "sosuq/forward_model.hpp"

#include <algorithm>
#include <cmath>

#include "sosuq/errors.hpp"
#include "sosuq/kernels.hpp"
#include "sosuq/parallel.hpp"
#include "sosuq/rng.hpp"

namespace sosuq {

namespace {

/// Liang-Barsky slab clipping of the parametric segment p0 + t*(p1-p0),
/// t in [0,1], against the grid box. Returns false when nothing remains.
bool clip_to_box(const GridSpec& g, double p0x, double p0z, double dx, double dz,
                 double& t0, double& t1) {
  t0 = 0.0;
  t1 = 1.0;
  auto clip = [&](double p, double q) {
    if (p == 0.0) return q >= 0.0;
    double r = q / p;
    if (p < 0.0) {
      if (r > t1) return false;
      if (r > t0) t0 = r;
    } else {
      if (r < t0) return false;
      if (r < t1) t1 = r;
    }
    return true;
  };
  double x0 = g.origin_x, x1 = x0 + g.extent_x();
  double z0 = g.origin_z, z1 = z0 + g.extent_z();
  if (!clip(-dx, p0x - x0)) return false;
  if (!clip(dx, x1 - p0x)) return false;
  if (!clip(-dz, p0z - z0)) return false;
  if (!clip(dz, z1 - p0z)) return false;
  return t0 < t1;
}

/// Appends crossing parameters of the planes c = c0 + i*pitch hit by
/// p(t) = p + t*d for t in (t0, t1).
void plane_crossings(double p, double d, double c0, double pitch, int n,
                     double t0, double t1, std::vector<double>& ts) {
  if (d == 0.0) return;
  double a = p + t0 * d, b = p + t1 * d;
  double lo = std::min(a, b), hi = std::max(a, b);
  int ilo = static_cast<int>(std::ceil((lo - c0) / pitch));
  int ihi = static_cast<int>(std::floor((hi - c0) / pitch));
  ilo = std::max(ilo, 0);
  ihi = std::min(ihi, n);
  for (int i = ilo; i <= ihi; ++i) {
    double t = (c0 + i * pitch - p) / d;
    if (t > t0 && t < t1) ts.push_back(t);
  }
}

} // namespace

std::vector<std::pair<int32_t, double>> trace_plane_ray(const GridSpec& g,
                                                        double angle_rad,
                                                        double qx, double qz) {
  // Entry point on the aperture edge, direction down the steered wavefront
  // normal.
  double p0x = qx - (qz - g.origin_z) * std::tan(angle_rad);
  double p0z = g.origin_z;
  double dx = qx - p0x, dz = qz - p0z;
  double len = std::hypot(dx, dz);

  std::vector<std::pair<int32_t, double>> out;
  if (len == 0.0) return out;

  double t0, t1;
  if (!clip_to_box(g, p0x, p0z, dx, dz, t0, t1)) return out;

  std::vector<double> ts;
  ts.reserve(static_cast<size_t>(g.nx + g.nz + 2));
  ts.push_back(t0);
  ts.push_back(t1);
  plane_crossings(p0x, dx, g.origin_x, g.pitch_x, g.nx, t0, t1, ts);
  plane_crossings(p0z, dz, g.origin_z, g.pitch_z, g.nz, t0, t1, ts);
  std::sort(ts.begin(), ts.end());

  // Midpoint of each parameter interval identifies the crossed pixel; this
  // avoids boundary membership decisions entirely.
  for (size_t i = 0; i + 1 < ts.size(); ++i) {
    double ta = ts[i], tb = ts[i + 1];
    if (!(tb > ta)) continue;
    double tm = 0.5 * (ta + tb);
    int ix = static_cast<int>(std::floor((p0x + tm * dx - g.origin_x) / g.pitch_x));
    int iz = static_cast<int>(std::floor((p0z + tm * dz - g.origin_z) / g.pitch_z));
    ix = std::clamp(ix, 0, g.nx - 1);
    iz = std::clamp(iz, 0, g.nz - 1);
    out.emplace_back(g.index(ix, iz), (tb - ta) * len);
  }

  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  // An endpoint that lies exactly on a pixel boundary can generate a
  // zero-width parameter sliver whose midpoint rounds into the neighbouring
  // interval's pixel; merging equal indices preserves the total length and
  // keeps the row unique.
  size_t w = 0;
  for (size_t i = 0; i < out.size(); ++i) {
    if (w > 0 && out[w - 1].first == out[i].first)
      out[w - 1].second += out[i].second;
    else
      out[w++] = out[i];
  }
  out.resize(w);
  return out;
}

ForwardModel build_operator(const GridSpec& grid, const AcquisitionGeometry& geom,
                            double c0, int threads) {
  geom.validate(grid);
  if (!(c0 > 0.0)) throw ConfigError("build_operator: background speed must be positive");

  ForwardModel model;
  model.grid = grid;
  model.geom = geom;
  model.c0 = c0;

  int n_rows = geom.n_meas();
  std::vector<std::vector<std::pair<int32_t, double>>> rows(static_cast<size_t>(n_rows));

  parallel_for(n_rows, threads, [&](int r) {
    int pts = geom.lattice.npix();
    int pair = r / pts;
    int rem = r % pts;
    int iz = rem / geom.lattice.nx;
    int ix = rem % geom.lattice.nx;
    double qx = geom.lattice.center_x(ix);
    double qz = geom.lattice.center_z(iz);
    auto [ta, tb] = geom.pairs[static_cast<size_t>(pair)];
    auto ra = trace_plane_ray(grid, geom.transmit_angles_rad[static_cast<size_t>(ta)], qx, qz);
    auto rb = trace_plane_ray(grid, geom.transmit_angles_rad[static_cast<size_t>(tb)], qx, qz);

    // Row = path(ta) - path(tb), merged by pixel; exact cancellations drop.
    auto& row = rows[static_cast<size_t>(r)];
    row.reserve(ra.size() + rb.size());
    size_t i = 0, j = 0;
    while (i < ra.size() || j < rb.size()) {
      if (j == rb.size() || (i < ra.size() && ra[i].first < rb[j].first)) {
        row.push_back(ra[i++]);
      } else if (i == ra.size() || rb[j].first < ra[i].first) {
        row.emplace_back(rb[j].first, -rb[j].second);
        ++j;
      } else {
        double v = ra[i].second - rb[j].second;
        if (v != 0.0) row.emplace_back(ra[i].first, v);
        ++i;
        ++j;
      }
    }
  });

  model.L = csr_from_rows(n_rows, grid.npix(), rows);
  model.Lt = model.L.transposed();
  return model;
}

MeasurementSet apply_forward(const ForwardModel& model, const SlownessMap& x) {
  if (!(x.grid == model.grid)) throw ConfigError("apply_forward: grid mismatch");
  std::vector<double> dev(x.values.size());
  double x0 = model.x0();
  for (size_t i = 0; i < dev.size(); ++i) dev[i] = x.values[i] - x0;

  MeasurementSet d;
  d.n_pairs = model.geom.n_pairs();
  d.lattice = model.geom.lattice;
  d.values = model.L.matvec(dev);
  return d;
}

GridSpec refine_grid(const GridSpec& g, int factor) {
  if (factor < 1) throw ConfigError("refine_grid: factor must be >= 1");
  GridSpec r = g;
  r.nx = g.nx * factor;
  r.nz = g.nz * factor;
  r.pitch_x = g.pitch_x / factor;
  r.pitch_z = g.pitch_z / factor;
  return r;
}

MeasurementSet simulate_measurements(const ForwardModel& sim_model,
                                     const SlownessMap& phantom,
                                     double noise_sigma_s, uint64_t seed) {
  if (noise_sigma_s < 0) throw ConfigError("simulate_measurements: negative noise sigma");
  MeasurementSet d = apply_forward(sim_model, phantom);
  if (noise_sigma_s > 0) {
    Rng rng(derive_seed(seed, "measurement-noise"));
    for (double& v : d.values) v += noise_sigma_s * rng.gaussian();
  }
  return d;
}

MeasurementSet simulate_measurements(const SlownessMap& phantom,
                                     const AcquisitionGeometry& geom, double c0,
                                     double noise_sigma_s, uint64_t seed, int threads) {
  ForwardModel m = build_operator(phantom.grid, geom, c0, threads);
  return simulate_measurements(m, phantom, noise_sigma_s, seed);
}

double operator_norm_estimate(const ForwardModel& model, int iterations, uint64_t seed) {
  int n = model.grid.npix();
  Rng rng(derive_seed(seed, "power-iteration"));
  std::vector<double> v(static_cast<size_t>(n));
  for (double& e : v) e = rng.gaussian();
  std::vector<double> w(static_cast<size_t>(model.L.rows));
  double lambda = 0.0;
  for (int it = 0; it < iterations; ++it) {
    model.L.matvec(v.data(), w.data(), false);
    std::vector<double> u(static_cast<size_t>(n));
    model.Lt.matvec(w.data(), u.data(), false);
    double norm = std::sqrt(kernels::dot(u.data(), u.data(), static_cast<size_t>(n)));
    if (norm == 0.0) return 0.0;
    lambda = norm;
    for (int i = 0; i < n; ++i) v[static_cast<size_t>(i)] = u[static_cast<size_t>(i)] / norm;
  }
  // lambda approximates the top eigenvalue of Lt*L.
  return std::sqrt(lambda);
}

} // namespace sosuq
