#include "sosuq/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "sosuq/errors.hpp"
#include "sosuq/rng.hpp"

namespace sosuq {

namespace {

constexpr double kSosFloor = 1300.0;
constexpr double kSosCeil = 1700.0;

/// Signed radial excess of a point relative to the deformed ellipse
/// boundary: negative inside, positive outside.
double boundary_excess(const PhantomScene::Inclusion& inc, double px, double pz) {
  double dx = px - inc.cx_m;
  double dz = pz - inc.cz_m;
  double c = std::cos(inc.angle_rad), s = std::sin(inc.angle_rad);
  double u = (c * dx + s * dz) / inc.a_m;
  double v = (-s * dx + c * dz) / inc.b_m;
  double r = std::hypot(u, v);
  double theta = std::atan2(v, u);
  double boundary = 1.0;
  for (int m = 0; m < 4; ++m) {
    double mt = (m + 2) * theta;
    boundary += inc.fourier_cos[m] * std::cos(mt) + inc.fourier_sin[m] * std::sin(mt);
  }
  return r - boundary;
}

bool inside(const PhantomScene::Inclusion& inc, double px, double pz) {
  return boundary_excess(inc, px, pz) <= 0.0;
}

/// Separable Gaussian blur with sigma = 1 pixel, radius 3, zero padding at
/// the borders with weight renormalization so flat regions stay flat.
void blur_unit_sigma(std::vector<double>& img, int nx, int nz) {
  constexpr int R = 3;
  double w[2 * R + 1];
  for (int i = -R; i <= R; ++i) w[i + R] = std::exp(-0.5 * i * i);

  std::vector<double> tmp(img.size());
  for (int iz = 0; iz < nz; ++iz) {
    for (int ix = 0; ix < nx; ++ix) {
      double acc = 0.0, norm = 0.0;
      for (int t = -R; t <= R; ++t) {
        int x = ix + t;
        if (x < 0 || x >= nx) continue;
        acc += w[t + R] * img[static_cast<size_t>(iz) * nx + x];
        norm += w[t + R];
      }
      tmp[static_cast<size_t>(iz) * nx + ix] = acc / norm;
    }
  }
  for (int iz = 0; iz < nz; ++iz) {
    for (int ix = 0; ix < nx; ++ix) {
      double acc = 0.0, norm = 0.0;
      for (int t = -R; t <= R; ++t) {
        int z = iz + t;
        if (z < 0 || z >= nz) continue;
        acc += w[t + R] * tmp[static_cast<size_t>(z) * nx + ix];
        norm += w[t + R];
      }
      img[static_cast<size_t>(iz) * nx + ix] = acc / norm;
    }
  }
}

} // namespace

void PhantomConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("phantom config: " + m); };
  if (background_min_mps > background_max_mps) fail("background range inverted");
  if (contrast_min_mps < 0 || contrast_min_mps > contrast_max_mps)
    fail("contrast range invalid");
  if (inclusion_count_min < 0 || inclusion_count_min > inclusion_count_max)
    fail("inclusion count range invalid");
  if (semi_axis_min_m <= 0 || semi_axis_min_m > semi_axis_max_m)
    fail("semi-axis range invalid");
  if (deformation_amplitude < 0 || deformation_amplitude >= 1)
    fail("deformation amplitude must lie in [0, 1)");
  if (smooth_fraction < 0 || smooth_fraction > 1) fail("smooth fraction outside [0, 1]");
  if (empty_probability < 0 || empty_probability > 1)
    fail("empty probability outside [0, 1]");
  double lo = background_min_mps - (signed_contrast ? contrast_max_mps : 0.0);
  double hi = background_max_mps + contrast_max_mps;
  if (lo < kSosFloor || hi > kSosCeil)
    fail("speed range can leave [1300, 1700] m/s");
}

PhantomScene sample_scene(uint64_t seed, const PhantomConfig& cfg,
                          double extent_x_m, double extent_z_m) {
  cfg.validate();
  Rng rng(derive_seed(seed, "phantom-scene"));
  PhantomScene scene;
  scene.background_mps = rng.uniform(cfg.background_min_mps, cfg.background_max_mps);

  if (cfg.empty_probability > 0 && rng.bernoulli(cfg.empty_probability)) return scene;

  int count = cfg.inclusion_count_min +
              static_cast<int>(rng.uniform_int(
                  static_cast<uint64_t>(cfg.inclusion_count_max - cfg.inclusion_count_min + 1)));

  for (int n = 0; n < count; ++n) {
    PhantomScene::Inclusion inc;
    double a = rng.uniform(cfg.semi_axis_min_m, cfg.semi_axis_max_m);
    double b = rng.uniform(cfg.semi_axis_min_m, cfg.semi_axis_max_m);
    inc.a_m = std::max(a, b);
    inc.b_m = std::min(a, b);
    inc.angle_rad = rng.uniform(0.0, M_PI);
    inc.contrast_mps = rng.uniform(cfg.contrast_min_mps, cfg.contrast_max_mps);
    if (cfg.signed_contrast && rng.bernoulli(0.5)) inc.contrast_mps = -inc.contrast_mps;
    inc.smooth = rng.bernoulli(cfg.smooth_fraction);

    // Deformation coefficients, scaled in normalized ellipse units so the
    // peak boundary excursion stays below amplitude * (minor / major).
    double raw[8];
    double mag = 0.0;
    for (int m = 0; m < 8; ++m) raw[m] = rng.uniform(-1.0, 1.0);
    for (int m = 0; m < 4; ++m) mag += std::hypot(raw[2 * m], raw[2 * m + 1]);
    double target = rng.uniform(0.0, cfg.deformation_amplitude) * (inc.b_m / inc.a_m);
    double scale = mag > 0 ? target / mag : 0.0;
    for (int m = 0; m < 4; ++m) {
      inc.fourier_cos[m] = raw[2 * m] * scale;
      inc.fourier_sin[m] = raw[2 * m + 1] * scale;
    }

    // Bounding radius covering the deformed boundary.
    double bound = inc.a_m * (1.0 + target);
    double margin = std::min(bound, 0.45 * std::min(extent_x_m, extent_z_m));

    bool placed = false;
    for (int attempt = 0; attempt < 32 && !placed; ++attempt) {
      inc.cx_m = rng.uniform(margin, extent_x_m - margin);
      inc.cz_m = rng.uniform(margin, extent_z_m - margin);
      placed = true;
      for (const auto& other : scene.inclusions) {
        double gap = std::hypot(inc.cx_m - other.cx_m, inc.cz_m - other.cz_m);
        double other_bound = other.a_m * (1.0 + cfg.deformation_amplitude);
        if (gap < bound + other_bound) {
          placed = false;
          break;
        }
      }
    }
    if (placed) scene.inclusions.push_back(inc);
  }
  return scene;
}

SosMap rasterize_scene(const PhantomScene& scene, const GridSpec& grid) {
  SosMap map(grid, scene.background_mps);
  std::vector<double> field(grid.npix());
  for (const auto& inc : scene.inclusions) {
    std::fill(field.begin(), field.end(), 0.0);
    for (int iz = 0; iz < grid.nz; ++iz)
      for (int ix = 0; ix < grid.nx; ++ix)
        if (inside(inc, grid.center_x(ix), grid.center_z(iz)))
          field[grid.index(ix, iz)] = 1.0;
    if (inc.smooth) blur_unit_sigma(field, grid.nx, grid.nz);
    for (size_t i = 0; i < field.size(); ++i)
      map.values[i] += inc.contrast_mps * field[i];
  }
  return map;
}

Mask rasterize_mask(const PhantomScene& scene, const GridSpec& grid) {
  Mask mask(grid);
  for (const auto& inc : scene.inclusions)
    for (int iz = 0; iz < grid.nz; ++iz)
      for (int ix = 0; ix < grid.nx; ++ix)
        if (inside(inc, grid.center_x(ix), grid.center_z(iz)))
          mask.bits[grid.index(ix, iz)] = 1;
  return mask;
}

std::pair<SosMap, Mask> sample_phantom(uint64_t seed, const PhantomConfig& cfg,
                                       const GridSpec& grid) {
  PhantomScene scene = sample_scene(seed, cfg, grid.extent_x(), grid.extent_z());
  return {rasterize_scene(scene, grid), rasterize_mask(scene, grid)};
}

Mask background_ring(const Mask& inclusion, double width_m) {
  if (inclusion.empty()) throw ConfigError("background_ring: empty inclusion mask");
  if (width_m <= 0) throw ConfigError("background_ring: width must be positive");
  const GridSpec& g = inclusion.grid;
  int rx = static_cast<int>(std::ceil(width_m / g.pitch_x));
  int rz = static_cast<int>(std::ceil(width_m / g.pitch_z));

  // Offsets of the (elliptical when pitches differ) dilation disc.
  std::vector<std::pair<int, int>> disc;
  for (int dz = -rz; dz <= rz; ++dz)
    for (int dx = -rx; dx <= rx; ++dx) {
      double nx = static_cast<double>(dx) / rx;
      double nz = static_cast<double>(dz) / rz;
      if (nx * nx + nz * nz <= 1.0) disc.emplace_back(dx, dz);
    }

  Mask ring(g);
  for (int iz = 0; iz < g.nz; ++iz)
    for (int ix = 0; ix < g.nx; ++ix) {
      if (!inclusion.bits[g.index(ix, iz)]) continue;
      for (auto [dx, dz] : disc) {
        int x = ix + dx, z = iz + dz;
        if (x < 0 || x >= g.nx || z < 0 || z >= g.nz) continue;
        ring.bits[g.index(x, z)] = 1;
      }
    }
  for (size_t i = 0; i < ring.bits.size(); ++i)
    if (inclusion.bits[i]) ring.bits[i] = 0;
  return ring;
}

} // namespace sosuq
