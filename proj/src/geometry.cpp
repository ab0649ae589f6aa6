#include "sosuq/geometry.hpp"

#include <cmath>
#include <set>
#include <string>

#include "sosuq/errors.hpp"

namespace sosuq {

void AcquisitionGeometry::validate(const GridSpec& image_grid) const {
  auto fail = [](const std::string& m) { throw ConfigError("geometry: " + m); };
  if (transmit_angles_rad.empty()) fail("no transmits");
  if (pairs.empty()) fail("no transmit pairs");
  constexpr double kMaxAngle = 45.0 * M_PI / 180.0;
  for (double a : transmit_angles_rad)
    if (!(std::abs(a) <= kMaxAngle)) fail("steering angle exceeds 45 degrees");

  std::set<std::pair<int, int>> seen;
  for (auto [a, b] : pairs) {
    if (a < 0 || a >= n_transmits() || b < 0 || b >= n_transmits())
      fail("pair references unknown transmit");
    if (!seen.insert({a, b}).second) fail("duplicate transmit pair");
  }

  if (lattice.nx < 1 || lattice.nz < 1) fail("empty measurement lattice");
  double x0 = image_grid.origin_x, x1 = x0 + image_grid.extent_x();
  double z0 = image_grid.origin_z, z1 = z0 + image_grid.extent_z();
  for (int iz = 0; iz < lattice.nz; ++iz)
    for (int ix = 0; ix < lattice.nx; ++ix) {
      double px = lattice.center_x(ix), pz = lattice.center_z(iz);
      if (px < x0 || px > x1 || pz < z0 || pz > z1)
        fail("measurement point outside image extent");
    }
}

AcquisitionGeometry default_geometry(const GridSpec& image_grid, int n_transmits,
                                     int pair_stride, double max_angle_deg,
                                     int lattice_nx, int lattice_nz) {
  if (n_transmits < 2) throw ConfigError("geometry: need at least 2 transmits");
  if (pair_stride < 0 || pair_stride >= n_transmits)
    throw ConfigError("geometry: pair stride out of range");
  if (lattice_nx < 1 || lattice_nz < 1)
    throw ConfigError("geometry: lattice dimensions must be positive");

  AcquisitionGeometry g;
  double max_rad = max_angle_deg * M_PI / 180.0;
  g.transmit_angles_rad.resize(static_cast<size_t>(n_transmits));
  for (int t = 0; t < n_transmits; ++t)
    g.transmit_angles_rad[static_cast<size_t>(t)] =
        -max_rad + 2.0 * max_rad * t / (n_transmits - 1);

  for (int t = 0; t + pair_stride < n_transmits; ++t) g.pairs.emplace_back(t, t + pair_stride);

  // Lattice pitch chosen so points sit strictly inside the image with a
  // full pitch of margin at each edge: centers at origin + (i+1) * pitch.
  g.lattice.nx = lattice_nx;
  g.lattice.nz = lattice_nz;
  g.lattice.pitch_x = image_grid.extent_x() / (lattice_nx + 1);
  g.lattice.pitch_z = image_grid.extent_z() / (lattice_nz + 1);
  g.lattice.origin_x = image_grid.origin_x + 0.5 * g.lattice.pitch_x;
  g.lattice.origin_z = image_grid.origin_z + 0.5 * g.lattice.pitch_z;

  g.validate(image_grid);
  return g;
}

} // namespace sosuq
