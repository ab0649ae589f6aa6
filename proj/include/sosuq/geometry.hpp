#pragma once

#include <utility>
#include <vector>

#include "sosuq/grid.hpp"

namespace sosuq {

/// Plane-wave acquisition description: a set of steering angles, an ordered
/// list of transmit pairs whose arrival-time difference is measured, and the
/// lattice of points where those differential delays are tracked.
struct AcquisitionGeometry {
  /// Steering angle per transmit, radians from the z axis (positive tilts
  /// toward +x). Plane wavefronts enter at z = origin_z and travel downward.
  std::vector<double> transmit_angles_rad;

  /// Ordered (first, second) transmit index pairs; the measured quantity at
  /// each lattice point q is delay(first, q) - delay(second, q).
  std::vector<std::pair<int, int>> pairs;

  /// Lattice of measurement points, expressed as a grid whose pixel centers
  /// are the tracked points. Must lie inside the image extent.
  GridSpec lattice;

  int n_transmits() const { return static_cast<int>(transmit_angles_rad.size()); }
  int n_pairs() const { return static_cast<int>(pairs.size()); }
  int n_meas() const { return n_pairs() * lattice.npix(); }

  /// Row index of (pair m, lattice point (ix, iz)): rows are ordered
  /// row-major by (pair, z, x).
  int row_index(int pair, int ix, int iz) const {
    return (pair * lattice.nz + iz) * lattice.nx + ix;
  }

  /// Throws ConfigError when pair indices are out of range, the pair list
  /// has duplicates or is empty, an angle exceeds 45 degrees, or a lattice
  /// point falls outside the image extent.
  void validate(const GridSpec& image_grid) const;
};

/// Standard geometry: n_transmits angles uniform over [-max_angle, max_angle]
/// degrees, pairs (t, t + pair_stride) for every valid t, and a lattice of
/// lattice_nx x lattice_nz points spread over the image interior with half a
/// lattice pitch of margin on every side.
AcquisitionGeometry default_geometry(const GridSpec& image_grid,
                                     int n_transmits = 17,
                                     int pair_stride = 2,
                                     double max_angle_deg = 25.0,
                                     int lattice_nx = 57,
                                     int lattice_nz = 77);

} // namespace sosuq
