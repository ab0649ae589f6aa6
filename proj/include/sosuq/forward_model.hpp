#pragma once

#include <cstdint>
#include <vector>

#include "sosuq/geometry.hpp"
#include "sosuq/grid.hpp"
#include "sosuq/sparse.hpp"

namespace sosuq {

/// Differential delay measurements for every (transmit pair, lattice point),
/// in seconds. Values are ordered row-major by (pair, lattice z, lattice x),
/// matching AcquisitionGeometry::row_index.
struct MeasurementSet {
  int n_pairs = 0;
  GridSpec lattice;
  std::vector<double> values;

  int size() const { return static_cast<int>(values.size()); }
};

/// Linearized straight-ray forward operator d = L (x - x0) mapping slowness
/// deviation (s/m, image grid) to differential delays (s). Row (pair, q)
/// holds the per-pixel path-length difference between the two plane-wave
/// rays through q.
struct ForwardModel {
  GridSpec grid;
  AcquisitionGeometry geom;
  double c0 = 1540.0;  // background speed of the linearization point, m/s
  CsrMatrix L;         // n_meas x npix
  CsrMatrix Lt;        // npix x n_meas

  double x0() const { return 1.0 / c0; }
};

/// Path of a plane-wave ray through the grid toward point (qx, qz): the ray
/// enters the aperture edge z = origin_z at lateral position
/// qx - (qz - origin_z) * tan(angle) and travels straight to q. Returns
/// (pixel index, intersection length) pairs sorted by pixel index; segments
/// outside the grid are clipped away.
std::vector<std::pair<int32_t, double>> trace_plane_ray(const GridSpec& grid,
                                                        double angle_rad,
                                                        double qx, double qz);

/// Builds the sparse operator and its transpose. Exactly cancelling entries
/// (identical transmit pair) are dropped, so rows of a pair (t, t) are empty.
ForwardModel build_operator(const GridSpec& grid, const AcquisitionGeometry& geom,
                            double c0, int threads = 1);

/// d = L (x - x0). The map must live on the model grid.
MeasurementSet apply_forward(const ForwardModel& model, const SlownessMap& x);

/// Grid with the same extent and factor-times finer pixels.
GridSpec refine_grid(const GridSpec& grid, int factor);

/// Simulates measurements of a phantom through a prebuilt model (typically
/// on a refined grid so simulation and reconstruction discretizations
/// differ), adding i.i.d. Gaussian noise with the given standard deviation
/// in seconds. The noise stream is derived from (seed, "measurement-noise").
MeasurementSet simulate_measurements(const ForwardModel& sim_model,
                                     const SlownessMap& phantom,
                                     double noise_sigma_s, uint64_t seed);

/// Convenience variant that builds the operator for the phantom grid first.
MeasurementSet simulate_measurements(const SlownessMap& phantom,
                                     const AcquisitionGeometry& geom, double c0,
                                     double noise_sigma_s, uint64_t seed,
                                     int threads = 1);

/// Largest singular value of L, estimated with power iteration on Lt * L.
double operator_norm_estimate(const ForwardModel& model, int iterations = 50,
                              uint64_t seed = 7);

} // namespace sosuq
