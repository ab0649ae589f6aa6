#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "sosuq/grid.hpp"

namespace sosuq {

/// Random-phantom generator settings. All speeds in m/s, lengths in meters.
struct PhantomConfig {
  double background_min_mps = 1475.0;
  double background_max_mps = 1560.0;
  double contrast_min_mps = 5.0;
  double contrast_max_mps = 60.0;
  int inclusion_count_min = 1;
  int inclusion_count_max = 1;
  double semi_axis_min_m = 2e-3;
  double semi_axis_max_m = 6e-3;
  /// Peak boundary deformation as a fraction of the minor semi-axis.
  double deformation_amplitude = 0.3;
  /// Fraction of inclusions rendered with a smoothed (1 px Gaussian) edge.
  double smooth_fraction = 0.5;
  /// Probability of generating a phantom with no inclusion at all.
  double empty_probability = 0.0;
  /// Inclusions brighter (+) or darker (-) than background with equal odds.
  bool signed_contrast = true;

  /// Throws ConfigError when ranges are inverted or speeds can leave
  /// [1300, 1700] m/s.
  void validate() const;
};

/// Grid-independent geometric description of one phantom. The same scene can
/// be rasterized on the training grid and on a refined simulation grid, so
/// measured data and ground truth describe one object.
struct PhantomScene {
  struct Inclusion {
    double cx_m = 0.0, cz_m = 0.0;  // center, grid coordinates
    double a_m = 0.0, b_m = 0.0;    // major/minor semi-axes
    double angle_rad = 0.0;
    double contrast_mps = 0.0;     // signed offset from background
    bool smooth = false;
    /// Radial boundary deformation: r(theta) = 1 + sum_m fc[m] cos((m+2)t)
    /// + fs[m] sin((m+2)t) in normalized ellipse coordinates.
    double fourier_cos[4] = {0, 0, 0, 0};
    double fourier_sin[4] = {0, 0, 0, 0};
  };
  double background_mps = 1540.0;
  std::vector<Inclusion> inclusions;
};

/// Draws scene parameters for a field of the given physical extent.
/// Rasterization consumes no randomness, so one seed yields one object at
/// any resolution.
PhantomScene sample_scene(uint64_t seed, const PhantomConfig& cfg,
                          double extent_x_m, double extent_z_m);

/// Renders the speed-of-sound map of a scene on a grid.
SosMap rasterize_scene(const PhantomScene& scene, const GridSpec& grid);

/// Renders the inclusion-support mask (union of unsmoothed interiors).
Mask rasterize_mask(const PhantomScene& scene, const GridSpec& grid);

/// Convenience: sample a scene for the grid extent and rasterize both map
/// and mask.
std::pair<SosMap, Mask> sample_phantom(uint64_t seed, const PhantomConfig& cfg,
                                       const GridSpec& grid);

/// Band of background pixels surrounding an inclusion mask: the morphological
/// dilation of the mask by ceil(width_m / pitch) pixels minus the mask
/// itself, clipped to the grid. Throws ConfigError on an empty mask or a
/// non-positive width.
Mask background_ring(const Mask& inclusion, double width_m);

} // namespace sosuq
