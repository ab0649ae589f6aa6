#pragma once

#include <cstdint>
#include <vector>

#include "sosuq/forward_model.hpp"
#include "sosuq/grid.hpp"
#include "sosuq/knots.hpp"

namespace sosuq {

/// Learnable parameters of one unrolled layer. A layer refines the current
/// normalized slowness deviation x by one step
///   x <- x - [ data step + regularization step ]
/// where the data step is Lt' (s . psi(s . (L' x - d'))) with per-lattice
/// weights s (broadcast over transmit pairs) and activation psi, and the
/// regularization step is sum_j conv(flip(r_j), w_j . phi_j(conv(r_j, x)))
/// over the filter bank, the field-of-experts prior gradient.
struct VnLayerParams {
  std::vector<std::vector<double>> filters;      // n_filters kernels, o*o row-major
  std::vector<std::vector<double>> reg_weights;  // n_filters images, npix each
  std::vector<KnotFunction> reg_activations;     // n_filters, phi
  std::vector<double> data_weights;              // lattice npix, s
  KnotFunction data_activation;                  // psi
};

/// Unrolled variational network. Internally everything runs in normalized
/// units: slowness deviation times slowness_scale, delays times delay_scale,
/// so knot-function inputs stay within their working range. The network
/// output converts back to speed of sound via c = 1/(x/slowness_scale + 1/c0).
struct VnParams {
  GridSpec grid;
  int n_layers = 10;
  int n_filters = 16;
  int kernel_size = 5;
  int n_knots = 35;
  double knot_range = 1.0;
  double slowness_scale = 1e4;  // 1 / (s/m unit of the normalized state)
  double delay_scale = 1e7;     // 1 / (s unit of the normalized delays)
  double c0 = 1540.0;
  std::vector<VnLayerParams> layers;

  uint64_t train_seed = 0;       // provenance
  int64_t train_iterations = 0;  // provenance

  /// Convolution anchor: analysis filters anchor at (o-1)/2, synthesis at
  /// the flipped position o-1-anchor, making the pair exactly adjoint.
  int anchor() const { return (kernel_size - 1) / 2; }

  /// Shape consistency (counts, sizes, positive scales); throws ConfigError.
  void validate() const;
  /// Additionally checks grid and measurement-lattice compatibility.
  void validate_against(const ForwardModel& model) const;
};

/// Flat parameter vector layout, per layer in order: filters, reg_weights,
/// phi ordinates (per filter), data_weights, psi ordinates. Layers are
/// concatenated. Used by the optimizer, serialization, and gradient tests.
struct ParamLayout {
  struct Layer {
    size_t filters = 0;
    size_t reg_weights = 0;
    size_t phi = 0;
    size_t data_weights = 0;
    size_t psi = 0;
  };
  std::vector<Layer> layers;
  size_t total = 0;
  int n_filters = 0, kernel_taps = 0, npix = 0, n_knots = 0, n_lattice = 0;

  enum class Kind { filter, reg_weight, phi, data_weight, psi };
  Kind kind_of(size_t flat_index) const;
};

ParamLayout layout_of(const VnParams& p);
void flatten(const VnParams& p, std::vector<double>& out);
void unflatten(VnParams& p, const std::vector<double>& in);

/// Optional per-draw modifications of the filter bank.
struct VnForwardOptions {
  /// Whole-filter 0/1 dropout masks, [n_layers][n_filters]. analysis_mask
  /// zeroes the filter inside phi's argument, synthesis_mask zeroes its
  /// contribution to the update. Null = no masking.
  const std::vector<std::vector<uint8_t>>* analysis_mask = nullptr;
  const std::vector<std::vector<uint8_t>>* synthesis_mask = nullptr;
  /// Replacement filters (posterior draws), [n_layers][n_filters][o*o].
  /// Null = use params.filters.
  const std::vector<std::vector<std::vector<double>>>* filter_override = nullptr;
};

/// Normalized states x_1..x_K produced by the unrolled iterations (the
/// initial state x_0 = 0 is implicit).
struct VnTrajectory {
  std::vector<std::vector<double>> states;
};

/// Runs the network on one measurement set and returns the reconstructed
/// speed-of-sound map. Optionally records the normalized trajectory.
SosMap vn_forward(const VnParams& p, const ForwardModel& model,
                  const MeasurementSet& d, const VnForwardOptions& opts = {},
                  VnTrajectory* trajectory = nullptr);

/// Ground-truth slowness map -> normalized deviation target.
std::vector<double> normalize_target(const VnParams& p, const SlownessMap& x_star);
/// Normalized deviation state -> speed-of-sound map.
SosMap denormalize_state(const VnParams& p, const std::vector<double>& state);

/// Deeply supervised data loss: sum_k exp(-tau*(K-k)) * |x_k - x*|_1 over the
/// recorded trajectory, in normalized units.
double vn_data_loss(const VnTrajectory& traj, const std::vector<double>& xstar_norm,
                    double tau);

/// Second-difference smoothing penalty over all knot ordinates (phi of every
/// filter and psi, every layer): sum sqrt((y[j-1]-2y[j]+y[j+1])^2 + eps).
double knot_smoothing(const VnParams& p, double epsilon);

/// Accumulates lambda_r * d(knot_smoothing)/d(params) into grad_flat.
void knot_smoothing_grad(const VnParams& p, double lambda_r, double epsilon,
                         std::vector<double>& grad_flat);

/// Exact reverse-mode gradient of vn_data_loss for one sample, accumulated
/// into grad_flat (layout_of(p) ordering). With filter_override the filter
/// slots receive the gradient w.r.t. the effective (overridden) filters.
/// Returns the sample's data loss.
double vn_grad(const VnParams& p, const ForwardModel& model, const MeasurementSet& d,
               const std::vector<double>& xstar_norm, double tau,
               const VnForwardOptions& opts, std::vector<double>& grad_flat);

/// Fresh network: filters ~ N(0, filter_std^2), phi = 0, psi = identity,
/// reg weights constant, data weights sqrt(0.9) / ||L'||_2 so the first
/// iteration is a convergent Landweber step.
VnParams init_vn_params(const ForwardModel& model, int n_layers, int n_filters,
                        int kernel_size, int n_knots, double knot_range,
                        double slowness_scale, double delay_scale, uint64_t seed,
                        double filter_std = 1e-2, double reg_weight_init = 0.1);

} // namespace sosuq
