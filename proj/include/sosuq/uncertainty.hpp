#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "sosuq/forward_model.hpp"
#include "sosuq/grid.hpp"
#include "sosuq/varnet.hpp"

namespace sosuq {

/// Monte Carlo dropout settings: p is the drop probability per whole filter,
/// so each mask bit keeps a filter with probability 1 - p. No activation
/// rescaling is applied at inference; the network is trained with the same
/// masking.
struct McdConfig {
  double p = 0.25;
  int n_samples = 100;
  uint64_t seed = 0;
};

/// Draws one pair of whole-filter mask banks (analysis and synthesis,
/// independent, Bernoulli(1 - p) keep each) from the given seed. Draw order:
/// layers outer, filters inner, analysis bit before synthesis bit.
void draw_dropout_masks(const VnParams& p_net, double p, uint64_t seed,
                        std::vector<std::vector<uint8_t>>& analysis,
                        std::vector<std::vector<uint8_t>>& synthesis);

/// One MCD forward pass with masks drawn from mask_seed.
SosMap mcd_forward(const VnParams& net, const ForwardModel& model,
                   const MeasurementSet& d, double p, uint64_t mask_seed);

/// Gaussian posterior over the filter bank: filters ~ N(mu, D D^T) with D
/// block-diagonal, one lower-triangular o^2 x o^2 block per filter, blocks
/// ordered layer-major then filter. The means live in params.layers[k]
/// .filters[j]; all other network parameters are point estimates.
struct BviPosterior {
  VnParams params;
  int block_dim = 0;  // kernel taps, o^2
  int n_blocks = 0;   // n_layers * n_filters
  /// Dense row-major block_dim x block_dim blocks; entries above the
  /// diagonal must be zero.
  std::vector<std::vector<double>> d_blocks;

  /// Shape checks plus strictly positive diagonals; throws ConfigError.
  void validate() const;
};

/// KL-divergence surrogate alpha * tr(D D^T) - 2 * tr(log D), where
/// tr(log D) = sum of log diagonal entries. Throws ConfigError on a
/// non-positive diagonal (invalid posterior).
double bvi_kl(const BviPosterior& post, double alpha);

/// One filter-bank draw: per block, filters = mu + D y with y ~ N(0, I).
/// Noise order: blocks layer-major then filter, components in tap order,
/// stream derived from (seed, "bvi-noise").
std::vector<std::vector<std::vector<double>>> bvi_sample_filters(const BviPosterior& post,
                                                                 uint64_t seed);

/// Full training objective for one sample under the sampled weights:
/// deeply supervised data loss + lambda_r * knot smoothing + beta * KL.
double bvi_loss(const VnTrajectory& traj, const std::vector<double>& xstar_norm,
                const BviPosterior& post, double tau, double lambda_r,
                double epsilon, double alpha, double beta);

/// Pixelwise posterior mean and population standard deviation (divisor n).
struct PosteriorSummary {
  SosMap mean;
  SosMap deviation;
  int n_samples = 0;
};

/// Pixelwise mean and population std of a set of equally sized vectors.
struct MeanStd {
  std::vector<double> mean;
  std::vector<double> deviation;
};
/// Two-pass (compensated) statistics; the reference implementation.
MeanStd twopass_stats(const std::vector<std::vector<double>>& rows);
/// Streaming Welford statistics; must agree with twopass_stats to 1e-10.
MeanStd welford_stats(const std::vector<std::vector<double>>& rows);

/// Runs draw(seed + i) for i in 0..n_samples-1 (so larger sample counts
/// nest the draws of smaller ones) and summarizes pixelwise.
PosteriorSummary posterior_summary(const std::function<SosMap(uint64_t)>& draw,
                                   int n_samples, uint64_t seed, int threads = 1);

PosteriorSummary mcd_summary(const VnParams& net, const ForwardModel& model,
                             const MeasurementSet& d, const McdConfig& cfg,
                             int threads = 1);

PosteriorSummary bvi_summary(const BviPosterior& post, const ForwardModel& model,
                             const MeasurementSet& d, int n_samples, uint64_t seed,
                             int threads = 1);

} // namespace sosuq
