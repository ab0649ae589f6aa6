#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sosuq/forward_model.hpp"
#include "sosuq/uncertainty.hpp"
#include "sosuq/varnet.hpp"

namespace sosuq {

/// One training example: measurements plus the ground-truth slowness map.
struct TrainSample {
  MeasurementSet d;
  SlownessMap x_star;
};

enum class TrainMode { vn, mcd, bvi };

std::string train_mode_name(TrainMode m);
TrainMode parse_train_mode(const std::string& s);

struct TrainConfig {
  // Loss.
  double tau = 5.0;
  double lambda_r = 1e5;
  double epsilon_smooth = 1e-8;
  // Optimization.
  int batch_size = 16;
  int64_t iterations = 20000;
  double adam_lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 0;
  // Architecture for fresh networks.
  int n_layers = 10;
  int n_filters = 16;
  int kernel_size = 5;
  int n_knots = 35;
  double knot_range = 1.0;
  double slowness_scale = 1e4;
  double delay_scale = 1e7;
  double filter_init_std = 1e-2;
  double reg_weight_init = 0.1;
  // Monte Carlo dropout (mode mcd).
  double dropout_p = 0.25;
  // Variational posterior (mode bvi).
  double bvi_alpha = 0.1;
  double bvi_beta = 10.0;
  double bvi_d_init_lo = 0.9;
  double bvi_d_init_hi = 1.1;
  // Bookkeeping.
  int log_every = 100;
  int checkpoint_every = 1000;

  void validate() const;
};

/// Complete optimizer state: everything needed to resume a run or to run
/// inference. For mode bvi the filter slots of params hold the posterior
/// means and posterior carries the Cholesky blocks.
struct TrainSnapshot {
  TrainMode mode = TrainMode::vn;
  int64_t iteration = 0;
  uint64_t seed = 0;
  VnParams params;
  BviPosterior posterior;            // valid iff mode == bvi
  std::vector<double> adam_m, adam_v;  // optimizer-space moments
  std::string config_echo;           // resolved configuration text
};

struct TrainResult {
  TrainSnapshot snap;
  std::vector<std::pair<int64_t, double>> loss_log;  // (iteration, full loss)
  bool diverged = false;
};

/// Trains a network on the samples. Gradients of a batch are computed into
/// per-sample buffers and reduced in sample order, so results are
/// bit-identical for any thread count. Batches draw distinct sample indices
/// from the (seed, "batch", iteration) stream; dropout masks come from
/// (seed, "dropout", global slot) and shared BVI noise from
/// (seed, "bvi-noise", iteration). On a non-finite loss the run aborts,
/// returns the last checkpointed state, and sets diverged.
TrainResult train(const std::vector<TrainSample>& data, const ForwardModel& model,
                  const TrainConfig& cfg, TrainMode mode, int threads = 1,
                  const std::function<void(const TrainSnapshot&)>& on_checkpoint = {},
                  const TrainSnapshot* resume = nullptr);

} // namespace sosuq
