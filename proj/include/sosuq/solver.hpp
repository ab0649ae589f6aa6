#pragma once

#include <vector>

#include "sosuq/forward_model.hpp"
#include "sosuq/grid.hpp"

namespace sosuq {

/// Baseline reconstruction settings. The objective, in slowness-deviation
/// units, is
///   F(x) = ||L x - d||_p + lambda * TV_eps(x)
/// with p either the eps-smoothed l2 norm sqrt(sum r^2 + eps^2) or the
/// smoothed l1 norm sum sqrt(r^2 + eps^2), and
///   TV_eps(x) = sum_pixels sqrt(gx^2 + gz^2 + eps^2)
/// over forward differences gx, gz (zero at the far edges).
struct SolverConfig {
  double lambda = 3e-3;
  enum class DataNorm { l2, smoothed_l1 };
  DataNorm data_norm = DataNorm::l2;
  double tv_epsilon = 1e-8;
  int max_iters = 500;
  double grad_tolerance = 1e-8;  // infinity norm of the objective gradient
  int lbfgs_memory = 10;

  void validate() const;
};

/// Objective and (optionally) its gradient at deviation x (raw s/m units).
double solver_objective(const ForwardModel& model, const MeasurementSet& d,
                        const SolverConfig& cfg, const std::vector<double>& x,
                        std::vector<double>* grad);

struct SolveTrace {
  std::vector<double> objective;  // value after each accepted iteration
  int iterations = 0;
  double grad_inf = 0.0;
  bool converged = false;  // gradient tolerance reached
};

/// Minimizes the objective with LBFGS (two-loop recursion, Armijo
/// backtracking) from x = 0 and returns c = 1/(x + x0). Objective values are
/// monotone non-increasing across iterations. Throws NumericError (with the
/// iteration index) if the objective turns non-finite at an iterate.
SosMap lbfgs_reconstruct(const ForwardModel& model, const MeasurementSet& d,
                         const SolverConfig& cfg, SolveTrace* trace = nullptr);

} // namespace sosuq
