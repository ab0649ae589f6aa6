#pragma once

#include <vector>

namespace sosuq {

/// Learnable scalar function given by ordinates on a fixed uniform abscissa
/// lattice over [-range, range]: piecewise linear between knots, linearly
/// extrapolated beyond the end knots using the slope of the end segments.
/// Only the ordinates are trainable.
class KnotFunction {
 public:
  KnotFunction() = default;
  /// n >= 2 knots; throws ConfigError otherwise.
  KnotFunction(int n, double range);

  int n_knots() const { return static_cast<int>(y_.size()); }
  double range() const { return range_; }
  double step() const { return 2.0 * range_ / (n_knots() - 1); }
  double abscissa(int j) const { return -range_ + j * step(); }

  const std::vector<double>& ordinates() const { return y_; }
  std::vector<double>& ordinates() { return y_; }

  /// Sets f(t) = t on the lattice (and everywhere, by linearity).
  void set_identity();
  void set_zero();

  double eval(double t) const;

  /// Value, local slope df/dt, and the two ordinate indices/weights through
  /// which gradients flow: df/dy[j0] = w0, df/dy[j1] = w1.
  struct Eval {
    double value;
    double slope;
    int j0, j1;
    double w0, w1;
  };
  Eval eval_full(double t) const;

 private:
  double range_ = 1.0;
  std::vector<double> y_;
};

} // namespace sosuq
