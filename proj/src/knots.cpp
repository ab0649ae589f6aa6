#include "sosuq/knots.hpp"

#include <algorithm>
#include <cmath>

#include "sosuq/errors.hpp"

namespace sosuq {

KnotFunction::KnotFunction(int n, double range) : range_(range) {
  if (n < 2) throw ConfigError("knot function: need at least 2 knots");
  if (!(range > 0)) throw ConfigError("knot function: range must be positive");
  y_.assign(static_cast<size_t>(n), 0.0);
}

void KnotFunction::set_identity() {
  for (int j = 0; j < n_knots(); ++j) y_[static_cast<size_t>(j)] = abscissa(j);
}

void KnotFunction::set_zero() { std::fill(y_.begin(), y_.end(), 0.0); }

KnotFunction::Eval KnotFunction::eval_full(double t) const {
  // Cell selection clamps to the end segments, so out-of-range arguments
  // extrapolate linearly and gradients still reach the end ordinates.
  double u = (t + range_) / step();
  int j = std::clamp(static_cast<int>(std::floor(u)), 0, n_knots() - 2);
  double w1 = u - j;
  double w0 = 1.0 - w1;
  Eval e;
  e.j0 = j;
  e.j1 = j + 1;
  e.w0 = w0;
  e.w1 = w1;
  e.value = w0 * y_[static_cast<size_t>(j)] + w1 * y_[static_cast<size_t>(j + 1)];
  e.slope = (y_[static_cast<size_t>(j + 1)] - y_[static_cast<size_t>(j)]) / step();
  return e;
}

double KnotFunction::eval(double t) const { return eval_full(t).value; }

} // namespace sosuq
