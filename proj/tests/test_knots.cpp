#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "sosuq/errors.hpp"
#include "sosuq/knots.hpp"
#include "sosuq/rng.hpp"

using namespace sosuq;

TEST_CASE("construction validates the knot count") {
  CHECK_THROWS_AS(KnotFunction(1, 1.0), ConfigError);
  CHECK_THROWS_AS(KnotFunction(0, 1.0), ConfigError);
  CHECK_NOTHROW(KnotFunction(2, 1.0));
}

TEST_CASE("abscissa lattice is uniform over [-range, range]") {
  KnotFunction f(7, 2.5);
  CHECK(f.n_knots() == 7);
  CHECK(f.range() == 2.5);
  CHECK(f.step() == doctest::Approx(5.0 / 6.0));
  CHECK(f.abscissa(0) == doctest::Approx(-2.5));
  CHECK(f.abscissa(6) == doctest::Approx(2.5));
  for (int j = 0; j + 1 < f.n_knots(); ++j)
    CHECK(f.abscissa(j + 1) - f.abscissa(j) == doctest::Approx(f.step()));
}

TEST_CASE("identity and zero initializers") {
  KnotFunction f(9, 1.5);
  f.set_identity();
  for (int j = 0; j < f.n_knots(); ++j)
    CHECK(f.ordinates()[j] == doctest::Approx(f.abscissa(j)));
  Rng r(5);
  for (int k = 0; k < 50; ++k) {
    const double t = r.uniform(-4.0, 4.0);  // identity extrapolates as t
    CHECK(f.eval(t) == doctest::Approx(t).epsilon(1e-12));
  }
  f.set_zero();
  for (double y : f.ordinates()) CHECK(y == 0.0);
  CHECK(f.eval(0.7) == 0.0);
  CHECK(f.eval(9.0) == 0.0);
}

TEST_CASE("evaluation interpolates linearly between knots") {
  KnotFunction f(5, 1.0);  // knots at -1, -0.5, 0, 0.5, 1
  f.ordinates() = {2.0, -1.0, 0.5, 3.0, 3.0};

  CHECK(f.eval(-1.0) == doctest::Approx(2.0));
  CHECK(f.eval(-0.75) == doctest::Approx(0.5));   // midpoint of 2 and -1
  CHECK(f.eval(-0.5) == doctest::Approx(-1.0));
  CHECK(f.eval(0.25) == doctest::Approx(1.75));   // midpoint of 0.5 and 3
  CHECK(f.eval(0.75) == doctest::Approx(3.0));    // flat end segment
  CHECK(f.eval(1.0) == doctest::Approx(3.0));

  // Linear extrapolation with the end-segment slopes.
  const double slope_lo = (-1.0 - 2.0) / 0.5;
  CHECK(f.eval(-1.4) == doctest::Approx(2.0 + slope_lo * -0.4));
  const double slope_hi = (3.0 - 3.0) / 0.5;
  CHECK(f.eval(2.3) == doctest::Approx(3.0 + slope_hi * 1.3));
}

TEST_CASE("eval_full exposes consistent value, slope, and weights") {
  KnotFunction f(11, 1.0);
  Rng r(17);
  for (double& y : f.ordinates()) y = r.uniform(-2.0, 2.0);

  for (int k = 0; k < 200; ++k) {
    const double t = r.uniform(-1.8, 1.8);
    const auto e = f.eval_full(t);
    CHECK(e.value == doctest::Approx(f.eval(t)).epsilon(1e-14));

    // Weights reconstruct the value from the two referenced ordinates.
    REQUIRE(e.j0 >= 0);
    REQUIRE(e.j1 < f.n_knots());
    const double rebuilt =
        e.w0 * f.ordinates()[e.j0] + e.w1 * f.ordinates()[e.j1];
    CHECK(rebuilt == doctest::Approx(e.value).epsilon(1e-12));
    CHECK(e.w0 + e.w1 == doctest::Approx(1.0).epsilon(1e-12));

    // Slope matches a central difference that stays inside one segment.
    const double h = f.step() * 1e-6;
    const double fd = (f.eval(t + h) - f.eval(t - h)) / (2 * h);
    // Skip points that straddle a knot, where the slope jumps.
    const double u = (t + f.range()) / f.step();
    if (std::abs(u - std::round(u)) * f.step() > 2 * h)
      CHECK(e.slope == doctest::Approx(fd).epsilon(1e-6));

    // Gradient weights match finite differences in the ordinates.
    const double dy = 1e-6;
    KnotFunction g = f;
    g.ordinates()[e.j0] += dy;
    const double d0 = (g.eval(t) - f.eval(t)) / dy;
    CHECK(d0 == doctest::Approx(e.w0).epsilon(1e-6).scale(1.0));
    if (e.j1 != e.j0) {
      KnotFunction h2 = f;
      h2.ordinates()[e.j1] += dy;
      const double d1 = (h2.eval(t) - f.eval(t)) / dy;
      CHECK(d1 == doctest::Approx(e.w1).epsilon(1e-6).scale(1.0));
    }
  }
}

TEST_CASE("extrapolation weights extend the end segments") {
  KnotFunction f(4, 1.0);  // step 2/3
  f.ordinates() = {0.0, 1.0, 1.0, 2.0};

  const auto lo = f.eval_full(-1.5);
  CHECK(lo.value == doctest::Approx(f.eval(-1.5)));
  const double rebuilt_lo =
      lo.w0 * f.ordinates()[lo.j0] + lo.w1 * f.ordinates()[lo.j1];
  CHECK(rebuilt_lo == doctest::Approx(lo.value).epsilon(1e-12));
  CHECK(lo.slope == doctest::Approx((1.0 - 0.0) / f.step()));

  const auto hi = f.eval_full(4.0);
  CHECK(hi.value == doctest::Approx(f.eval(4.0)));
  const double rebuilt_hi =
      hi.w0 * f.ordinates()[hi.j0] + hi.w1 * f.ordinates()[hi.j1];
  CHECK(rebuilt_hi == doctest::Approx(hi.value).epsilon(1e-12));
  CHECK(hi.slope == doctest::Approx((2.0 - 1.0) / f.step()));
}
