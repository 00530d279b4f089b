#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "qpat/bessel.hpp"

using namespace qpat;

namespace {

// Independent oracle: K0(x) = integral_0^inf exp(-x cosh t) dt, evaluated by
// composite Simpson. The integrand decays double-exponentially, so a modest
// truncation point and step give far more accuracy than the polynomial
// approximations under test.
double k0_quadrature(double x) {
  const double t_max = std::acosh(745.0 / x); // exp underflows beyond this
  const int n = 8000;                         // even
  const double h = t_max / n;
  auto f = [&](double t) { return std::exp(-x * std::cosh(t)); };
  double acc = f(0.0) + f(t_max);
  for (int i = 1; i < n; ++i) acc += f(i * h) * (i % 2 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

// Ascending series for I0; converges quickly for the x range used here.
double i0_series(double x) {
  const double q = x * x / 4.0;
  double term = 1.0, sum = 1.0;
  for (int k = 1; k < 60; ++k) {
    term *= q / (double(k) * k);
    sum += term;
    if (term < 1e-18 * sum) break;
  }
  return sum;
}

} // namespace

TEST_CASE("bessel_i0 matches the ascending series") {
  for (double x : {0.01, 0.1, 0.5, 1.0, 2.0, 3.7, 3.8, 5.0, 8.0, 12.0}) {
    const double ref = i0_series(x);
    CHECK(bessel_i0(x) == Catch::Approx(ref).epsilon(5e-7));
  }
}

TEST_CASE("bessel_k0 matches the integral representation") {
  for (double x : {0.05, 0.2, 0.5, 1.0, 1.9, 2.0, 2.1, 3.0, 5.0, 8.0, 12.0, 15.0}) {
    const double ref = k0_quadrature(x);
    CHECK(bessel_k0(x) == Catch::Approx(ref).epsilon(7e-7));
  }
}

TEST_CASE("bessel_k0 domain and monotonicity") {
  CHECK_THROWS_AS(bessel_k0(0.0), std::invalid_argument);
  CHECK_THROWS_AS(bessel_k0(-1.0), std::invalid_argument);
  double prev = bessel_k0(0.05);
  for (double x = 0.1; x < 10.0; x += 0.1) {
    const double v = bessel_k0(x);
    CHECK(v < prev);
    prev = v;
  }
}
