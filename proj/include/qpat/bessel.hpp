#pragma once

#include <cmath>
#include <stdexcept>

namespace qpat {

/// Modified Bessel function I0(x), polynomial approximation
/// (Abramowitz & Stegun 9.8.1 / 9.8.2, |error| < 1.6e-7 relative).
inline double bessel_i0(double x) {
  const double ax = std::fabs(x);
  if (ax < 3.75) {
    const double t = (x / 3.75) * (x / 3.75);
    return 1.0 + t * (3.5156229 + t * (3.0899424 + t * (1.2067492 +
           t * (0.2659732 + t * (0.0360768 + t * 0.0045813)))));
  }
  const double t = 3.75 / ax;
  const double poly = 0.39894228 + t * (0.01328592 + t * (0.00225319 +
      t * (-0.00157565 + t * (0.00916281 + t * (-0.02057706 +
      t * (0.02635537 + t * (-0.01647633 + t * 0.00392377)))))));
  return (std::exp(ax) / std::sqrt(ax)) * poly;
}

/// Modified Bessel function K0(x), x > 0
/// (Abramowitz & Stegun 9.8.5 / 9.8.6, |error| < 1e-7).
inline double bessel_k0(double x) {
  if (!(x > 0.0)) throw std::invalid_argument("bessel_k0: x must be positive");
  if (x <= 2.0) {
    const double t = x * x / 4.0;
    const double poly = -0.57721566 + t * (0.42278420 + t * (0.23069756 +
        t * (0.03488590 + t * (0.00262698 + t * (0.00010750 + t * 0.00000740)))));
    return -std::log(x / 2.0) * bessel_i0(x) + poly;
  }
  const double t = 2.0 / x;
  const double poly = 1.25331414 + t * (-0.07832358 + t * (0.02189568 +
      t * (-0.01062446 + t * (0.00587872 + t * (-0.00251540 + t * 0.00053208)))));
  return (std::exp(-x) / std::sqrt(x)) * poly;
}

} // namespace qpat
