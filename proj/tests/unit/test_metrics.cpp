#include <catch2/catch_amalgamated.hpp>

#include "qpat/metrics.hpp"
#include "qpat/rng.hpp"

using namespace qpat;

namespace {

Field2D from(std::vector<double> v, int w, int h) { return Field2D(w, h, 1.0, std::move(v)); }

} // namespace

TEST_CASE("rmse forced arithmetic") {
  CHECK(rmse(from({1, 1, 0, 0}, 2, 2), from({1, 1, 0, 0}, 2, 2)) == 0.0);
  // T = [1,1], M = [0,0] -> 1
  CHECK(rmse(from({1, 1, 1, 1}, 2, 2), from({0, 0, 0, 0}, 2, 2)) == Catch::Approx(1.0));
  // T = [0,1], M = [1,1] -> sqrt(0.5)
  CHECK(rmse(from({0, 1, 0, 1}, 2, 2), from({1, 1, 1, 1}, 2, 2)) ==
        Catch::Approx(std::sqrt(0.5)).epsilon(1e-12));
  CHECK_THROWS_AS(rmse(from({0, 1, 0, 1}, 2, 2), Field2D(3, 2, 1.0)), std::invalid_argument);
}

TEST_CASE("rmse symmetry and constant-offset identity") {
  Rng rng(8);
  Field2D a(7, 5, 1.0), b(7, 5, 1.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = rng.uniform(-1, 1);
    b[i] = rng.uniform(-1, 1);
  }
  CHECK(rmse(a, b) == Catch::Approx(rmse(b, a)).epsilon(1e-15));
  Field2D c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += 0.37;
  CHECK(rmse(a, c) == Catch::Approx(0.37).epsilon(1e-12));
}

TEST_CASE("psnr forced arithmetic and sentinels") {
  // MAX = 1, RMSE = 0.01 -> 40 dB
  Field2D t = from({1, 0, 0, 0.5}, 2, 2);
  Field2D m = t;
  // construct an estimate with rmse exactly 0.01: perturb one of 4 pixels by 0.02
  m[1] += 0.02;
  CHECK(rmse(t, m) == Catch::Approx(0.01).epsilon(1e-12));
  CHECK(psnr(t, m) == Catch::Approx(40.0).epsilon(1e-9));

  CHECK(std::isinf(psnr(t, t)));
  Field2D zero = from({0, 0, 0, 0}, 2, 2);
  CHECK_THROWS_AS(psnr(zero, m), std::invalid_argument);
}

TEST_CASE("psnr decreases as rmse grows at fixed peak") {
  Field2D t = from({1, 0.2, 0.4, 0.8}, 2, 2);
  Field2D m1 = t, m2 = t;
  m1[2] += 0.01;
  m2[2] += 0.05;
  CHECK(psnr(t, m1) > psnr(t, m2));
}

TEST_CASE("reported pairs are internally consistent") {
  // A published row with RMSE 0.00041 and PSNR 50.909 dB implies a peak of
  // about 0.144; invert the definition and check to three significant digits.
  const double implied_peak = 0.00041 * std::pow(10.0, 50.909 / 20.0);
  CHECK(implied_peak == Catch::Approx(0.144).epsilon(5e-3));
  CHECK(psnr_from(implied_peak, 0.00041) == Catch::Approx(50.909).margin(1e-9));
}
