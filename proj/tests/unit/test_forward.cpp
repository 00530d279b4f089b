#include <catch2/catch_amalgamated.hpp>

#include "qpat/forward.hpp"
#include "qpat/rng.hpp"

using namespace qpat;

TEST_CASE("forward pressure is the elementwise product") {
  Field2D mu_a(4, 4, 1.0, 0.2), phi(4, 4, 1.0, 0.5);
  ForwardConfig cfg;
  cfg.noise_variance = 0.0;

  SECTION("unit fluence reproduces mu_a exactly") {
    Field2D ones(4, 4, 1.0, 1.0);
    Field2D p = forward_pressure(mu_a, ones, cfg);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == 0.2);
  }
  SECTION("zero absorber gives zero image") {
    Field2D zeros(4, 4, 1.0, 0.0);
    Field2D p = forward_pressure(zeros, phi, cfg);
    CHECK(p.max() == 0.0);
  }
  SECTION("pointwise value") {
    Field2D p = forward_pressure(mu_a, phi, cfg);
    CHECK(p(1, 1) == Catch::Approx(0.1).epsilon(1e-15));
  }
  SECTION("geometry mismatch") {
    Field2D narrow(3, 4, 1.0, 0.5);
    CHECK_THROWS_AS(forward_pressure(mu_a, narrow, cfg), std::invalid_argument);
  }
}

TEST_CASE("forward pressure is bilinear and scales with gruneisen") {
  Rng rng(21);
  Field2D a(6, 6, 1.0), f(6, 6, 1.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = rng.uniform(0, 1);
    f[i] = rng.uniform(0, 1);
  }
  ForwardConfig cfg;
  Field2D base = forward_pressure(a, f, cfg);
  Field2D a2 = a;
  for (std::size_t i = 0; i < a2.size(); ++i) a2[i] *= 3.0;
  Field2D scaled = forward_pressure(a2, f, cfg);
  for (std::size_t i = 0; i < base.size(); ++i)
    CHECK(scaled[i] == Catch::Approx(3.0 * base[i]).margin(1e-15));
  ForwardConfig cfg2 = cfg;
  cfg2.gruneisen = 2.5;
  Field2D gamma = forward_pressure(a, f, cfg2);
  for (std::size_t i = 0; i < base.size(); ++i)
    CHECK(gamma[i] == Catch::Approx(2.5 * base[i]).margin(1e-15));
}

TEST_CASE("noise statistics match the configured variance") {
  ForwardConfig cfg;
  cfg.noise_variance = 2e-5;
  cfg.noise_seed = 77;
  Field2D zeros(300, 300, 80.0 / 300.0, 0.0);
  Field2D noisy = add_noise(zeros, cfg);

  const double n = double(noisy.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < noisy.size(); ++i) mean += noisy[i];
  mean /= n;
  double var = 0.0;
  for (std::size_t i = 0; i < noisy.size(); ++i) var += (noisy[i] - mean) * (noisy[i] - mean);
  var /= (n - 1.0);

  CHECK(std::fabs(mean) <= 3.0 * std::sqrt(2e-5 / n));
  CHECK(var == Catch::Approx(2e-5).epsilon(0.05));
}

TEST_CASE("noise is deterministic per seed and silent at variance zero") {
  ForwardConfig cfg;
  cfg.noise_seed = 1234;
  Field2D img(32, 32, 1.0, 0.5);
  Field2D n1 = add_noise(img, cfg);
  Field2D n2 = add_noise(img, cfg);
  CHECK(std::memcmp(n1.data(), n2.data(), n1.size() * 8) == 0);

  ForwardConfig quiet = cfg;
  quiet.noise_variance = 0.0;
  Field2D same = add_noise(img, quiet);
  CHECK(std::memcmp(same.data(), img.data(), img.size() * 8) == 0);
}

TEST_CASE("different seeds decorrelate") {
  ForwardConfig c1, c2;
  c1.noise_seed = 1;
  c2.noise_seed = 2;
  Field2D zeros(300, 300, 1.0, 0.0);
  Field2D a = add_noise(zeros, c1), b = add_noise(zeros, c2);
  double ma = 0, mb = 0;
  const double n = double(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  CHECK(std::fabs(cov / std::sqrt(va * vb)) < 0.05);
}

TEST_CASE("max_normalize scales the peak to one") {
  Field2D f(4, 4, 1.0, 0.0);
  f(2, 2) = 5.0;
  f(1, 1) = 2.5;
  Field2D n = max_normalize(f);
  CHECK(n.max() == 1.0);
  CHECK(n(1, 1) == 0.5);
  Field2D zeros(4, 4, 1.0, 0.0);
  Field2D still = max_normalize(zeros);
  CHECK(still.max() == 0.0);
}
