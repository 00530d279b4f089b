#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "qpat/field.hpp"
#include "qpat/rng.hpp"

using namespace qpat;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  auto dir = fs::temp_directory_path() / "qpat_field_tests";
  fs::create_directories(dir);
  return dir;
}

Field2D random_field(int w, int h, double spacing, std::uint64_t seed) {
  Field2D f(w, h, spacing);
  Rng rng(seed);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = rng.uniform(-3.0, 7.0);
  return f;
}

} // namespace

TEST_CASE("make_field fills constant values") {
  GridGeometry g{300, 300, 80.0 / 300.0, 40.0};
  REQUIRE(g.valid());
  Field2D f = make_field(g, 0.0);
  CHECK(f.sum() == 0.0);
  CHECK(f.width() == 300);
  CHECK(f.height() == 300);

  // 300x300 with 80/300 mm spacing holds a 40 mm radius domain exactly.
  CHECK(g.domain_radius_mm == Catch::Approx(g.extent_x_mm() / 2.0));
}

TEST_CASE("make_field rejects bad input") {
  GridGeometry g{300, 300, 80.0 / 300.0, 40.0};
  CHECK_THROWS_AS(make_field(g, std::nan("")), std::invalid_argument);
  GridGeometry bad = g;
  bad.domain_radius_mm = 41.0; // larger than the half extent
  CHECK_THROWS_AS(make_field(bad, 0.0), std::invalid_argument);
  bad = g;
  bad.width = 1;
  CHECK_THROWS_AS(make_field(bad, 0.0), std::invalid_argument);
  bad = g;
  bad.spacing_mm = 0.0;
  CHECK_THROWS_AS(make_field(bad, 0.0), std::invalid_argument);
}

TEST_CASE("field file round trip is bit exact") {
  const auto path = temp_dir() / "roundtrip.f2d";
  Field2D f = random_field(64, 64, 0.25, 42);
  save_field(f, path);
  Field2D g = load_field(path);
  REQUIRE(g.width() == f.width());
  REQUIRE(g.height() == f.height());
  REQUIRE(g.spacing() == f.spacing());
  REQUIRE(std::memcmp(g.data(), f.data(), f.size() * 8) == 0);
}

TEST_CASE("field loader detects corruption") {
  const auto dir = temp_dir();
  Field2D f = random_field(10, 10, 1.0, 7);

  SECTION("truncated file") {
    const auto path = dir / "trunc.f2d";
    save_field(f, path);
    fs::resize_file(path, fs::file_size(path) - 17);
    CHECK_THROWS_AS(load_field(path), format_error);
  }
  SECTION("bad magic") {
    const auto path = dir / "magic.f2d";
    save_field(f, path);
    std::fstream s(path, std::ios::in | std::ios::out | std::ios::binary);
    s.write("NOPE", 4);
    s.close();
    CHECK_THROWS_AS(load_field(path), format_error);
  }
  SECTION("header dims disagree with payload length") {
    const auto path = dir / "short.f2d";
    std::ofstream out(path, std::ios::binary);
    out.write("F2D1", 4);
    std::uint32_t w = 10, h = 10;
    double sp = 1.0;
    out.write(reinterpret_cast<char*>(&w), 4);
    out.write(reinterpret_cast<char*>(&h), 4);
    out.write(reinterpret_cast<char*>(&sp), 8);
    double v = 1.5;
    for (int i = 0; i < 50; ++i) out.write(reinterpret_cast<char*>(&v), 8);
    out.close();
    CHECK_THROWS_AS(load_field(path), format_error);
  }
  SECTION("trailing bytes") {
    const auto path = dir / "extra.f2d";
    save_field(f, path);
    std::ofstream out(path, std::ios::binary | std::ios::app);
    out.put('x');
    out.close();
    CHECK_THROWS_AS(load_field(path), format_error);
  }
}

TEST_CASE("resample at identical dims is the identity") {
  Field2D f = random_field(33, 21, 0.5, 99);
  Field2D g = resample_field(f, 33, 21);
  CHECK(std::memcmp(g.data(), f.data(), f.size() * 8) == 0);
}

TEST_CASE("resample keeps constants constant") {
  Field2D f(17, 17, 1.0, 3.25);
  for (auto dims : {std::pair{8, 8}, {40, 40}, {17, 50}}) {
    Field2D g = resample_field(f, dims.first, dims.second);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == Catch::Approx(3.25).epsilon(1e-14));
  }
}

TEST_CASE("resample reproduces affine fields exactly") {
  const int w = 24, h = 16;
  Field2D f(w, h, 0.5);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) f(x, y) = 2.0 + 0.75 * x - 0.25 * y;
  for (auto dims : {std::pair{47, 31}, {12, 9}, {70, 16}}) {
    Field2D g = resample_field(f, dims.first, dims.second);
    const double sx = double(w - 1) / (dims.first - 1);
    const double sy = double(h - 1) / (dims.second - 1);
    for (int y = 0; y < g.height(); ++y)
      for (int x = 0; x < g.width(); ++x) {
        const double expected = 2.0 + 0.75 * (x * sx) - 0.25 * (y * sy);
        REQUIRE(g(x, y) == Catch::Approx(expected).margin(1e-12));
      }
  }
}

TEST_CASE("resample output stays within input bounds") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const int w = 5 + int(rng.uniform_index(30));
    const int h = 5 + int(rng.uniform_index(30));
    Field2D f = random_field(w, h, 1.0, rng.next_u64());
    const int nw = 2 + int(rng.uniform_index(60));
    const int nh = 2 + int(rng.uniform_index(60));
    Field2D g = resample_field(f, nw, nh);
    CHECK(g.min() >= f.min() - 1e-12);
    CHECK(g.max() <= f.max() + 1e-12);
  }
}

TEST_CASE("resample preserves the physical span of sample centers") {
  Field2D f = random_field(21, 21, 1.0, 5);
  Field2D g = resample_field(f, 41, 41);
  // span between first and last pixel centers is invariant
  CHECK((g.width() - 1) * g.spacing() == Catch::Approx((f.width() - 1) * f.spacing()));
}

TEST_CASE("pgm export writes a readable image") {
  const auto path = temp_dir() / "field.pgm";
  Field2D f = random_field(12, 8, 1.0, 11);
  save_pgm(f, path);
  std::ifstream in(path, std::ios::binary);
  std::string magic;
  in >> magic;
  CHECK(magic == "P5");
  int w = 0, h = 0, maxv = 0;
  in >> w >> h >> maxv;
  CHECK(w == 12);
  CHECK(h == 8);
  CHECK(maxv == 255);
}
