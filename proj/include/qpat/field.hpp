#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "qpat/errors.hpp"

namespace qpat {

/// Uniform square-pixel grid with a circular region of interest inscribed
/// in it. Pixel (ix, iy) has its center at
///   x = (ix + 0.5) * spacing - width  * spacing / 2
///   y = (iy + 0.5) * spacing - height * spacing / 2
/// so the grid is centered on the origin.
struct GridGeometry {
  int width = 0;
  int height = 0;
  double spacing_mm = 0.0;
  double domain_radius_mm = 0.0;

  bool valid() const {
    if (width < 2 || height < 2) return false;
    if (!(spacing_mm > 0.0) || !std::isfinite(spacing_mm)) return false;
    if (!(domain_radius_mm > 0.0) || !std::isfinite(domain_radius_mm)) return false;
    return domain_radius_mm <= std::min(width, height) * spacing_mm / 2.0 + 1e-12;
  }

  double extent_x_mm() const { return width * spacing_mm; }
  double extent_y_mm() const { return height * spacing_mm; }
  double pixel_x(int ix) const { return (ix + 0.5) * spacing_mm - extent_x_mm() / 2.0; }
  double pixel_y(int iy) const { return (iy + 0.5) * spacing_mm - extent_y_mm() / 2.0; }

  bool operator==(const GridGeometry&) const = default;
};

/// Scalar field sampled on a uniform grid, stored row-major (y outer, x inner).
/// Values are finite 64-bit reals; construction and every public operation
/// keep that invariant.
class Field2D {
public:
  Field2D() = default;

  Field2D(int width, int height, double spacing_mm, double fill = 0.0)
      : width_(width), height_(height), spacing_(spacing_mm),
        values_(check_dims(width, height), fill) {
    if (!(spacing_mm > 0.0) || !std::isfinite(spacing_mm))
      throw std::invalid_argument("Field2D: spacing must be positive and finite");
    if (!std::isfinite(fill))
      throw std::invalid_argument("Field2D: fill value must be finite");
  }

  Field2D(int width, int height, double spacing_mm, std::vector<double> values)
      : width_(width), height_(height), spacing_(spacing_mm), values_(std::move(values)) {
    if (!(spacing_mm > 0.0) || !std::isfinite(spacing_mm))
      throw std::invalid_argument("Field2D: spacing must be positive and finite");
    if (values_.size() != check_dims(width, height))
      throw std::invalid_argument("Field2D: value count does not match dimensions");
    for (double v : values_)
      if (!std::isfinite(v)) throw std::invalid_argument("Field2D: non-finite value");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  double spacing() const { return spacing_; }
  std::size_t size() const { return values_.size(); }

  double operator()(int ix, int iy) const { return values_[std::size_t(iy) * width_ + ix]; }
  double& operator()(int ix, int iy) { return values_[std::size_t(iy) * width_ + ix]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }
  const double* data() const { return values_.data(); }
  double* data() { return values_.data(); }

  bool same_shape(const Field2D& other) const {
    return width_ == other.width_ && height_ == other.height_ &&
           spacing_ == other.spacing_;
  }

  double min() const { return *std::min_element(values_.begin(), values_.end()); }
  double max() const { return *std::max_element(values_.begin(), values_.end()); }

  double sum() const {
    double s = 0.0;
    for (double v : values_) s += v;
    return s;
  }

  bool all_finite() const {
    for (double v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

private:
  static std::size_t check_dims(int width, int height) {
    if (width < 2 || height < 2)
      throw std::invalid_argument("Field2D: dimensions must be at least 2x2");
    return std::size_t(width) * std::size_t(height);
  }

  int width_ = 0;
  int height_ = 0;
  double spacing_ = 1.0;
  std::vector<double> values_;
};

inline Field2D make_field(const GridGeometry& geometry, double fill) {
  if (!geometry.valid())
    throw std::invalid_argument("make_field: invalid grid geometry");
  return Field2D(geometry.width, geometry.height, geometry.spacing_mm, fill);
}

inline GridGeometry geometry_of(const Field2D& field, double domain_radius_mm) {
  return GridGeometry{field.width(), field.height(), field.spacing(), domain_radius_mm};
}

// ---------------------------------------------------------------------------
// Binary file format. Little-endian throughout:
//   "F2D1" | width u32 | height u32 | spacing f64 | width*height f64 row-major
// ---------------------------------------------------------------------------

namespace detail {

inline void write_bytes(std::ofstream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::ifstream& in, void* p, std::size_t n, const char* what) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (in.gcount() != static_cast<std::streamsize>(n))
    throw format_error(std::string("field file truncated while reading ") + what);
}

} // namespace detail

inline void save_field(const Field2D& field, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_field: cannot open " + path.string());
  const char magic[4] = {'F', '2', 'D', '1'};
  const std::uint32_t w = static_cast<std::uint32_t>(field.width());
  const std::uint32_t h = static_cast<std::uint32_t>(field.height());
  const double s = field.spacing();
  detail::write_bytes(out, magic, 4);
  detail::write_bytes(out, &w, 4);
  detail::write_bytes(out, &h, 4);
  detail::write_bytes(out, &s, 8);
  detail::write_bytes(out, field.data(), field.size() * 8);
  if (!out) throw std::runtime_error("save_field: write failed for " + path.string());
}

inline Field2D load_field(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_field: cannot open " + path.string());
  char magic[4];
  detail::read_bytes(in, magic, 4, "magic");
  if (std::memcmp(magic, "F2D1", 4) != 0)
    throw format_error("load_field: bad magic in " + path.string());
  std::uint32_t w = 0, h = 0;
  double spacing = 0.0;
  detail::read_bytes(in, &w, 4, "width");
  detail::read_bytes(in, &h, 4, "height");
  detail::read_bytes(in, &spacing, 8, "spacing");
  if (w < 2 || h < 2 || w > (1u << 20) || h > (1u << 20))
    throw format_error("load_field: implausible dimensions in " + path.string());
  std::vector<double> values(std::size_t(w) * h);
  detail::read_bytes(in, values.data(), values.size() * 8, "values");
  char extra;
  if (in.read(&extra, 1).gcount() != 0)
    throw format_error("load_field: trailing bytes in " + path.string());
  try {
    return Field2D(static_cast<int>(w), static_cast<int>(h), spacing, std::move(values));
  } catch (const std::invalid_argument& e) {
    throw format_error("load_field: invalid content in " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

/// Bilinear resampling onto a new grid covering the same physical object.
/// Sample positions align the first and last pixel centers of both grids,
/// so the interpolation never extrapolates: output values are convex
/// combinations of input values and affine fields are reproduced exactly.
/// The spacing is rescaled by (width-1)/(new_width-1).
inline Field2D resample_field(const Field2D& field, int new_width, int new_height) {
  if (new_width < 2 || new_height < 2)
    throw std::invalid_argument("resample_field: target dimensions must be at least 2x2");
  if (new_width == field.width() && new_height == field.height()) return field;

  const int w = field.width(), h = field.height();
  const double sx = double(w - 1) / double(new_width - 1);
  const double sy = double(h - 1) / double(new_height - 1);
  const double new_spacing = field.spacing() * sx;

  std::vector<double> out(std::size_t(new_width) * new_height);
  for (int oy = 0; oy < new_height; ++oy) {
    const double fy = oy * sy;
    int y0 = std::min(int(fy), h - 2);
    const double wy = fy - y0;
    for (int ox = 0; ox < new_width; ++ox) {
      const double fx = ox * sx;
      int x0 = std::min(int(fx), w - 2);
      const double wx = fx - x0;
      const double v00 = field(x0, y0), v10 = field(x0 + 1, y0);
      const double v01 = field(x0, y0 + 1), v11 = field(x0 + 1, y0 + 1);
      out[std::size_t(oy) * new_width + ox] =
          (1 - wy) * ((1 - wx) * v00 + wx * v10) + wy * ((1 - wx) * v01 + wx * v11);
    }
  }
  return Field2D(new_width, new_height, new_spacing, std::move(out));
}

// ---------------------------------------------------------------------------
// PGM export (visual inspection only; min-max normalized to 8 bits)
// ---------------------------------------------------------------------------

inline void save_pgm(const Field2D& field, const std::filesystem::path& path) {
  const double lo = field.min(), hi = field.max();
  const double scale = (hi > lo) ? 255.0 / (hi - lo) : 0.0;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_pgm: cannot open " + path.string());
  out << "P5\n" << field.width() << " " << field.height() << "\n255\n";
  std::vector<unsigned char> row(field.width());
  for (int y = 0; y < field.height(); ++y) {
    for (int x = 0; x < field.width(); ++x)
      row[x] = static_cast<unsigned char>(std::lround((field(x, y) - lo) * scale));
    out.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
}

} // namespace qpat
