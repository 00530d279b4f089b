#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "qpat/bessel.hpp"
#include "qpat/errors.hpp"
#include "qpat/field.hpp"

namespace qpat {

/// Ring illumination: `count` isotropic Gaussian volume sources placed on an
/// arc. With inclusive endpoints the k-th source sits at
///   arc_start_degrees + k * arc_degrees / (count - 1),
/// one pixel inside the circular domain boundary.
struct SourceRing {
  int count = 5;
  double arc_degrees = 270.0;
  double arc_start_degrees = 90.0;
  double radius_mm = 40.0;
  double amplitude = 1.0;
  double sigma_mm = 1.0;

  bool valid() const {
    return count >= 1 && sigma_mm > 0.0 && radius_mm > 0.0 && amplitude >= 0.0 &&
           arc_degrees >= 0.0;
  }
};

enum class BoundaryModel {
  robin,   // partial-current condition phi + 2*A*D*dphi/dn = 0, A = 1
  neumann, // zero-flux boundary (testing variant)
};

/// Five-point finite-volume discretization of
///   -div(D grad phi) + mu_a phi = q,   D = 1 / (3 (mu_a + mu_s'))
/// over the circular region of interest. Cells outside the circle are
/// excluded from the system (kept at phi = 0). The operator is stored in
/// structured symmetric form: a diagonal plus the east/south face
/// conductances, which makes the matrix symmetric by construction and the
/// matrix-vector product a fixed-order (bitwise reproducible) loop.
struct DiffusionSystem {
  GridGeometry geometry;
  BoundaryModel boundary = BoundaryModel::robin;
  std::vector<std::uint8_t> active; // 1 = unknown inside the circular domain
  std::vector<double> diag;         // A(i,i); 1.0 on inactive cells
  std::vector<double> cond_east;    // conductance to (x+1, y); 0 at domain edges
  std::vector<double> cond_south;   // conductance to (x, y+1); 0 at domain edges
  std::vector<double> rhs;          // integrated source term q * h^2
  Field2D diffusion_map;            // D(r), for inspection

  std::size_t size() const { return diag.size(); }

  /// y = A x (serial, fixed evaluation order).
  void apply(const std::vector<double>& x, std::vector<double>& y) const {
    const int w = geometry.width, h = geometry.height;
    for (int iy = 0; iy < h; ++iy) {
      const std::size_t row = std::size_t(iy) * w;
      for (int ix = 0; ix < w; ++ix) {
        const std::size_t i = row + ix;
        double acc = diag[i] * x[i];
        if (ix + 1 < w) acc -= cond_east[i] * x[i + 1];
        if (ix > 0) acc -= cond_east[i - 1] * x[i - 1];
        if (iy + 1 < h) acc -= cond_south[i] * x[i + w];
        if (iy > 0) acc -= cond_south[i - w] * x[i - w];
        y[i] = acc;
      }
    }
  }

  /// Visits every nonzero entry (i, j, value), both triangles, for tests.
  template <typename Fn>
  void for_each_entry(Fn&& fn) const {
    const int w = geometry.width, h = geometry.height;
    for (int iy = 0; iy < h; ++iy)
      for (int ix = 0; ix < w; ++ix) {
        const std::size_t i = std::size_t(iy) * w + ix;
        fn(i, i, diag[i]);
        if (ix + 1 < w && cond_east[i] != 0.0) {
          fn(i, i + 1, -cond_east[i]);
          fn(i + 1, i, -cond_east[i]);
        }
        if (iy + 1 < h && cond_south[i] != 0.0) {
          fn(i, i + w, -cond_south[i]);
          fn(i + w, i, -cond_south[i]);
        }
      }
  }
};

namespace detail {

inline double harmonic_mean(double a, double b) { return 2.0 * a * b / (a + b); }

} // namespace detail

inline DiffusionSystem assemble_system(const GridGeometry& geometry,
                                       const Field2D& mu_a,
                                       const Field2D& mu_s_prime,
                                       const SourceRing& sources,
                                       BoundaryModel boundary = BoundaryModel::robin) {
  if (!geometry.valid()) throw std::invalid_argument("assemble_system: invalid geometry");
  if (!sources.valid()) throw std::invalid_argument("assemble_system: invalid source ring");
  if (mu_a.width() != geometry.width || mu_a.height() != geometry.height ||
      !mu_a.same_shape(mu_s_prime))
    throw std::invalid_argument("assemble_system: field shapes do not match geometry");

  const int w = geometry.width, h = geometry.height;
  const double hh = geometry.spacing_mm;
  const std::size_t n = std::size_t(w) * h;

  DiffusionSystem sys;
  sys.geometry = geometry;
  sys.boundary = boundary;
  sys.active.assign(n, 0);
  sys.diag.assign(n, 1.0);
  sys.cond_east.assign(n, 0.0);
  sys.cond_south.assign(n, 0.0);
  sys.rhs.assign(n, 0.0);
  sys.diffusion_map = Field2D(w, h, hh, 0.0);

  const double r2 = geometry.domain_radius_mm * geometry.domain_radius_mm;
  std::size_t active_count = 0;
  for (int iy = 0; iy < h; ++iy)
    for (int ix = 0; ix < w; ++ix) {
      const std::size_t i = std::size_t(iy) * w + ix;
      const double x = geometry.pixel_x(ix), y = geometry.pixel_y(iy);
      const bool inside = x * x + y * y <= r2;
      sys.active[i] = inside ? 1 : 0;
      active_count += inside;
      const double mu_t = mu_a[i] + mu_s_prime[i];
      if (inside && !(mu_t > 0.0))
        throw solver_error("assemble_system: nonpositive mu_a + mu_s' makes the "
                           "diffusion coefficient singular");
      sys.diffusion_map[i] = (mu_t > 0.0) ? 1.0 / (3.0 * mu_t) : 0.0;
    }
  if (active_count == 0)
    throw std::invalid_argument("assemble_system: circular domain contains no pixels");

  // Interior faces: harmonic-mean conductance. In 2D the face length and the
  // center distance are both h, so the geometric factor cancels.
  for (int iy = 0; iy < h; ++iy)
    for (int ix = 0; ix < w; ++ix) {
      const std::size_t i = std::size_t(iy) * w + ix;
      if (!sys.active[i]) continue;
      if (ix + 1 < w && sys.active[i + 1])
        sys.cond_east[i] = detail::harmonic_mean(sys.diffusion_map[i], sys.diffusion_map[i + 1]);
      if (iy + 1 < h && sys.active[i + w])
        sys.cond_south[i] = detail::harmonic_mean(sys.diffusion_map[i], sys.diffusion_map[i + w]);
    }

  // Diagonal: sum of face conductances + absorption mass term + Robin faces.
  const double robin_a = 1.0;
  for (int iy = 0; iy < h; ++iy)
    for (int ix = 0; ix < w; ++ix) {
      const std::size_t i = std::size_t(iy) * w + ix;
      if (!sys.active[i]) continue;
      double d = mu_a[i] * hh * hh;
      int boundary_faces = 0;
      if (ix + 1 < w && sys.active[i + 1]) d += sys.cond_east[i]; else ++boundary_faces;
      if (ix > 0 && sys.active[i - 1]) d += sys.cond_east[i - 1]; else ++boundary_faces;
      if (iy + 1 < h && sys.active[i + w]) d += sys.cond_south[i]; else ++boundary_faces;
      if (iy > 0 && sys.active[i - w]) d += sys.cond_south[i - w]; else ++boundary_faces;
      if (sys.boundary == BoundaryModel::robin && boundary_faces > 0) {
        // Partial-current face conductance: series combination of the
        // boundary admittance 1/(2A) and the half-cell diffusion path.
        const double dc = sys.diffusion_map[i];
        d += boundary_faces * hh / (2.0 * robin_a + hh / (2.0 * dc));
      }
      sys.diag[i] = d;
    }

  // Sources: normalized Gaussian footprints integrated per cell, placed one
  // pixel inside the domain boundary along the arc.
  const double place_radius = std::min(sources.radius_mm, geometry.domain_radius_mm) - hh;
  const double sigma = sources.sigma_mm;
  const double norm = sources.amplitude / (2.0 * std::numbers::pi * sigma * sigma);
  const double cutoff = 6.0 * sigma;
  for (int k = 0; k < sources.count; ++k) {
    const double step = (sources.count > 1) ? sources.arc_degrees / (sources.count - 1) : 0.0;
    const double ang = (sources.arc_start_degrees + k * step) * std::numbers::pi / 180.0;
    const double sx = place_radius * std::cos(ang);
    const double sy = place_radius * std::sin(ang);
    const int x0 = std::max(0, int((sx - cutoff + geometry.extent_x_mm() / 2) / hh) - 1);
    const int x1 = std::min(w - 1, int((sx + cutoff + geometry.extent_x_mm() / 2) / hh) + 1);
    const int y0 = std::max(0, int((sy - cutoff + geometry.extent_y_mm() / 2) / hh) - 1);
    const int y1 = std::min(h - 1, int((sy + cutoff + geometry.extent_y_mm() / 2) / hh) + 1);
    for (int iy = y0; iy <= y1; ++iy)
      for (int ix = x0; ix <= x1; ++ix) {
        const std::size_t i = std::size_t(iy) * w + ix;
        if (!sys.active[i]) continue;
        const double dx = geometry.pixel_x(ix) - sx;
        const double dy = geometry.pixel_y(iy) - sy;
        sys.rhs[i] += norm * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma)) * hh * hh;
      }
  }

  return sys;
}

/// Diagnostics from a fluence solve.
struct SolveInfo {
  int iterations = 0;
  double rel_residual = 0.0;
  double clamp_magnitude = 0.0; // largest negative value zeroed after the solve
  int clamped_pixels = 0;
};

inline int default_max_iterations(const GridGeometry& geometry) {
  return 10 * (geometry.width + geometry.height);
}

/// Diagonally preconditioned conjugate gradient. Serial and deterministic;
/// iterates until ||r|| / ||b|| <= tol. Negative pixels (discretization
/// undershoot) are clamped to zero after the solve and reported in `info`.
inline Field2D solve_fluence(const DiffusionSystem& sys, double tol = 1e-10,
                             int max_iter = 0, SolveInfo* info = nullptr) {
  const std::size_t n = sys.size();
  if (max_iter <= 0) max_iter = default_max_iterations(sys.geometry);

  std::vector<double> x(n, 0.0);
  double b_norm2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) b_norm2 += sys.rhs[i] * sys.rhs[i];

  SolveInfo local;
  if (b_norm2 == 0.0) {
    if (info) *info = local;
    return Field2D(sys.geometry.width, sys.geometry.height, sys.geometry.spacing_mm, 0.0);
  }

  std::vector<double> r = sys.rhs, z(n), p(n), v(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = r[i] / sys.diag[i];
  p = z;
  double rz = 0.0;
  for (std::size_t i = 0; i < n; ++i) rz += r[i] * z[i];

  double rel = std::sqrt(1.0); // ||r||/||b|| with x = 0
  int iter = 0;
  for (; iter < max_iter; ++iter) {
    sys.apply(p, v);
    double pv = 0.0;
    for (std::size_t i = 0; i < n; ++i) pv += p[i] * v[i];
    if (!(pv > 0.0))
      throw solver_error("solve_fluence: operator not positive definite", rel);
    const double alpha = rz / pv;
    double r_norm2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * v[i];
      r_norm2 += r[i] * r[i];
    }
    rel = std::sqrt(r_norm2 / b_norm2);
    if (rel <= tol) { ++iter; break; }
    double rz_new = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      z[i] = r[i] / sys.diag[i];
      rz_new += r[i] * z[i];
    }
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  if (rel > tol)
    throw solver_error("solve_fluence: no convergence within iteration budget", rel);

  local.iterations = iter;
  local.rel_residual = rel;
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i] < 0.0) {
      local.clamp_magnitude = std::max(local.clamp_magnitude, -x[i]);
      ++local.clamped_pixels;
      x[i] = 0.0;
    }
  }
  if (info) *info = local;
  return Field2D(sys.geometry.width, sys.geometry.height, sys.geometry.spacing_mm, std::move(x));
}

/// Closed-form fluence of a unit point source in an infinite homogeneous 2-D
/// medium: phi(r) = amplitude / (2 pi D) * K0(mu_eff * r) with
/// D = 1 / (3 (mu_a + mu_s')) and mu_eff = sqrt(mu_a / D). Validation oracle
/// for the grid solver.
inline double analytic_green(double mu_a, double mu_s_prime, double r_mm,
                             double amplitude = 1.0) {
  if (!(r_mm > 0.0)) throw std::invalid_argument("analytic_green: r must be positive");
  if (!(mu_a > 0.0) || !(mu_s_prime > 0.0))
    throw std::invalid_argument("analytic_green: coefficients must be positive");
  const double diffusion = 1.0 / (3.0 * (mu_a + mu_s_prime));
  const double mu_eff = std::sqrt(mu_a / diffusion);
  return amplitude / (2.0 * std::numbers::pi * diffusion) * bessel_k0(mu_eff * r_mm);
}

} // namespace qpat
