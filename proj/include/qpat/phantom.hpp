#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "qpat/errors.hpp"
#include "qpat/field.hpp"
#include "qpat/rng.hpp"

namespace qpat {

struct EllipseShape {
  double cx_mm = 0, cy_mm = 0;   // center
  double a_mm = 1, b_mm = 1;     // semi-axes
  double rotation_rad = 0;

  bool contains(double x, double y) const {
    const double dx = x - cx_mm, dy = y - cy_mm;
    const double c = std::cos(rotation_rad), s = std::sin(rotation_rad);
    const double u = c * dx + s * dy, v = -s * dx + c * dy;
    return (u * u) / (a_mm * a_mm) + (v * v) / (b_mm * b_mm) <= 1.0;
  }
};

struct AnnulusShape {
  double cx_mm = 0, cy_mm = 0;
  double outer_mm = 1, inner_mm = 0.5;

  bool contains(double x, double y) const {
    const double d2 = (x - cx_mm) * (x - cx_mm) + (y - cy_mm) * (y - cy_mm);
    return d2 <= outer_mm * outer_mm && d2 >= inner_mm * inner_mm;
  }
};

struct OrganShape {
  enum class Kind { ellipse, annulus } kind = Kind::ellipse;
  EllipseShape ellipse;
  AnnulusShape annulus;
  std::string tissue;

  bool contains(double x, double y) const {
    return kind == Kind::ellipse ? ellipse.contains(x, y) : annulus.contains(x, y);
  }
};

/// One synthetic cross-section: an elliptical body holding a set of organ
/// shapes, each tagged with a tissue class. Values are drawn later from the
/// optics table using rng_seed, so the same spec renders identically at any
/// grid resolution.
struct PhantomSpec {
  GridGeometry geometry;
  EllipseShape body;
  std::vector<OrganShape> organs;
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (!geometry.valid()) throw config_error("phantom: invalid geometry");
    const double reach = std::hypot(body.cx_mm, body.cy_mm) + std::max(body.a_mm, body.b_mm);
    if (reach > geometry.domain_radius_mm)
      throw config_error("phantom: body extends outside the circular domain");
  }
};

struct CoefficientRange {
  double lo = 0, hi = 0;

  bool valid() const { return lo > 0 && hi >= lo; }
  double draw(Rng& rng) const { return (hi > lo) ? rng.uniform(lo, hi) : lo; }
};

struct TissueOptics {
  // per wavelength [nm]: absorption and reduced scattering ranges [1/mm]
  std::map<int, std::pair<CoefficientRange, CoefficientRange>> by_wavelength;
};

struct OpticsTable {
  double background_mu_a = 1e-4;
  double background_mu_s = 1e-4;
  std::map<std::string, TissueOptics> tissues;

  const std::pair<CoefficientRange, CoefficientRange>& lookup(const std::string& tissue,
                                                              int wavelength_nm) const {
    auto it = tissues.find(tissue);
    if (it == tissues.end())
      throw config_error("optics table: unknown tissue '" + tissue + "'");
    auto wl = it->second.by_wavelength.find(wavelength_nm);
    if (wl == it->second.by_wavelength.end())
      throw config_error("optics table: tissue '" + tissue + "' has no entry for " +
                         std::to_string(wavelength_nm) + " nm");
    return wl->second;
  }
};

/// Built-in optics table with plausible near-infrared magnitudes. The real
/// per-tissue coefficients are configuration, not measured truth; anyone with
/// better numbers can ship their own table.
inline OpticsTable default_optics_table() {
  OpticsTable t;
  struct RowSpec {
    const char* tissue;
    // {mu_a lo, mu_a hi, mu_s' lo, mu_s' hi} at 700/730/760/800/850 nm
    double v[5][4];
  };
  static const RowSpec rows[] = {
      {"body", {{0.008, 0.014, 0.80, 1.20},
                {0.0075, 0.0135, 0.78, 1.18},
                {0.007, 0.013, 0.76, 1.15},
                {0.0065, 0.012, 0.74, 1.12},
                {0.006, 0.0115, 0.72, 1.10}}},
      {"lung", {{0.010, 0.020, 1.20, 2.00},
                {0.010, 0.019, 1.18, 1.95},
                {0.009, 0.018, 1.15, 1.90},
                {0.009, 0.017, 1.12, 1.85},
                {0.008, 0.016, 1.10, 1.80}}},
      {"liver", {{0.020, 0.045, 0.70, 1.10},
                 {0.019, 0.043, 0.69, 1.08},
                 {0.018, 0.042, 0.68, 1.06},
                 {0.017, 0.040, 0.67, 1.04},
                 {0.016, 0.038, 0.66, 1.02}}},
      {"spine", {{0.005, 0.010, 1.40, 2.00},
                 {0.005, 0.010, 1.38, 1.97},
                 {0.005, 0.009, 1.36, 1.94},
                 {0.004, 0.009, 1.34, 1.91},
                 {0.004, 0.008, 1.32, 1.88}}},
      {"vessel", {{0.150, 0.300, 0.60, 1.00},
                  {0.140, 0.280, 0.60, 1.00},
                  {0.130, 0.260, 0.60, 1.00},
                  {0.115, 0.240, 0.60, 1.00},
                  {0.100, 0.220, 0.60, 1.00}}},
  };
  static const int wavelengths[5] = {700, 730, 760, 800, 850};
  for (const auto& row : rows) {
    TissueOptics to;
    for (int i = 0; i < 5; ++i)
      to.by_wavelength[wavelengths[i]] = {
          CoefficientRange{row.v[i][0], row.v[i][1]},
          CoefficientRange{row.v[i][2], row.v[i][3]},
      };
    t.tissues[row.tissue] = to;
  }
  return t;
}

/// Rasterizes one phantom at its configured wavelength: per-region constant
/// coefficients drawn uniformly from the tissue ranges, background outside
/// the body. Organs are clipped to the body, painted in list order (later
/// organs overwrite earlier ones). Deterministic in (rng_seed, wavelength).
inline std::pair<Field2D, Field2D> generate_phantom(const PhantomSpec& spec,
                                                    const OpticsTable& optics,
                                                    int wavelength_nm) {
  spec.validate();
  // Draw all values first so the raster loop stays order-independent.
  Rng rng(mix_seed(spec.rng_seed, std::uint64_t(wavelength_nm), 0x9a77ULL));
  const auto& body_ranges = optics.lookup("body", wavelength_nm);
  const double body_mu_a = body_ranges.first.draw(rng);
  const double body_mu_s = body_ranges.second.draw(rng);
  std::vector<std::pair<double, double>> organ_values;
  organ_values.reserve(spec.organs.size());
  for (const auto& organ : spec.organs) {
    const auto& ranges = optics.lookup(organ.tissue, wavelength_nm);
    const double a = ranges.first.draw(rng);
    const double s = ranges.second.draw(rng);
    organ_values.emplace_back(a, s);
  }

  const auto& g = spec.geometry;
  Field2D mu_a = make_field(g, optics.background_mu_a);
  Field2D mu_s = make_field(g, optics.background_mu_s);
  for (int iy = 0; iy < g.height; ++iy)
    for (int ix = 0; ix < g.width; ++ix) {
      const double x = g.pixel_x(ix), y = g.pixel_y(iy);
      if (!spec.body.contains(x, y)) continue;
      double a = body_mu_a, s = body_mu_s;
      for (std::size_t k = 0; k < spec.organs.size(); ++k)
        if (spec.organs[k].contains(x, y)) {
          a = organ_values[k].first;
          s = organ_values[k].second;
        }
      mu_a(ix, iy) = a;
      mu_s(ix, iy) = s;
    }
  return {std::move(mu_a), std::move(mu_s)};
}

/// Procedural mouse-like cross sections: body ellipse, two lung lobes, a
/// liver region, a spine-like annulus and a few vessel disks. Shapes are
/// randomized per sample id from the master seed.
inline std::vector<PhantomSpec> make_mouse_specs(int count, const GridGeometry& geometry,
                                                 std::uint64_t master_seed) {
  std::vector<PhantomSpec> specs;
  specs.reserve(count);
  for (int id = 0; id < count; ++id) {
    Rng rng(mix_seed(master_seed, std::uint64_t(id), 0x0a15eULL));
    PhantomSpec spec;
    spec.geometry = geometry;
    spec.rng_seed = mix_seed(master_seed, std::uint64_t(id), 0x7a15eULL);

    EllipseShape body;
    body.cx_mm = rng.uniform(-2.5, 2.5);
    body.cy_mm = rng.uniform(-2.5, 2.5);
    body.a_mm = rng.uniform(22.0, 30.0);
    body.b_mm = rng.uniform(16.0, 23.0);
    body.rotation_rad = rng.uniform(-0.25, 0.25);
    spec.body = body;

    const double cr = std::cos(body.rotation_rad), sr = std::sin(body.rotation_rad);
    auto in_body_frame = [&](double u, double v, double& x, double& y) {
      x = body.cx_mm + cr * u - sr * v;
      y = body.cy_mm + sr * u + cr * v;
    };
    auto add_ellipse = [&](const char* tissue, double u, double v, double a, double b,
                           double rot) {
      OrganShape o;
      o.kind = OrganShape::Kind::ellipse;
      in_body_frame(u, v, o.ellipse.cx_mm, o.ellipse.cy_mm);
      o.ellipse.a_mm = a;
      o.ellipse.b_mm = b;
      o.ellipse.rotation_rad = body.rotation_rad + rot;
      o.tissue = tissue;
      spec.organs.push_back(o);
    };

    // Lung lobes, mirrored.
    const double lung_u = rng.uniform(0.38, 0.5) * body.a_mm;
    const double lung_v = rng.uniform(-0.30, -0.15) * body.b_mm;
    const double lung_a = rng.uniform(0.18, 0.26) * body.a_mm;
    const double lung_b = rng.uniform(0.25, 0.38) * body.b_mm;
    add_ellipse("lung", -lung_u, lung_v, lung_a, lung_b, rng.uniform(-0.3, 0.3));
    add_ellipse("lung", lung_u, lung_v, lung_a, lung_b, rng.uniform(-0.3, 0.3));

    // Liver-like region below center.
    add_ellipse("liver", rng.uniform(-0.15, 0.15) * body.a_mm,
                rng.uniform(0.25, 0.42) * body.b_mm, rng.uniform(0.28, 0.4) * body.a_mm,
                rng.uniform(0.2, 0.3) * body.b_mm, rng.uniform(-0.4, 0.4));

    // Spine-like annulus near the back.
    OrganShape spine;
    spine.kind = OrganShape::Kind::annulus;
    in_body_frame(rng.uniform(-0.08, 0.08) * body.a_mm, -rng.uniform(0.6, 0.72) * body.b_mm,
                  spine.annulus.cx_mm, spine.annulus.cy_mm);
    spine.annulus.outer_mm = rng.uniform(2.2, 3.2);
    spine.annulus.inner_mm = spine.annulus.outer_mm * rng.uniform(0.45, 0.6);
    spine.tissue = "spine";
    spec.organs.push_back(spine);

    // Vessel-like disks.
    const int vessels = 2 + int(rng.uniform_index(3)); // 2..4
    for (int vdx = 0; vdx < vessels; ++vdx) {
      const double r = rng.uniform(0.8, 2.0);
      add_ellipse("vessel", rng.uniform(-0.6, 0.6) * body.a_mm,
                  rng.uniform(-0.55, 0.55) * body.b_mm, r, r, 0.0);
    }

    spec.validate();
    specs.push_back(std::move(spec));
  }
  return specs;
}

/// One dataset entry: paired coefficient maps, the solved fluence and the
/// noisy synthetic image.
struct PhantomSample {
  Field2D mu_a;
  Field2D mu_s_prime;
  Field2D fluence;   // max-normalized
  Field2D pat_image; // fluence .* mu_a + noise
  int wavelength_nm = 0;
  int sample_id = -1;
};

} // namespace qpat
