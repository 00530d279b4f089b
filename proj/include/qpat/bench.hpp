#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <vector>

#include "qpat/correction.hpp"
#include "qpat/dataset.hpp"
#include "qpat/metrics.hpp"
#include "qpat/train.hpp"

namespace qpat {

/// Wall-clock median of `repeats` runs of fn (steady_clock, ns resolution).
/// The run result of the first execution is returned through `out`.
template <typename Fn, typename Result>
inline double timed_median(Fn&& fn, int repeats, Result& out) {
  repeats = std::max(1, repeats);
  std::vector<double> times;
  times.reserve(repeats);
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    Result res = fn();
    times.push_back(std::chrono::duration<double>(
        std::chrono::steady_clock::now() - t0).count());
    if (r == 0) out = std::move(res);
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

/// Baseline "no correction" estimate: the (clipped) image rescaled so its
/// peak matches the ground-truth peak. Comparing raw image units against
/// absorption units would only measure the arbitrary fluence scale, so the
/// peaks are matched and the residual shape error is what remains.
inline Field2D uncorrected_estimate(const Field2D& pat, const Field2D& truth_mu_a) {
  Field2D est = pat;
  for (std::size_t i = 0; i < est.size(); ++i)
    if (est[i] < 0.0) est[i] = 0.0;
  const double m = est.max();
  if (m > 0.0) {
    const double scale = truth_mu_a.max() / m;
    for (std::size_t i = 0; i < est.size(); ++i) est[i] *= scale;
  }
  return est;
}

inline void save_metric_rows(const std::vector<MetricRow>& rows,
                             const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("save_metric_rows: cannot open " + path.string());
  out << "wavelength_nm,method,sample,rmse,psnr_db,seconds\n";
  char line[192];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%d,%s,%s,%.8e,%.4f,%.4f\n", r.wavelength_nm,
                  r.method.c_str(), r.sample.c_str(), r.rmse, r.psnr_db, r.seconds);
    out << line;
  }
}

/// Side-by-side PGM: truth | estimate | absolute error. Truth and estimate
/// share the truth's gray scale; the error panel is scaled on its own.
inline void save_triptych(const Field2D& truth, const Field2D& estimate,
                          const std::filesystem::path& path) {
  const int w = truth.width(), h = truth.height();
  const double lo = truth.min(), hi = truth.max();
  const double scale = (hi > lo) ? 255.0 / (hi - lo) : 0.0;
  Field2D err(w, h, truth.spacing());
  for (std::size_t i = 0; i < err.size(); ++i) err[i] = std::fabs(truth[i] - estimate[i]);
  const double emax = err.max();
  const double escale = (emax > 0) ? 255.0 / emax : 0.0;

  const int sep = 2, total_w = 3 * w + 2 * sep;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_triptych: cannot open " + path.string());
  out << "P5\n" << total_w << " " << h << "\n255\n";
  std::vector<unsigned char> row(total_w, 255);
  auto shade = [](double v) {
    return static_cast<unsigned char>(std::clamp(std::lround(v), 0L, 255L));
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      row[x] = shade((truth(x, y) - lo) * scale);
      row[w + sep + x] = shade((estimate(x, y) - lo) * scale);
      row[2 * (w + sep) + x] = shade(err(x, y) * escale);
    }
    out.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
}

// ---------------------------------------------------------------------------
// Estimator accuracy (fluence prediction quality on the test split)
// ---------------------------------------------------------------------------

struct EstimatorAccuracy {
  int wavelength_nm = 0;
  int samples = 0;
  double rmse_mean = 0.0;       // in fluence units
  double rmse_normalized = 0.0; // divided by the training target range
};

inline EstimatorAccuracy estimator_accuracy(const DatasetManifest& manifest,
                                            const FnoModel& model) {
  EstimatorAccuracy acc;
  acc.wavelength_nm = manifest.wavelength_nm;
  double sum = 0.0;
  for (int id : manifest.test_ids) {
    PhantomSample s = load_sample(manifest, id);
    const Field2D pred = fno_forward(model, s.mu_a);
    sum += rmse(s.fluence, pred);
    ++acc.samples;
  }
  if (acc.samples > 0) acc.rmse_mean = sum / acc.samples;
  const double range = model.target_scale();
  acc.rmse_normalized = (range > 0) ? acc.rmse_mean / range : acc.rmse_mean;
  return acc;
}

// ---------------------------------------------------------------------------
// Correction benchmark (per-method quality and timing over the test split)
// ---------------------------------------------------------------------------

struct BenchOptions {
  CorrectionConfig correction;
  SourceRing sources;
  double background_mu_a = 1e-4;
  double solver_tol = 1e-10;
  int solver_max_iter = 0;
  int timing_repeats = 3;
  int max_samples = 0; // 0 = whole test split
  bool run_tic = true;
  bool run_exact_aic = true;
  bool run_fno_aic = true;
  std::filesystem::path image_dir; // triptychs written here when non-empty
  int image_samples = 2;           // triptychs only for the first few samples
};

/// Runs every requested method on the manifest's test samples, collecting
/// RMSE/PSNR against the ground-truth absorption maps and median wall times.
/// Appends one mean row per method.
inline std::vector<MetricRow> benchmark_correction(const DatasetManifest& manifest,
                                                   const FnoModel* model,
                                                   const BenchOptions& opt) {
  std::vector<int> ids = manifest.test_ids;
  if (opt.max_samples > 0 && int(ids.size()) > opt.max_samples)
    ids.resize(opt.max_samples);
  if (ids.empty()) throw config_error("benchmark_correction: empty test split");
  if (opt.run_fno_aic && !model)
    throw config_error("benchmark_correction: fno method requested without a model");

  std::vector<MetricRow> rows;
  struct Agg {
    double rmse = 0, psnr = 0, sec = 0;
    int n = 0;
  };
  std::map<std::string, Agg> agg;

  int sample_index = 0;
  auto push = [&](const std::string& method, int id, const Field2D& truth,
                  const Field2D& estimate, double seconds) {
    MetricRow r;
    r.wavelength_nm = manifest.wavelength_nm;
    r.method = method;
    r.sample = std::to_string(id);
    r.rmse = rmse(truth, estimate);
    r.psnr_db = psnr(truth, estimate);
    r.seconds = seconds;
    rows.push_back(r);
    auto& a = agg[method];
    a.rmse += r.rmse;
    a.psnr += r.psnr_db;
    a.sec += seconds;
    a.n += 1;
    if (!opt.image_dir.empty() && sample_index < opt.image_samples) {
      char name[128];
      std::snprintf(name, sizeof(name), "%dnm_sample%04d_%s.pgm", manifest.wavelength_nm,
                    id, method.c_str());
      save_triptych(truth, estimate, opt.image_dir / name);
    }
  };

  std::unique_ptr<FnoSurrogateEstimator> fno_est;
  if (opt.run_fno_aic) fno_est = std::make_unique<FnoSurrogateEstimator>(*model);

  for (int id : ids) {
    PhantomSample s = load_sample(manifest, id);
    const auto geometry = manifest.geometry;

    push("uncorrected", id, s.mu_a, uncorrected_estimate(s.pat_image, s.mu_a), 0.0);

    if (opt.run_tic) {
      CorrectionReport rep;
      const double sec = timed_median(
          [&] {
            return tic_correct(s.pat_image, s.mu_s_prime, opt.sources, opt.correction,
                               geometry.domain_radius_mm, opt.background_mu_a,
                               opt.solver_tol, opt.solver_max_iter);
          },
          opt.timing_repeats, rep);
      push("tic", id, s.mu_a, rep.mu_a, sec);
    }
    if (opt.run_exact_aic) {
      ExactSolverEstimator est(geometry, s.mu_s_prime, opt.sources, opt.solver_tol,
                               opt.solver_max_iter);
      CorrectionReport rep;
      const double sec = timed_median(
          [&] { return aic_correct(s.pat_image, est, opt.correction, opt.background_mu_a); },
          opt.timing_repeats, rep);
      push("exact-aic", id, s.mu_a, rep.mu_a, sec);
    }
    if (opt.run_fno_aic) {
      CorrectionReport rep;
      const double sec = timed_median(
          [&] {
            return aic_correct(s.pat_image, *fno_est, opt.correction, opt.background_mu_a);
          },
          opt.timing_repeats, rep);
      push("fno-aic", id, s.mu_a, rep.mu_a, sec);
    }
    ++sample_index;
  }

  for (const auto& [method, a] : agg) {
    MetricRow r;
    r.wavelength_nm = manifest.wavelength_nm;
    r.method = method;
    r.sample = "mean";
    r.rmse = a.rmse / a.n;
    r.psnr_db = a.psnr / a.n;
    r.seconds = a.sec / a.n;
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Resolution scaling experiment
// ---------------------------------------------------------------------------

struct ScalingRow {
  double scale = 1.0;
  int width = 0, height = 0;
  std::string method;
  double rmse_mean = 0.0;
  double psnr_mean = 0.0;
  double seconds_median = 0.0;
};

inline void save_scaling_rows(const std::vector<ScalingRow>& rows,
                              const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("save_scaling_rows: cannot open " + path.string());
  out << "scale,width,height,method,rmse,psnr_db,seconds\n";
  char line[160];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%.2f,%d,%d,%s,%.8e,%.4f,%.4f\n", r.scale, r.width,
                  r.height, r.method.c_str(), r.rmse_mean, r.psnr_mean, r.seconds_median);
    out << line;
  }
}

/// Renders the given specs at each scale (same physical objects, denser
/// grids, constant extent) and runs the correction methods with one shared
/// checkpoint. The object stays fixed because the phantom values are drawn
/// from the spec seed, independent of the raster resolution.
inline std::vector<ScalingRow> resolution_scaling_experiment(
    const std::vector<PhantomSpec>& specs, const OpticsTable& optics, int wavelength_nm,
    const std::vector<double>& scales, const FnoModel& model, const BenchOptions& opt,
    std::uint64_t seed) {
  if (specs.empty()) throw config_error("scaling experiment: no specs given");
  std::vector<ScalingRow> rows;
  const GridGeometry base = specs.front().geometry;
  const FnoSurrogateEstimator fno_est(model);

  for (double scale : scales) {
    GridGeometry g = base;
    g.width = int(std::lround(base.width * scale));
    g.height = int(std::lround(base.height * scale));
    g.spacing_mm = base.extent_x_mm() / g.width;

    DatasetOptions render_opt;
    render_opt.sources = opt.sources;
    render_opt.solver_tol = opt.solver_tol;
    render_opt.solver_max_iter = opt.solver_max_iter;

    struct Acc {
      double rmse = 0, psnr = 0;
      std::vector<double> secs;
      int n = 0;
    };
    std::map<std::string, Acc> acc;

    for (std::size_t k = 0; k < specs.size(); ++k) {
      PhantomSpec spec = specs[k];
      spec.geometry = g;
      PhantomSample s =
          render_sample(spec, optics, wavelength_nm, int(k), seed, render_opt);

      if (opt.run_tic) {
        CorrectionReport rep;
        const double sec = timed_median(
            [&] {
              return tic_correct(s.pat_image, s.mu_s_prime, opt.sources, opt.correction,
                                 g.domain_radius_mm, opt.background_mu_a, opt.solver_tol,
                                 opt.solver_max_iter);
            },
            opt.timing_repeats, rep);
        auto& a = acc["tic"];
        a.rmse += rmse(s.mu_a, rep.mu_a);
        a.psnr += psnr(s.mu_a, rep.mu_a);
        a.secs.push_back(sec);
        a.n += 1;
      }
      if (opt.run_fno_aic) {
        CorrectionReport rep;
        const double sec = timed_median(
            [&] {
              return aic_correct(s.pat_image, fno_est, opt.correction, opt.background_mu_a);
            },
            opt.timing_repeats, rep);
        auto& a = acc["fno-aic"];
        a.rmse += rmse(s.mu_a, rep.mu_a);
        a.psnr += psnr(s.mu_a, rep.mu_a);
        a.secs.push_back(sec);
        a.n += 1;
      }
    }

    for (auto& [method, a] : acc) {
      std::sort(a.secs.begin(), a.secs.end());
      ScalingRow r;
      r.scale = scale;
      r.width = g.width;
      r.height = g.height;
      r.method = method;
      r.rmse_mean = a.rmse / a.n;
      r.psnr_mean = a.psnr / a.n;
      r.seconds_median = a.secs[a.secs.size() / 2];
      rows.push_back(r);
    }
  }
  return rows;
}

} // namespace qpat
