#pragma once

#include <chrono>
#include <fstream>
#include <memory>
#include <vector>

#include "qpat/diffusion.hpp"
#include "qpat/errors.hpp"
#include "qpat/field.hpp"
#include "qpat/fno.hpp"
#include "qpat/forward.hpp"

namespace qpat {

struct CorrectionConfig {
  int iter1 = 30;              // max outer (fluence) iterations
  int iter2 = 20;              // max inner (absorption) CG steps
  double eps1 = 1e-12;         // outer stop: relative squared residual
  double eps2 = 1e-12;         // inner stop: relative residual
  bool nonneg = true;          // project the absorption map to >= 0
  double tikhonov_lambda = 0.0;

  void validate() const {
    if (iter1 < 1 || iter2 < 1)
      throw config_error("correction: iteration caps must be >= 1");
    if (eps1 < 0 || eps2 < 0) throw config_error("correction: eps must be >= 0");
    if (tikhonov_lambda < 0) throw config_error("correction: lambda must be >= 0");
  }
};

/// Anything that maps an absorption map to a predicted fluence map on the
/// same grid. Implementations must be safe to share read-only across threads.
class FluenceEstimator {
public:
  virtual ~FluenceEstimator() = default;
  virtual Field2D estimate(const Field2D& mu_a) const = 0;
  virtual std::string tag() const = 0;
};

/// The reference estimator: assembles and solves the diffusion system with
/// the known scattering map, then max-normalizes (the fluence convention of
/// the whole pipeline). Absorption estimates are clamped at zero before the
/// solve; the iteration may pass slightly negative intermediate values.
class ExactSolverEstimator final : public FluenceEstimator {
public:
  ExactSolverEstimator(GridGeometry geometry, Field2D mu_s_prime, SourceRing sources,
                       double tol = 1e-10, int max_iter = 0)
      : geometry_(geometry), mu_s_prime_(std::move(mu_s_prime)), sources_(sources),
        tol_(tol), max_iter_(max_iter) {}

  Field2D estimate(const Field2D& mu_a) const override {
    Field2D clamped = mu_a;
    for (std::size_t i = 0; i < clamped.size(); ++i)
      if (clamped[i] < 0.0) clamped[i] = 0.0;
    auto sys = assemble_system(geometry_, clamped, mu_s_prime_, sources_);
    return max_normalize(solve_fluence(sys, tol_, max_iter_));
  }

  std::string tag() const override { return "exact"; }

private:
  GridGeometry geometry_;
  Field2D mu_s_prime_;
  SourceRing sources_;
  double tol_;
  int max_iter_;
};

/// Learned estimator: a trained model behind the same contract. Output is
/// clamped at zero to honor the fluence nonnegativity invariant.
class FnoSurrogateEstimator final : public FluenceEstimator {
public:
  explicit FnoSurrogateEstimator(FnoModel model) : model_(std::move(model)) {}

  Field2D estimate(const Field2D& mu_a) const override {
    Field2D phi = fno_forward(model_, mu_a, /*fused=*/true);
    for (std::size_t i = 0; i < phi.size(); ++i)
      if (phi[i] < 0.0) phi[i] = 0.0;
    return phi;
  }

  std::string tag() const override { return "fno"; }

  const FnoModel& model() const { return model_; }

private:
  FnoModel model_;
};

/// Inner subproblem: with the fluence held fixed, minimize
///   || p' - phi .* mu_a ||^2 + lambda ||mu_a||^2
/// by conjugate gradient on the normal equations, warm-started from
/// mu_a_init. Stops after iter2 steps or when the relative residual drops
/// below eps2. Pixels with zero fluence (and lambda = 0) keep their initial
/// value. Returns (mu_a, final relative residual, steps taken).
struct InnerResult {
  Field2D mu_a;
  double err2 = 0.0;
  int iterations = 0;
};

inline InnerResult update_mu_a(const Field2D& p_prime, const Field2D& fluence,
                               const Field2D& mu_a_init, const CorrectionConfig& cfg) {
  cfg.validate();
  if (!p_prime.same_shape(fluence) || !p_prime.same_shape(mu_a_init))
    throw std::invalid_argument("update_mu_a: field geometries do not match");
  const std::size_t n = p_prime.size();
  const double lambda = cfg.tikhonov_lambda;

  // Normal equations: (diag(phi^2) + lambda I) mu = phi .* p'
  std::vector<double> a(n), b(n);
  double phi_max = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double f = fluence[i];
    if (f < 0.0) throw std::invalid_argument("update_mu_a: fluence must be nonnegative");
    phi_max = std::max(phi_max, f);
    a[i] = f * f + lambda;
    b[i] = f * p_prime[i];
  }
  if (phi_max == 0.0 && lambda == 0.0)
    throw solver_error("update_mu_a: all-zero fluence makes the problem singular");

  InnerResult res;
  res.mu_a = mu_a_init;
  double b_norm2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) b_norm2 += b[i] * b[i];

  std::vector<double> r(n), p(n);
  double r_norm2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    r[i] = b[i] - a[i] * res.mu_a[i];
    r_norm2 += r[i] * r[i];
  }
  p = r;
  const double stop2 = (b_norm2 > 0.0) ? cfg.eps2 * cfg.eps2 * b_norm2 : 0.0;

  int it = 0;
  for (; it < cfg.iter2 && r_norm2 > stop2; ++it) {
    double pap = 0.0;
    for (std::size_t i = 0; i < n; ++i) pap += a[i] * p[i] * p[i];
    if (!(pap > 0.0)) break; // residual entirely in the null space
    const double alpha = r_norm2 / pap;
    double r_new2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      res.mu_a[i] += alpha * p[i];
      r[i] -= alpha * a[i] * p[i];
      r_new2 += r[i] * r[i];
    }
    const double beta = r_new2 / r_norm2;
    r_norm2 = r_new2;
    if (r_norm2 <= stop2) { ++it; break; }
    for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
  }
  res.iterations = it;
  res.err2 = (b_norm2 > 0.0) ? std::sqrt(r_norm2 / b_norm2) : 0.0;

  if (cfg.nonneg)
    for (std::size_t i = 0; i < n; ++i)
      if (res.mu_a[i] < 0.0) res.mu_a[i] = 0.0;
  return res;
}

/// Everything one correction run produced: the corrected map, the last
/// fluence estimate, the residual history and per-phase timings.
struct CorrectionReport {
  Field2D mu_a;
  Field2D fluence;
  std::vector<double> err1_history;
  std::vector<int> inner_iterations;
  std::vector<double> iteration_seconds;
  double estimator_seconds = 0.0;
  double inner_seconds = 0.0;
  double total_seconds = 0.0;
  std::string estimator_tag;
};

inline void save_correction_report(const CorrectionReport& r,
                                   const std::filesystem::path& csv_path) {
  std::ofstream out(csv_path, std::ios::trunc);
  if (!out) throw std::runtime_error("save_correction_report: cannot open " + csv_path.string());
  out << "outer_iter,err1,inner_iters,seconds\n";
  char line[128];
  for (std::size_t k = 0; k < r.err1_history.size(); ++k) {
    std::snprintf(line, sizeof(line), "%zu,%.12e,%d,%.4f\n", k + 1, r.err1_history[k],
                  r.inner_iterations[k], r.iteration_seconds[k]);
    out << line;
  }
}

/// The alternating correction loop shared by the traditional and the
/// accelerated method; the only difference between the two is the estimator.
/// The absorption map starts at zero, which would make the first fluence
/// solve degenerate, so that first estimate uses a uniform background map.
inline CorrectionReport correct_with_estimator(const Field2D& p_prime_raw,
                                               const FluenceEstimator& estimator,
                                               const CorrectionConfig& cfg,
                                               double background_mu_a = 1e-4) {
  cfg.validate();
  using clock = std::chrono::steady_clock;
  const auto run_start = clock::now();

  // The image model is nonnegative; clip reconstruction noise below zero.
  Field2D p_prime = p_prime_raw;
  for (std::size_t i = 0; i < p_prime.size(); ++i)
    if (p_prime[i] < 0.0) p_prime[i] = 0.0;

  double p_norm2 = 0.0;
  for (std::size_t i = 0; i < p_prime.size(); ++i) p_norm2 += p_prime[i] * p_prime[i];

  CorrectionReport report;
  report.estimator_tag = estimator.tag();
  Field2D mu_a(p_prime.width(), p_prime.height(), p_prime.spacing(), 0.0);
  Field2D background(p_prime.width(), p_prime.height(), p_prime.spacing(), background_mu_a);
  Field2D fluence;

  for (int outer = 0; outer < cfg.iter1; ++outer) {
    const auto iter_start = clock::now();
    const Field2D& estimate_input = (outer == 0) ? background : mu_a;
    fluence = estimator.estimate(estimate_input);
    const auto est_done = clock::now();

    InnerResult inner = update_mu_a(p_prime, fluence, mu_a, cfg);
    mu_a = std::move(inner.mu_a);
    const auto inner_done = clock::now();

    double res2 = 0.0;
    for (std::size_t i = 0; i < p_prime.size(); ++i) {
      const double d = p_prime[i] - fluence[i] * mu_a[i];
      res2 += d * d;
    }
    const double err1 = (p_norm2 > 0.0) ? res2 / p_norm2 : 0.0;
    report.err1_history.push_back(err1);
    report.inner_iterations.push_back(inner.iterations);
    report.estimator_seconds += std::chrono::duration<double>(est_done - iter_start).count();
    report.inner_seconds += std::chrono::duration<double>(inner_done - est_done).count();
    report.iteration_seconds.push_back(
        std::chrono::duration<double>(inner_done - iter_start).count());
    if (err1 < cfg.eps1) break;
  }

  report.mu_a = std::move(mu_a);
  report.fluence = std::move(fluence);
  report.total_seconds = std::chrono::duration<double>(clock::now() - run_start).count();
  return report;
}

/// Traditional iterative correction: the exact diffusion solver in the loop.
inline CorrectionReport tic_correct(const Field2D& p_prime, const Field2D& mu_s_prime,
                                    const SourceRing& sources, const CorrectionConfig& cfg,
                                    double domain_radius_mm, double background_mu_a = 1e-4,
                                    double solver_tol = 1e-10, int solver_max_iter = 0) {
  if (!p_prime.same_shape(mu_s_prime))
    throw std::invalid_argument("tic_correct: field geometries do not match");
  ExactSolverEstimator est(geometry_of(p_prime, domain_radius_mm), mu_s_prime, sources,
                           solver_tol, solver_max_iter);
  CorrectionReport r = correct_with_estimator(p_prime, est, cfg, background_mu_a);
  r.estimator_tag = "tic";
  return r;
}

/// Accelerated iterative correction: identical control flow with a pluggable
/// estimator (trained surrogate, or the exact solver as an oracle check).
inline CorrectionReport aic_correct(const Field2D& p_prime, const FluenceEstimator& estimator,
                                    const CorrectionConfig& cfg, double background_mu_a = 1e-4) {
  return correct_with_estimator(p_prime, estimator, cfg, background_mu_a);
}

} // namespace qpat
