#pragma once

#include <cmath>
#include <limits>
#include <string>

#include "qpat/field.hpp"

namespace qpat {

/// Root mean square error over all pixels.
inline double rmse(const Field2D& truth, const Field2D& estimate) {
  if (truth.width() != estimate.width() || truth.height() != estimate.height())
    throw std::invalid_argument("rmse: field geometries do not match");
  double acc = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = truth[i] - estimate[i];
    acc += d * d;
  }
  return std::sqrt(acc / double(truth.size()));
}

/// Peak signal-to-noise ratio in dB: 20 log10(MAX / RMSE) with MAX the
/// maximum of the ground truth. A perfect match returns +infinity.
inline double psnr(const Field2D& truth, const Field2D& estimate) {
  const double peak = truth.max();
  if (!(peak > 0.0)) throw std::invalid_argument("psnr: ground-truth maximum must be positive");
  const double e = rmse(truth, estimate);
  if (e == 0.0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(peak / e);
}

/// PSNR from already-computed parts, for cross-checking reported values.
inline double psnr_from(double peak, double rmse_value) {
  return 20.0 * std::log10(peak / rmse_value);
}

struct MetricRow {
  int wavelength_nm = 0;
  std::string method;   // tic | fno-aic | exact-aic | uncorrected
  std::string sample;   // sample id or "mean"
  double rmse = 0.0;
  double psnr_db = 0.0;
  double seconds = 0.0;
};

} // namespace qpat
