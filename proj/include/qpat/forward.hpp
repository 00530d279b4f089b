#pragma once

#include <cstdint>

#include "qpat/field.hpp"
#include "qpat/rng.hpp"

namespace qpat {

/// Optical forward model parameters: pressure conversion scale and the
/// additive measurement noise of the synthetic images.
struct ForwardConfig {
  double gruneisen = 1.0;
  double noise_variance = 2e-5;
  std::uint64_t noise_seed = 0;

  bool valid() const { return gruneisen > 0.0 && noise_variance >= 0.0; }
};

/// Rescales a field so its maximum is 1 (the fluence normalization used
/// throughout the pipeline). A zero field stays zero.
inline Field2D max_normalize(const Field2D& f) {
  const double m = f.max();
  if (m <= 0.0) return f;
  Field2D out = f;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= m;
  return out;
}

/// p' = gruneisen * fluence * mu_a, elementwise.
inline Field2D forward_pressure(const Field2D& mu_a, const Field2D& fluence,
                                const ForwardConfig& cfg) {
  if (!mu_a.same_shape(fluence))
    throw std::invalid_argument("forward_pressure: field geometries do not match");
  if (!cfg.valid()) throw std::invalid_argument("forward_pressure: invalid config");
  Field2D out = mu_a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = cfg.gruneisen * fluence[i] * mu_a[i];
  return out;
}

/// Adds i.i.d. Gaussian noise with the configured variance. The generator is
/// counter-based (value depends only on seed and pixel index), so the result
/// is reproducible regardless of evaluation order.
inline Field2D add_noise(const Field2D& image, const ForwardConfig& cfg) {
  if (!cfg.valid()) throw std::invalid_argument("add_noise: invalid config");
  if (cfg.noise_variance == 0.0) return image;
  const double sigma = std::sqrt(cfg.noise_variance);
  Field2D out = image;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] += sigma * counter_normal(cfg.noise_seed, i);
  return out;
}

} // namespace qpat
