#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "qpat/blas.hpp"

namespace qpat {

/// Dense channel-major activation tensor: `channels` planes of H*W doubles,
/// each plane row-major. A plane viewed as an (H x W) matrix, or the whole
/// tensor as a (C*H x W) or (C x H*W) matrix, feeds the GEMM-based operators
/// directly.
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w), data(std::size_t(c) * h * w, fill) {}

  std::size_t plane_size() const { return std::size_t(height) * width; }
  std::size_t size() const { return data.size(); }
  double* plane(int c) { return data.data() + std::size_t(c) * plane_size(); }
  const double* plane(int c) const { return data.data() + std::size_t(c) * plane_size(); }

  void zero() { std::fill(data.begin(), data.end(), 0.0); }
};

/// Discrete Fourier synthesis/analysis tables for one axis. Column k of
/// `cos_t`/`sin_t` holds cos/sin(2 pi k j / n) over sample index j; these
/// drive the truncated Fourier transforms of the spectral layers as plain
/// matrix products.
struct TrigTable {
  int n = 0;
  int modes = 0;
  std::vector<double> cos_t; // n x modes
  std::vector<double> sin_t; // n x modes

  TrigTable() = default;
  TrigTable(int n_, int modes_) : n(n_), modes(modes_) {
    cos_t.resize(std::size_t(n) * modes);
    sin_t.resize(std::size_t(n) * modes);
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < modes; ++k) {
        const double ang = 2.0 * std::numbers::pi * double(k) * double(j) / double(n);
        cos_t[std::size_t(j) * modes + k] = std::cos(ang);
        sin_t[std::size_t(j) * modes + k] = std::sin(ang);
      }
  }
};

// ---------------------------------------------------------------------------
// Smooth gate nonlinearity (GELU-shaped): g(x) = 0.5 x (1 + x / sqrt(1 + x^2)).
// Rational form keeps the elementwise passes vectorizable; the derivative is
// implemented analytically alongside so reverse-mode gradients are exact.
// ---------------------------------------------------------------------------

inline double activation(double x) {
  return 0.5 * x * (1.0 + x / std::sqrt(1.0 + x * x));
}

inline double activation_grad(double x) {
  const double q = 1.0 + x * x;
  const double s = std::sqrt(q);
  return 0.5 * (1.0 + x / s) + 0.5 * x / (s * q);
}

inline void activation_inplace(double* v, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(n); ++i)
    v[i] = activation(v[i]);
}

/// out[i] = activation(v[i]), leaving v untouched.
inline void activation_to(const double* v, double* out, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(n); ++i)
    out[i] = activation(v[i]);
}

/// grad[i] *= activation'(pre[i]) — the backward pass through the gate.
inline void activation_backward(const double* pre, double* grad, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(n); ++i)
    grad[i] *= activation_grad(pre[i]);
}

// ---------------------------------------------------------------------------
// Per-pixel linear map ("1x1 convolution"): y[co][p] = sum_ci w[co][ci] x[ci][p] + b[co]
// ---------------------------------------------------------------------------

inline void conv1x1(const double* w, const double* b, const Tensor& x, int out_channels,
                    Tensor& y) {
  const std::size_t p = x.plane_size();
  y.channels = out_channels;
  y.height = x.height;
  y.width = x.width;
  y.data.resize(std::size_t(out_channels) * p);
  gemm(false, false, out_channels, p, x.channels, 1.0, w, x.channels, x.data.data(), p,
       0.0, y.data.data(), p);
  if (b) {
    for (int c = 0; c < out_channels; ++c) {
      double* row = y.plane(c);
      const double bc = b[c];
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(p); ++i) row[i] += bc;
    }
  }
}

/// Adjoints of conv1x1: accumulates dw, db and writes dx.
inline void conv1x1_backward(const double* w, const Tensor& x, const Tensor& dy,
                             double* dw, double* db, Tensor* dx) {
  const std::size_t p = x.plane_size();
  const int co = dy.channels, ci = x.channels;
  // dw[co][ci] += dy[co] . x[ci]
  gemm(false, true, co, ci, p, 1.0, dy.data.data(), p, x.data.data(), p, 1.0, dw, ci);
  if (db) {
    for (int c = 0; c < co; ++c) {
      const double* row = dy.plane(c);
      double acc = 0.0;
      for (std::size_t i = 0; i < p; ++i) acc += row[i];
      db[c] += acc;
    }
  }
  if (dx) {
    dx->channels = ci;
    dx->height = x.height;
    dx->width = x.width;
    dx->data.resize(std::size_t(ci) * p);
    gemm(true, false, ci, p, co, 1.0, w, ci, dy.data.data(), p, 0.0, dx->data.data(), p);
  }
}

} // namespace qpat
