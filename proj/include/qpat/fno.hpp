#pragma once

#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "qpat/errors.hpp"
#include "qpat/field.hpp"
#include "qpat/rng.hpp"
#include "qpat/tensor.hpp"

namespace qpat {

// ===========================================================================
// Configuration and parameter storage
// ===========================================================================

struct FnoConfig {
  int modes = 10;
  int channels = 64;
  int layers = 4;
  int input_channels = 3; // absorption map plus two normalized coordinate maps

  void validate() const {
    if (modes < 1) throw config_error("fno: modes must be >= 1");
    if (channels < 1) throw config_error("fno: channels must be >= 1");
    if (layers < 1) throw config_error("fno: layers must be >= 1");
    if (input_channels != 1 && input_channels != 3)
      throw config_error("fno: input_channels must be 1 or 3");
  }

  void check_resolution(int height, int width) const {
    if (modes > std::min(height, width) / 2)
      throw std::invalid_argument("fno: grid too coarse for the configured mode count");
  }

  bool operator==(const FnoConfig&) const = default;
};

/// Offsets of every parameter tensor inside the flat parameter vector.
/// Per spectral block: complex mode weights r (C x C x M x M, re/im
/// interleaved), bypass map w0/b0, and the two local maps w1/b1, w2/b2.
struct ParamLayout {
  int channels = 0, input_channels = 0, modes = 0, layers = 0;
  std::size_t lift_w = 0, lift_b = 0;
  struct Block {
    std::size_t r, w0, b0, w1, b1, w2, b2;
  };
  std::vector<Block> blocks;
  std::size_t proj1_w = 0, proj1_b = 0, proj2_w = 0, proj2_b = 0;
  std::size_t total = 0;

  std::size_t r_size() const {
    return std::size_t(channels) * channels * modes * modes * 2;
  }
  std::size_t map_size() const { return std::size_t(channels) * channels; }

  static ParamLayout make(const FnoConfig& cfg) {
    ParamLayout l;
    l.channels = cfg.channels;
    l.input_channels = cfg.input_channels;
    l.modes = cfg.modes;
    l.layers = cfg.layers;
    const std::size_t c = cfg.channels;
    std::size_t at = 0;
    l.lift_w = at; at += c * cfg.input_channels;
    l.lift_b = at; at += c;
    for (int t = 0; t < cfg.layers; ++t) {
      Block b;
      b.r = at; at += l.r_size();
      b.w0 = at; at += l.map_size();
      b.b0 = at; at += c;
      b.w1 = at; at += l.map_size();
      b.b1 = at; at += c;
      b.w2 = at; at += l.map_size();
      b.b2 = at; at += c;
      l.blocks.push_back(b);
    }
    l.proj1_w = at; at += l.map_size();
    l.proj1_b = at; at += c;
    l.proj2_w = at; at += c;
    l.proj2_b = at; at += 1;
    l.total = at;
    return l;
  }
};

/// The learned fluence surrogate. Parameters live in one flat vector; the
/// min-max normalization constants of the training dataset travel with the
/// model so inference maps raw absorption maps to fluence-scale outputs.
struct FnoModel {
  FnoConfig config;
  ParamLayout layout;
  std::vector<double> params;
  double input_min = 0.0, input_max = 1.0;
  double target_min = 0.0, target_max = 1.0;

  const double* p(std::size_t offset) const { return params.data() + offset; }
  double* p(std::size_t offset) { return params.data() + offset; }

  double input_scale() const {
    return (input_max > input_min) ? 1.0 / (input_max - input_min) : 1.0;
  }
  double target_scale() const { return target_max - target_min; }

  std::size_t parameter_count() const { return params.size(); }
};

inline FnoModel fno_init(const FnoConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  FnoModel m;
  m.config = cfg;
  m.layout = ParamLayout::make(cfg);
  m.params.assign(m.layout.total, 0.0);
  Rng rng(mix_seed(seed, 0xf40ULL));

  auto fill_uniform = [&](std::size_t off, std::size_t n, double lo, double hi) {
    for (std::size_t i = 0; i < n; ++i) m.params[off + i] = rng.uniform(lo, hi);
  };
  const double c = cfg.channels;
  const double lift_bound = 1.0 / std::sqrt(double(cfg.input_channels));
  const double map_bound = 1.0 / std::sqrt(c);
  const double spec_scale = 1.0 / (c * c);

  fill_uniform(m.layout.lift_w, c * cfg.input_channels, -lift_bound, lift_bound);
  fill_uniform(m.layout.lift_b, c, -lift_bound, lift_bound);
  for (const auto& b : m.layout.blocks) {
    fill_uniform(b.r, m.layout.r_size(), 0.0, spec_scale);
    fill_uniform(b.w0, m.layout.map_size(), -map_bound, map_bound);
    fill_uniform(b.b0, c, -map_bound, map_bound);
    fill_uniform(b.w1, m.layout.map_size(), -map_bound, map_bound);
    fill_uniform(b.b1, c, -map_bound, map_bound);
    fill_uniform(b.w2, m.layout.map_size(), -map_bound, map_bound);
    fill_uniform(b.b2, c, -map_bound, map_bound);
  }
  fill_uniform(m.layout.proj1_w, m.layout.map_size(), -map_bound, map_bound);
  fill_uniform(m.layout.proj1_b, c, -map_bound, map_bound);
  fill_uniform(m.layout.proj2_w, c, -map_bound, map_bound);
  fill_uniform(m.layout.proj2_b, 1, -map_bound, map_bound);
  return m;
}

// ===========================================================================
// Truncated Fourier transform stages, all expressed as matrix products
// against trigonometric tables. Retained mode box: (ky, kx) in [0, modes)^2
// of the unnormalized DFT; realness of the output comes from synthesizing
// the Hermitian completion of that box analytically (factor-2 cosine sums
// plus a DC correction), so no complex FFT is needed anywhere.
// ===========================================================================

/// Scratch buffers shared by consecutive calls at one resolution.
struct SpectralWork {
  int height = 0, width = 0, modes = 0, channels = 0;
  TrigTable tx, ty;
  std::vector<double> d_re, d_im; // (C*H) x M   x-stage coefficients
  std::vector<double> u_re, u_im; // (C*H) x M   y-stage synthesis input

  void prepare(int c, int h, int w, int m) {
    if (h != height || w != width || m != modes) {
      tx = TrigTable(w, m);
      ty = TrigTable(h, m);
      height = h; width = w; modes = m;
    }
    channels = c;
    const std::size_t sz = std::size_t(c) * h * m;
    d_re.resize(sz); d_im.resize(sz);
    u_re.resize(sz); u_im.resize(sz);
  }
};

/// Analysis: fills xhat (C x M x M complex, re/im interleaved) with the
/// retained-box DFT coefficients of each channel plane.
inline void spectral_analysis(const Tensor& x, SpectralWork& w, std::vector<double>& xhat) {
  const int c = x.channels, h = x.height, m = w.modes;
  const std::size_t ch = std::size_t(c) * h;
  // x-stage: D = x * exp(-2 pi i kx x / W)
  gemm(false, false, ch, m, x.width, 1.0, x.data.data(), x.width, w.tx.cos_t.data(), m,
       0.0, w.d_re.data(), m);
  gemm(false, false, ch, m, x.width, -1.0, x.data.data(), x.width, w.tx.sin_t.data(), m,
       0.0, w.d_im.data(), m);
  // y-stage per channel: Xhat = exp(-2 pi i ky y / H) contracted over y
  xhat.assign(std::size_t(c) * m * m * 2, 0.0);
  std::vector<double> re(std::size_t(m) * m), im(std::size_t(m) * m);
  for (int cc = 0; cc < c; ++cc) {
    const double* dre = w.d_re.data() + std::size_t(cc) * h * m;
    const double* dim = w.d_im.data() + std::size_t(cc) * h * m;
    // re = EyC^T dre + EyS^T dim ; im = EyC^T dim - EyS^T dre
    gemm(true, false, m, m, h, 1.0, w.ty.cos_t.data(), m, dre, m, 0.0, re.data(), m);
    gemm(true, false, m, m, h, 1.0, w.ty.sin_t.data(), m, dim, m, 1.0, re.data(), m);
    gemm(true, false, m, m, h, 1.0, w.ty.cos_t.data(), m, dim, m, 0.0, im.data(), m);
    gemm(true, false, m, m, h, -1.0, w.ty.sin_t.data(), m, dre, m, 1.0, im.data(), m);
    double* out = xhat.data() + std::size_t(cc) * m * m * 2;
    for (std::size_t k = 0; k < std::size_t(m) * m; ++k) {
      out[2 * k] = re[k];
      out[2 * k + 1] = im[k];
    }
  }
}

/// Adjoint of spectral_analysis: maps a cotangent of xhat back to a
/// cotangent of the input tensor (accumulated into dx, which is resized).
inline void spectral_analysis_adjoint(const std::vector<double>& cot_xhat, SpectralWork& w,
                                      Tensor& dx) {
  const int c = w.channels, h = w.height, m = w.modes;
  std::vector<double> re(std::size_t(m) * m), im(std::size_t(m) * m);
  for (int cc = 0; cc < c; ++cc) {
    const double* cx = cot_xhat.data() + std::size_t(cc) * m * m * 2;
    for (std::size_t k = 0; k < std::size_t(m) * m; ++k) {
      re[k] = cx[2 * k];
      im[k] = cx[2 * k + 1];
    }
    double* dre = w.d_re.data() + std::size_t(cc) * h * m;
    double* dim = w.d_im.data() + std::size_t(cc) * h * m;
    // cot(D_re) = EyC cot(re) - EyS cot(im) ; cot(D_im) = EyS cot(re) + EyC cot(im)
    gemm(false, false, h, m, m, 1.0, w.ty.cos_t.data(), m, re.data(), m, 0.0, dre, m);
    gemm(false, false, h, m, m, -1.0, w.ty.sin_t.data(), m, im.data(), m, 1.0, dre, m);
    gemm(false, false, h, m, m, 1.0, w.ty.sin_t.data(), m, re.data(), m, 0.0, dim, m);
    gemm(false, false, h, m, m, 1.0, w.ty.cos_t.data(), m, im.data(), m, 1.0, dim, m);
  }
  dx.channels = c;
  dx.height = h;
  dx.width = w.width;
  dx.data.resize(std::size_t(c) * h * w.width);
  const std::size_t ch = std::size_t(c) * h;
  // cot(x) = cot(D_re) FC^T - cot(D_im) FS^T
  gemm(false, true, ch, w.width, m, 1.0, w.d_re.data(), m, w.tx.cos_t.data(), m, 0.0,
       dx.data.data(), w.width);
  gemm(false, true, ch, w.width, m, -1.0, w.d_im.data(), m, w.tx.sin_t.data(), m, 1.0,
       dx.data.data(), w.width);
}

/// Per-mode channel mixing: yhat[co] = sum_ci r[co][ci] * xhat[ci] (complex).
/// The (0,0) imaginary part of the result is zeroed, which together with the
/// Hermitian synthesis below makes the spatial output exactly real.
inline void mode_mix(const double* r, int channels, int modes, const std::vector<double>& xhat,
                     std::vector<double>& yhat) {
  const std::size_t mm = std::size_t(modes) * modes;
  yhat.assign(std::size_t(channels) * mm * 2, 0.0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t co = 0; co < channels; ++co) {
    double* out = yhat.data() + std::size_t(co) * mm * 2;
    for (int ci = 0; ci < channels; ++ci) {
      const double* rr = r + ((std::size_t(co) * channels + ci) * mm) * 2;
      const double* xx = xhat.data() + std::size_t(ci) * mm * 2;
      for (std::size_t k = 0; k < mm; ++k) {
        const double ar = rr[2 * k], ai = rr[2 * k + 1];
        const double br = xx[2 * k], bi = xx[2 * k + 1];
        out[2 * k] += ar * br - ai * bi;
        out[2 * k + 1] += ar * bi + ai * br;
      }
    }
    out[1] = 0.0; // DC mode is real by construction
  }
}

/// Adjoints of mode_mix: accumulates the weight cotangent into dr and writes
/// the xhat cotangent. The DC projection zeroes the incoming im(0,0) first.
inline void mode_mix_backward(const double* r, int channels, int modes,
                              const std::vector<double>& xhat, std::vector<double>& cot_yhat,
                              double* dr, std::vector<double>& cot_xhat) {
  const std::size_t mm = std::size_t(modes) * modes;
  for (int co = 0; co < channels; ++co) cot_yhat[std::size_t(co) * mm * 2 + 1] = 0.0;
  cot_xhat.assign(std::size_t(channels) * mm * 2, 0.0);
  for (int co = 0; co < channels; ++co) {
    const double* gy = cot_yhat.data() + std::size_t(co) * mm * 2;
    for (int ci = 0; ci < channels; ++ci) {
      const double* rr = r + ((std::size_t(co) * channels + ci) * mm) * 2;
      const double* xx = xhat.data() + std::size_t(ci) * mm * 2;
      double* drr = dr + ((std::size_t(co) * channels + ci) * mm) * 2;
      double* gx = cot_xhat.data() + std::size_t(ci) * mm * 2;
      for (std::size_t k = 0; k < mm; ++k) {
        const double gr = gy[2 * k], gi = gy[2 * k + 1];
        const double br = xx[2 * k], bi = xx[2 * k + 1];
        const double ar = rr[2 * k], ai = rr[2 * k + 1];
        // cot(a) += cot(w) * conj(b); cot(b) += cot(w) * conj(a)
        drr[2 * k] += gr * br + gi * bi;
        drr[2 * k + 1] += gi * br - gr * bi;
        gx[2 * k] += gr * ar + gi * ai;
        gx[2 * k + 1] += gi * ar - gr * ai;
      }
    }
  }
}

/// Synthesis: spatial field of the Hermitian completion of yhat.
/// out[c](y,x) = 2/(HW) Re( sum_{ky,kx} yhat e^{+i...} ) - re(yhat[0,0])/(HW).
inline void spectral_synthesis(const std::vector<double>& yhat, SpectralWork& w, Tensor& out) {
  const int c = w.channels, h = w.height, m = w.modes, wd = w.width;
  std::vector<double> re(std::size_t(m) * m), im(std::size_t(m) * m);
  for (int cc = 0; cc < c; ++cc) {
    const double* yy = yhat.data() + std::size_t(cc) * m * m * 2;
    for (std::size_t k = 0; k < std::size_t(m) * m; ++k) {
      re[k] = yy[2 * k];
      im[k] = yy[2 * k + 1];
    }
    double* ure = w.u_re.data() + std::size_t(cc) * h * m;
    double* uim = w.u_im.data() + std::size_t(cc) * h * m;
    // U = exp(+2 pi i ky y / H) summed over ky
    gemm(false, false, h, m, m, 1.0, w.ty.cos_t.data(), m, re.data(), m, 0.0, ure, m);
    gemm(false, false, h, m, m, -1.0, w.ty.sin_t.data(), m, im.data(), m, 1.0, ure, m);
    gemm(false, false, h, m, m, 1.0, w.ty.cos_t.data(), m, im.data(), m, 0.0, uim, m);
    gemm(false, false, h, m, m, 1.0, w.ty.sin_t.data(), m, re.data(), m, 1.0, uim, m);
  }
  out.channels = c;
  out.height = h;
  out.width = wd;
  out.data.resize(std::size_t(c) * h * wd);
  const double scale = 2.0 / (double(h) * wd);
  const std::size_t ch = std::size_t(c) * h;
  gemm(false, true, ch, wd, m, scale, w.u_re.data(), m, w.tx.cos_t.data(), m, 0.0,
       out.data.data(), wd);
  gemm(false, true, ch, wd, m, -scale, w.u_im.data(), m, w.tx.sin_t.data(), m, 1.0,
       out.data.data(), wd);
  for (int cc = 0; cc < c; ++cc) {
    const double dc = yhat[std::size_t(cc) * m * m * 2] / (double(h) * wd);
    double* plane = out.plane(cc);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(out.plane_size()); ++i) plane[i] -= dc;
  }
}

/// Adjoint of spectral_synthesis: cotangent of yhat from a spatial cotangent.
inline void spectral_synthesis_adjoint(const Tensor& g, SpectralWork& w,
                                       std::vector<double>& cot_yhat) {
  const int c = w.channels, h = w.height, m = w.modes, wd = w.width;
  const double scale = 2.0 / (double(h) * wd);
  const std::size_t ch = std::size_t(c) * h;
  gemm(false, false, ch, m, wd, scale, g.data.data(), wd, w.tx.cos_t.data(), m, 0.0,
       w.u_re.data(), m);
  gemm(false, false, ch, m, wd, -scale, g.data.data(), wd, w.tx.sin_t.data(), m, 0.0,
       w.u_im.data(), m);
  cot_yhat.assign(std::size_t(c) * m * m * 2, 0.0);
  std::vector<double> re(std::size_t(m) * m), im(std::size_t(m) * m);
  for (int cc = 0; cc < c; ++cc) {
    const double* ure = w.u_re.data() + std::size_t(cc) * h * m;
    const double* uim = w.u_im.data() + std::size_t(cc) * h * m;
    gemm(true, false, m, m, h, 1.0, w.ty.cos_t.data(), m, ure, m, 0.0, re.data(), m);
    gemm(true, false, m, m, h, 1.0, w.ty.sin_t.data(), m, uim, m, 1.0, re.data(), m);
    gemm(true, false, m, m, h, 1.0, w.ty.cos_t.data(), m, uim, m, 0.0, im.data(), m);
    gemm(true, false, m, m, h, -1.0, w.ty.sin_t.data(), m, ure, m, 1.0, im.data(), m);
    double* out = cot_yhat.data() + std::size_t(cc) * m * m * 2;
    // DC correction: every pixel of the channel subtracted re(yhat[0,0])/(HW)
    double gsum = 0.0;
    const double* plane = g.plane(cc);
    for (std::size_t i = 0; i < g.plane_size(); ++i) gsum += plane[i];
    for (std::size_t k = 0; k < std::size_t(m) * m; ++k) {
      out[2 * k] = re[k];
      out[2 * k + 1] = im[k];
    }
    out[0] -= gsum / (double(h) * wd);
  }
}

/// Standalone truncated spectral convolution: analysis, per-mode channel
/// mixing with the given complex weights, Hermitian synthesis.
inline Tensor spectral_conv(const Tensor& input, const std::vector<double>& weights,
                            int modes) {
  if (modes < 1 || modes > std::min(input.height, input.width) / 2)
    throw std::invalid_argument("spectral_conv: mode count incompatible with resolution");
  if (weights.size() != std::size_t(input.channels) * input.channels * modes * modes * 2)
    throw std::invalid_argument("spectral_conv: weight tensor has wrong size");
  SpectralWork work;
  work.prepare(input.channels, input.height, input.width, modes);
  std::vector<double> xhat, yhat;
  spectral_analysis(input, work, xhat);
  mode_mix(weights.data(), input.channels, modes, xhat, yhat);
  Tensor out;
  spectral_synthesis(yhat, work, out);
  return out;
}

// ===========================================================================
// Model forward / backward
// ===========================================================================

namespace detail {

inline Tensor assemble_input(const FnoModel& m, const Field2D& mu_a) {
  const int h = mu_a.height(), w = mu_a.width();
  Tensor in(m.config.input_channels, h, w);
  const double lo = m.input_min, s = m.input_scale();
  double* c0 = in.plane(0);
  for (std::size_t i = 0; i < mu_a.size(); ++i) c0[i] = (mu_a[i] - lo) * s;
  if (m.config.input_channels == 3) {
    double* cx = in.plane(1);
    double* cy = in.plane(2);
    for (int iy = 0; iy < h; ++iy)
      for (int ix = 0; ix < w; ++ix) {
        const std::size_t i = std::size_t(iy) * w + ix;
        cx[i] = (ix + 0.5) / w;
        cy[i] = (iy + 0.5) / h;
      }
  }
  return in;
}

/// Per-layer intermediate values kept for the backward pass.
struct LayerCache {
  std::vector<double> xhat; // analysis coefficients of the layer input
  Tensor s0;                // spectral branch, spatial, before the local maps
  Tensor z1;                // w1 * s0 + b1 (pre-activation)
  Tensor u;                 // w0 * v + w2 * act(z1) + biases (pre-activation)
};

struct ForwardCache {
  Tensor input;
  std::vector<Tensor> v; // v[0] after lift, v[t+1] after block t
  std::vector<LayerCache> layer;
  Tensor q1;        // proj1 pre-activation
  Tensor aq;        // act(q1)
  std::vector<double> pred_norm;
};

inline thread_local SpectralWork g_spectral_work;

} // namespace detail

/// Predicted fluence for one absorption map. The model is resolution
/// independent: any grid satisfying the mode constraint works unchanged.
/// When `fused` is set, the first local map of each block is folded into the
/// spectral weights (exact algebra, fewer full-size products) — the default
/// for inference inside the correction loop.
inline Field2D fno_forward(const FnoModel& m, const Field2D& mu_a, bool fused = true) {
  m.config.check_resolution(mu_a.height(), mu_a.width());
  const int c = m.config.channels, md = m.config.modes;
  const std::size_t mm = std::size_t(md) * md;
  SpectralWork& work = detail::g_spectral_work;
  work.prepare(c, mu_a.height(), mu_a.width(), md);

  Tensor in = detail::assemble_input(m, mu_a);
  Tensor v, s0, tmp, branch;
  conv1x1(m.p(m.layout.lift_w), m.p(m.layout.lift_b), in, c, v);

  std::vector<double> xhat, yhat, r_fused;
  for (int t = 0; t < m.config.layers; ++t) {
    const auto& blk = m.layout.blocks[t];
    spectral_analysis(v, work, xhat);
    const double* r = m.p(blk.r);
    if (fused) {
      // r_fused[co][ci][k] = sum_cm w1[co][cm] * r[cm][ci][k]
      r_fused.assign(m.layout.r_size(), 0.0);
      const double* w1 = m.p(blk.w1);
      const std::size_t row = std::size_t(c) * mm * 2;
      gemm(false, false, c, row, c, 1.0, w1, c, r, row, 0.0, r_fused.data(), row);
      r = r_fused.data();
    }
    mode_mix(r, c, md, xhat, yhat);
    spectral_synthesis(yhat, work, s0);
    if (fused) {
      const double* b1 = m.p(blk.b1);
      for (int cc = 0; cc < c; ++cc) {
        double* plane = s0.plane(cc);
        const double b = b1[cc];
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(s0.plane_size()); ++i) plane[i] += b;
      }
      activation_inplace(s0.data.data(), s0.size());
      conv1x1(m.p(blk.w2), m.p(blk.b2), s0, c, branch);
    } else {
      conv1x1(m.p(blk.w1), m.p(blk.b1), s0, c, tmp);
      activation_inplace(tmp.data.data(), tmp.size());
      conv1x1(m.p(blk.w2), m.p(blk.b2), tmp, c, branch);
    }
    conv1x1(m.p(blk.w0), m.p(blk.b0), v, c, tmp);
    double* acc = tmp.data.data();
    const double* br = branch.data.data();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(tmp.size()); ++i) acc[i] += br[i];
    if (t + 1 < m.config.layers) activation_inplace(tmp.data.data(), tmp.size());
    std::swap(v, tmp);
  }

  conv1x1(m.p(m.layout.proj1_w), m.p(m.layout.proj1_b), v, c, tmp);
  activation_inplace(tmp.data.data(), tmp.size());
  conv1x1(m.p(m.layout.proj2_w), m.p(m.layout.proj2_b), tmp, 1, branch);

  const double ts = m.target_scale(), t0 = m.target_min;
  const double* q = branch.plane(0);
  std::vector<double> out(mu_a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = t0 + ts * q[i];
  // The Field2D constructor rejects non-finite values, so a diverged model
  // surfaces as an error instead of a silent bad field.
  return Field2D(mu_a.width(), mu_a.height(), mu_a.spacing(), std::move(out));
}

/// Forward pass that additionally returns every intermediate needed by the
/// exact reverse-mode pass (training path; never fuses).
inline detail::ForwardCache fno_forward_cached(const FnoModel& m, const Field2D& mu_a) {
  m.config.check_resolution(mu_a.height(), mu_a.width());
  const int c = m.config.channels, md = m.config.modes;
  SpectralWork& work = detail::g_spectral_work;
  work.prepare(c, mu_a.height(), mu_a.width(), md);

  detail::ForwardCache cache;
  cache.input = detail::assemble_input(m, mu_a);
  cache.v.resize(m.config.layers + 1);
  cache.layer.resize(m.config.layers);
  conv1x1(m.p(m.layout.lift_w), m.p(m.layout.lift_b), cache.input, c, cache.v[0]);

  std::vector<double> yhat;
  Tensor a1, z0, branch;
  for (int t = 0; t < m.config.layers; ++t) {
    const auto& blk = m.layout.blocks[t];
    auto& lc = cache.layer[t];
    spectral_analysis(cache.v[t], work, lc.xhat);
    mode_mix(m.p(blk.r), c, md, lc.xhat, yhat);
    spectral_synthesis(yhat, work, lc.s0);
    conv1x1(m.p(blk.w1), m.p(blk.b1), lc.s0, c, lc.z1);
    a1.channels = c; a1.height = lc.z1.height; a1.width = lc.z1.width;
    a1.data.resize(lc.z1.size());
    activation_to(lc.z1.data.data(), a1.data.data(), a1.size());
    conv1x1(m.p(blk.w2), m.p(blk.b2), a1, c, branch);
    conv1x1(m.p(blk.w0), m.p(blk.b0), cache.v[t], c, lc.u);
    double* acc = lc.u.data.data();
    const double* br = branch.data.data();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(lc.u.size()); ++i) acc[i] += br[i];
    if (t + 1 < m.config.layers) {
      cache.v[t + 1] = lc.u;
      activation_inplace(cache.v[t + 1].data.data(), cache.v[t + 1].size());
    } else {
      cache.v[t + 1] = lc.u;
    }
  }

  conv1x1(m.p(m.layout.proj1_w), m.p(m.layout.proj1_b), cache.v[m.config.layers], c, cache.q1);
  cache.aq.channels = c; cache.aq.height = cache.q1.height; cache.aq.width = cache.q1.width;
  cache.aq.data.resize(cache.q1.size());
  activation_to(cache.q1.data.data(), cache.aq.data.data(), cache.aq.size());
  Tensor q2;
  conv1x1(m.p(m.layout.proj2_w), m.p(m.layout.proj2_b), cache.aq, 1, q2);
  cache.pred_norm.assign(q2.plane(0), q2.plane(0) + q2.plane_size());
  return cache;
}

struct FnoGradients {
  double loss = 0.0;
  std::vector<double> flat; // same layout as FnoModel::params
};

/// Mean-squared-error loss against a target fluence field plus exact
/// reverse-mode gradients for every parameter.
inline FnoGradients fno_backward(const FnoModel& m, const Field2D& mu_a,
                                 const Field2D& target) {
  if (mu_a.width() != target.width() || mu_a.height() != target.height())
    throw std::invalid_argument("fno_backward: input and target shapes differ");
  const int c = m.config.channels, md = m.config.modes;
  const std::size_t n = mu_a.size();
  detail::ForwardCache cache = fno_forward_cached(m, mu_a);
  SpectralWork& work = detail::g_spectral_work;

  FnoGradients g;
  g.flat.assign(m.layout.total, 0.0);

  // Loss in output units; chain through the affine de-normalization.
  const double ts = m.target_scale(), t0 = m.target_min;
  Tensor dq2(1, mu_a.height(), mu_a.width());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pred = t0 + ts * cache.pred_norm[i];
    const double diff = pred - target[i];
    loss += diff * diff;
    dq2.data[i] = 2.0 * diff / double(n) * ts;
  }
  g.loss = loss / double(n);

  // Projection head.
  Tensor d_aq, d_q1, dv;
  conv1x1_backward(m.p(m.layout.proj2_w), cache.aq, dq2, g.flat.data() + m.layout.proj2_w,
                   g.flat.data() + m.layout.proj2_b, &d_aq);
  d_q1 = std::move(d_aq);
  activation_backward(cache.q1.data.data(), d_q1.data.data(), d_q1.size());
  conv1x1_backward(m.p(m.layout.proj1_w), cache.v[m.config.layers], d_q1,
                   g.flat.data() + m.layout.proj1_w, g.flat.data() + m.layout.proj1_b, &dv);

  // Blocks in reverse.
  std::vector<double> cot_yhat, cot_xhat;
  Tensor du, d_a1, d_s0, dv_from_spec, dv_prev, a1;
  for (int t = m.config.layers - 1; t >= 0; --t) {
    const auto& blk = m.layout.blocks[t];
    auto& lc = cache.layer[t];
    du = std::move(dv);
    if (t + 1 < m.config.layers)
      activation_backward(lc.u.data.data(), du.data.data(), du.size());

    // Bypass path: u += w0 v + b0.
    conv1x1_backward(m.p(blk.w0), cache.v[t], du, g.flat.data() + blk.w0,
                     g.flat.data() + blk.b0, &dv_prev);

    // Local path: u += w2 act(w1 s0 + b1) + b2.
    a1.channels = c; a1.height = lc.z1.height; a1.width = lc.z1.width;
    a1.data.resize(lc.z1.size());
    activation_to(lc.z1.data.data(), a1.data.data(), a1.size());
    conv1x1_backward(m.p(blk.w2), a1, du, g.flat.data() + blk.w2, g.flat.data() + blk.b2,
                     &d_a1);
    activation_backward(lc.z1.data.data(), d_a1.data.data(), d_a1.size());
    conv1x1_backward(m.p(blk.w1), lc.s0, d_a1, g.flat.data() + blk.w1,
                     g.flat.data() + blk.b1, &d_s0);

    // Spectral path adjoints.
    work.prepare(c, mu_a.height(), mu_a.width(), md);
    spectral_synthesis_adjoint(d_s0, work, cot_yhat);
    mode_mix_backward(m.p(blk.r), c, md, lc.xhat, cot_yhat, g.flat.data() + blk.r, cot_xhat);
    spectral_analysis_adjoint(cot_xhat, work, dv_from_spec);

    double* acc = dv_prev.data.data();
    const double* add = dv_from_spec.data.data();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(dv_prev.size()); ++i) acc[i] += add[i];
    dv = std::move(dv_prev);
  }

  // Lift.
  conv1x1_backward(m.p(m.layout.lift_w), cache.input, dv, g.flat.data() + m.layout.lift_w,
                   g.flat.data() + m.layout.lift_b, nullptr);
  return g;
}

// ===========================================================================
// Checkpoint format: "FNO1" | version u32 | modes, channels, layers,
// input_channels (u32 each) | input_min/max, target_min/max (f64) |
// parameters f64 in flat layout order. Little-endian.
// ===========================================================================

inline void save_checkpoint(const FnoModel& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
  const char magic[4] = {'F', 'N', 'O', '1'};
  out.write(magic, 4);
  auto w32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  auto w64 = [&](double v) { out.write(reinterpret_cast<const char*>(&v), 8); };
  w32(1);
  w32(std::uint32_t(m.config.modes));
  w32(std::uint32_t(m.config.channels));
  w32(std::uint32_t(m.config.layers));
  w32(std::uint32_t(m.config.input_channels));
  w64(m.input_min);
  w64(m.input_max);
  w64(m.target_min);
  w64(m.target_max);
  out.write(reinterpret_cast<const char*>(m.params.data()),
            std::streamsize(m.params.size() * 8));
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path.string());
}

inline FnoModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "FNO1", 4) != 0)
    throw format_error("load_checkpoint: bad magic in " + path.string());
  auto r32 = [&]() {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  auto r64 = [&]() {
    double v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
  };
  const std::uint32_t version = r32();
  if (version != 1) throw format_error("load_checkpoint: unsupported version");
  FnoModel m;
  m.config.modes = int(r32());
  m.config.channels = int(r32());
  m.config.layers = int(r32());
  m.config.input_channels = int(r32());
  m.input_min = r64();
  m.input_max = r64();
  m.target_min = r64();
  m.target_max = r64();
  if (!in) throw format_error("load_checkpoint: truncated header in " + path.string());
  try {
    m.config.validate();
  } catch (const config_error& e) {
    throw format_error(std::string("load_checkpoint: invalid config: ") + e.what());
  }
  m.layout = ParamLayout::make(m.config);
  m.params.resize(m.layout.total);
  in.read(reinterpret_cast<char*>(m.params.data()), std::streamsize(m.params.size() * 8));
  if (std::size_t(in.gcount()) != m.params.size() * 8)
    throw format_error("load_checkpoint: truncated parameters in " + path.string());
  char extra;
  if (in.read(&extra, 1).gcount() != 0)
    throw format_error("load_checkpoint: trailing bytes in " + path.string());
  for (double v : m.params)
    if (!std::isfinite(v)) throw format_error("load_checkpoint: non-finite parameter");
  return m;
}

} // namespace qpat
