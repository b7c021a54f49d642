#pragma once

// Complex-valued layers: convolution, split batch normalization, cReLU,
// average pooling, and the complex -> real token conversion.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rfn/ops.hpp"

namespace rfn::ad {

struct Stride2 {
  std::size_t h = 1;
  std::size_t w = 1;
};

/// Valid cross-correlation of a complex (B, C_in, H, W) input with complex
/// kernels (C_out, C_in, kh, kw) plus a complex bias (C_out). Each
/// multiply-accumulate is the complex product k * x.
template <class T>
Var<T> cconv2d(Var<T> x, Var<T> kernel, Var<T> bias, Stride2 stride = {}) {
  detail::require_complex(x, "cconv2d");
  detail::require_complex(kernel, "cconv2d");
  detail::require_complex(bias, "cconv2d");
  const Shape sx = x.shape(), sk = kernel.shape(), sb = bias.shape();
  if (sx.rank() != 4 || sk.rank() != 4)
    throw std::invalid_argument("cconv2d: expected input (B, C, H, W) and "
                                "kernel (O, C, kh, kw), got " +
                                sx.str() + " and " + sk.str());
  if (sx[1] != sk[1])
    throw std::invalid_argument("cconv2d: input channels of " + sx.str() +
                                " do not match kernel " + sk.str());
  if (sk[2] > sx[2] || sk[3] > sx[3])
    throw std::invalid_argument("cconv2d: kernel " + sk.str() +
                                " larger than input " + sx.str());
  if (sb.rank() != 1 || sb[0] != sk[0])
    throw std::invalid_argument("cconv2d: bias " + sb.str() +
                                " does not match kernel " + sk.str());
  if (stride.h == 0 || stride.w == 0)
    throw std::invalid_argument("cconv2d: stride must be positive");

  Tape<T> &t = *x.tape;
  const std::size_t B = sx[0], Ci = sx[1], H = sx[2], W = sx[3];
  const std::size_t Co = sk[0], kh = sk[2], kw = sk[3];
  const std::size_t sh = stride.h, sw = stride.w;
  const std::size_t Ho = (H - kh) / sh + 1, Wo = (W - kw) / sw + 1;

  const auto &nx = t.node(x);
  const auto &nk = t.node(kernel);
  const auto &nb = t.node(bias);
  std::vector<T> ore(B * Co * Ho * Wo), oim(B * Co * Ho * Wo);

  auto xi = [=](std::size_t b, std::size_t c, std::size_t h, std::size_t w) {
    return ((b * Ci + c) * H + h) * W + w;
  };
  auto ki = [=](std::size_t o, std::size_t c, std::size_t i, std::size_t j) {
    return ((o * Ci + c) * kh + i) * kw + j;
  };
  auto oi = [=](std::size_t b, std::size_t o, std::size_t h, std::size_t w) {
    return ((b * Co + o) * Ho + h) * Wo + w;
  };

  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < Co; ++o) {
      T *yr = &ore[oi(b, o, 0, 0)];
      T *yi = &oim[oi(b, o, 0, 0)];
      for (std::size_t p = 0; p < Ho * Wo; ++p) {
        yr[p] = nb.re[o];
        yi[p] = nb.im[o];
      }
      for (std::size_t c = 0; c < Ci; ++c)
        for (std::size_t i = 0; i < kh; ++i)
          for (std::size_t j = 0; j < kw; ++j) {
            const T a = nk.re[ki(o, c, i, j)];
            const T bk = nk.im[ki(o, c, i, j)];
            for (std::size_t h = 0; h < Ho; ++h) {
              const T *xr = &nx.re[xi(b, c, h * sh + i, j)];
              const T *xm = &nx.im[xi(b, c, h * sh + i, j)];
              T *rr = yr + h * Wo;
              T *ri = yi + h * Wo;
              for (std::size_t w = 0; w < Wo; ++w) {
                const T cr = xr[w * sw], dm = xm[w * sw];
                rr[w] += cr * a - dm * bk;
                ri[w] += cr * bk + dm * a;
              }
            }
          }
    }

  const std::size_t out = t.size();
  const Tape<T> *tp = &t;
  return t.push(
      Shape{B, Co, Ho, Wo}, true, std::move(ore), std::move(oim),
      {x, kernel, bias}, [=](GradBuffers<T> &g) {
        const auto &nx = tp->node(x.id);
        const auto &nk = tp->node(kernel.id);
        auto gr = g.cre(out), gi = g.cim(out);
        const bool want_x = g.wants(x.id), want_k = g.wants(kernel.id),
                   want_b = g.wants(bias.id);
        std::span<T> dxr, dxi, dkr, dki;
        if (want_x) {
          dxr = g.re(x.id);
          dxi = g.im(x.id);
        }
        if (want_k) {
          dkr = g.re(kernel.id);
          dki = g.im(kernel.id);
        }
        if (want_b) {
          auto dbr = g.re(bias.id), dbi = g.im(bias.id);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o = 0; o < Co; ++o)
              for (std::size_t p = 0; p < Ho * Wo; ++p) {
                dbr[o] += gr[oi(b, o, 0, 0) + p];
                dbi[o] += gi[oi(b, o, 0, 0) + p];
              }
        }
        if (!want_x && !want_k)
          return;
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t o = 0; o < Co; ++o) {
            const T *Gr = &gr[oi(b, o, 0, 0)];
            const T *Gi = &gi[oi(b, o, 0, 0)];
            for (std::size_t c = 0; c < Ci; ++c)
              for (std::size_t i = 0; i < kh; ++i)
                for (std::size_t j = 0; j < kw; ++j) {
                  const std::size_t kk = ki(o, c, i, j);
                  const T a = nk.re[kk], bk = nk.im[kk];
                  T acc_r{}, acc_i{};
                  for (std::size_t h = 0; h < Ho; ++h) {
                    const std::size_t base = xi(b, c, h * sh + i, j);
                    const T *ggr = Gr + h * Wo;
                    const T *ggi = Gi + h * Wo;
                    if (want_k) {
                      const T *xr = &nx.re[base];
                      const T *xm = &nx.im[base];
                      for (std::size_t w = 0; w < Wo; ++w) {
                        const T cr = xr[w * sw], dm = xm[w * sw];
                        acc_r += cr * ggr[w] + dm * ggi[w];
                        acc_i += cr * ggi[w] - dm * ggr[w];
                      }
                    }
                    if (want_x) {
                      T *dr = &dxr[base];
                      T *di = &dxi[base];
                      for (std::size_t w = 0; w < Wo; ++w) {
                        dr[w * sw] += a * ggr[w] + bk * ggi[w];
                        di[w * sw] += a * ggi[w] - bk * ggr[w];
                      }
                    }
                  }
                  if (want_k) {
                    dkr[kk] += acc_r;
                    dki[kk] += acc_i;
                  }
                }
          }
      });
}

/// cReLU: passes z when both parts are >= 0, otherwise returns 0.
template <class T> Var<T> crelu(Var<T> z) {
  detail::require_complex(z, "crelu");
  Tape<T> &t = *z.tape;
  const auto &nz = t.node(z);
  const std::size_t n = nz.re.size();
  std::vector<T> re(n), im(n);
  std::vector<unsigned char> pass(n);
  T margin = std::numeric_limits<T>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    pass[i] = nz.re[i] >= T{0} && nz.im[i] >= T{0};
    re[i] = pass[i] ? nz.re[i] : T{0};
    im[i] = pass[i] ? nz.im[i] : T{0};
    margin = std::min({margin, std::abs(nz.re[i]), std::abs(nz.im[i])});
  }
  t.note_kink_distance(margin);
  const std::size_t out = t.size();
  return t.push(nz.shape, true, std::move(re), std::move(im), {z},
                [=, pass = std::move(pass)](GradBuffers<T> &g) {
                  auto gr = g.cre(out), gi = g.cim(out);
                  auto dr = g.re(z.id), di = g.im(z.id);
                  for (std::size_t i = 0; i < n; ++i)
                    if (pass[i]) {
                      dr[i] += gr[i];
                      di[i] += gi[i];
                    }
                });
}

/// Non-overlapping complex average pooling over the last two axes of a
/// (..., H, W) tensor. Trailing rows/columns that do not fill a window are
/// dropped.
template <class T>
Var<T> cavgpool2d(Var<T> x, std::size_t window_h, std::size_t window_w) {
  detail::require_complex(x, "cavgpool2d");
  if (window_h < 1 || window_w < 1)
    throw std::invalid_argument("cavgpool2d: window must be >= 1");
  const Shape s = x.shape();
  if (s.rank() < 2)
    throw std::invalid_argument("cavgpool2d: expected rank >= 2, got " +
                                s.str());
  const std::size_t H = s[s.rank() - 2], W = s[s.rank() - 1];
  const std::size_t Ho = H / window_h, Wo = W / window_w;
  if (Ho == 0 || Wo == 0)
    throw std::invalid_argument("cavgpool2d: window (" +
                                std::to_string(window_h) + ", " +
                                std::to_string(window_w) +
                                ") larger than input " + s.str());
  const std::size_t planes = s.numel() / (H * W);
  const T inv = T{1} / static_cast<T>(window_h * window_w);
  Tape<T> &t = *x.tape;
  const auto &nx = t.node(x);
  std::vector<T> re(planes * Ho * Wo), im(planes * Ho * Wo);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t h = 0; h < Ho; ++h)
      for (std::size_t w = 0; w < Wo; ++w) {
        T ar{}, ai{};
        for (std::size_t i = 0; i < window_h; ++i)
          for (std::size_t j = 0; j < window_w; ++j) {
            const std::size_t src =
                (p * H + h * window_h + i) * W + w * window_w + j;
            ar += nx.re[src];
            ai += nx.im[src];
          }
        re[(p * Ho + h) * Wo + w] = ar * inv;
        im[(p * Ho + h) * Wo + w] = ai * inv;
      }
  std::vector<std::size_t> dims = s.dims();
  dims[dims.size() - 2] = Ho;
  dims[dims.size() - 1] = Wo;
  const std::size_t out = t.size();
  return t.push(Shape(dims), true, std::move(re), std::move(im), {x},
                [=](GradBuffers<T> &g) {
                  auto gr = g.cre(out), gi = g.cim(out);
                  auto dr = g.re(x.id), di = g.im(x.id);
                  for (std::size_t p = 0; p < planes; ++p)
                    for (std::size_t h = 0; h < Ho; ++h)
                      for (std::size_t w = 0; w < Wo; ++w) {
                        const std::size_t o = (p * Ho + h) * Wo + w;
                        for (std::size_t i = 0; i < window_h; ++i)
                          for (std::size_t j = 0; j < window_w; ++j) {
                            const std::size_t src =
                                (p * H + h * window_h + i) * W + w * window_w +
                                j;
                            dr[src] += inv * gr[o];
                            di[src] += inv * gi[o];
                          }
                      }
                });
}

/// Complex average pooling along the last axis with a non-overlapping window.
template <class T> Var<T> cavgpool(Var<T> x, std::size_t window) {
  const Shape s = x.shape();
  std::vector<std::size_t> dims = s.dims();
  dims.insert(dims.end() - 1, 1);
  auto y = cavgpool2d(reshape(x, Shape(dims)), 1, window);
  std::vector<std::size_t> od = y.shape().dims();
  od.erase(od.end() - 2);
  return reshape(y, Shape(od));
}

enum class BnMode { train, eval };

/// Per-channel statistics of the real and imaginary parts observed in one
/// training-mode batch-norm call.
template <class T> struct BnBatchStats {
  std::vector<T> mean_re, var_re, mean_im, var_im;
};

template <class T> struct BnRunning {
  std::span<const T> mean_re, var_re, mean_im, var_im;
};

/// Split batch normalization of a complex (B, C, ...) tensor: the real and
/// imaginary parts are normalized independently per channel and each gets
/// its own affine (gamma, beta). Train mode uses biased batch statistics and
/// reports them through `stats_out`; eval mode uses `running`.
template <class T>
Var<T> cbatchnorm(Var<T> x, Var<T> gamma_re, Var<T> gamma_im, Var<T> beta_re,
                  Var<T> beta_im, BnMode mode, BnRunning<T> running = {},
                  T epsilon = T(1e-5), BnBatchStats<T> *stats_out = nullptr) {
  detail::require_complex(x, "cbatchnorm");
  for (auto p : {gamma_re, gamma_im, beta_re, beta_im})
    detail::require_real(p, "cbatchnorm");
  if (!(epsilon > T{0}))
    throw std::invalid_argument("cbatchnorm: epsilon must be positive");
  const Shape s = x.shape();
  if (s.rank() < 2)
    throw std::invalid_argument("cbatchnorm: expected (B, C, ...), got " +
                                s.str());
  const std::size_t B = s[0], C = s[1], inner = s.numel() / (B * C);
  for (auto p : {gamma_re, gamma_im, beta_re, beta_im})
    if (p.shape() != Shape{C})
      throw std::invalid_argument("cbatchnorm: affine parameter " +
                                  p.shape().str() + " does not match " +
                                  std::to_string(C) + " channels");
  if (mode == BnMode::train && B < 2)
    throw std::invalid_argument(
        "cbatchnorm: train mode needs a batch of at least 2, got " +
        std::to_string(B));
  if (mode == BnMode::eval &&
      (running.mean_re.size() != C || running.var_re.size() != C ||
       running.mean_im.size() != C || running.var_im.size() != C))
    throw std::invalid_argument("cbatchnorm: running statistics missing or "
                                "wrong size for eval mode");

  Tape<T> &t = *x.tape;
  const auto &nx = t.node(x);
  const T m = static_cast<T>(B * inner);
  auto at = [=](std::size_t b, std::size_t c, std::size_t k) {
    return (b * C + c) * inner + k;
  };

  // Per channel and part: mean, inverse std.
  std::vector<T> mu[2], istd[2];
  for (int part = 0; part < 2; ++part) {
    mu[part].assign(C, T{});
    istd[part].assign(C, T{});
  }
  BnBatchStats<T> stats;
  if (mode == BnMode::train) {
    stats.mean_re.resize(C);
    stats.var_re.resize(C);
    stats.mean_im.resize(C);
    stats.var_im.resize(C);
  }
  for (int part = 0; part < 2; ++part) {
    const auto &v = part == 0 ? nx.re : nx.im;
    for (std::size_t c = 0; c < C; ++c) {
      T mean_c, var_c;
      if (mode == BnMode::train) {
        T acc{};
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t k = 0; k < inner; ++k)
            acc += v[at(b, c, k)];
        mean_c = acc / m;
        T sq{};
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t k = 0; k < inner; ++k) {
            const T d = v[at(b, c, k)] - mean_c;
            sq += d * d;
          }
        var_c = sq / m;
        (part == 0 ? stats.mean_re : stats.mean_im)[c] = mean_c;
        (part == 0 ? stats.var_re : stats.var_im)[c] = var_c;
      } else {
        mean_c = (part == 0 ? running.mean_re : running.mean_im)[c];
        var_c = (part == 0 ? running.var_re : running.var_im)[c];
      }
      mu[part][c] = mean_c;
      istd[part][c] = T{1} / std::sqrt(var_c + epsilon);
    }
  }
  if (stats_out)
    *stats_out = stats;

  const auto &g_re = t.node(gamma_re).re, &g_im = t.node(gamma_im).re;
  const auto &b_re = t.node(beta_re).re, &b_im = t.node(beta_im).re;
  const std::size_t n = nx.re.size();
  std::vector<T> ore(n), oim(n);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t k = 0; k < inner; ++k) {
        const std::size_t i = at(b, c, k);
        ore[i] = g_re[c] * (nx.re[i] - mu[0][c]) * istd[0][c] + b_re[c];
        oim[i] = g_im[c] * (nx.im[i] - mu[1][c]) * istd[1][c] + b_im[c];
      }

  const std::size_t out = t.size();
  const Tape<T> *tp = &t;
  const bool train = mode == BnMode::train;
  return t.push(
      s, true, std::move(ore), std::move(oim),
      {x, gamma_re, gamma_im, beta_re, beta_im},
      [=](GradBuffers<T> &g) {
        const auto &nx = tp->node(x.id);
        const std::size_t gamma_ids[2] = {gamma_re.id, gamma_im.id};
        const std::size_t beta_ids[2] = {beta_re.id, beta_im.id};
        for (int part = 0; part < 2; ++part) {
          const auto &xv = part == 0 ? nx.re : nx.im;
          auto G = part == 0 ? g.cre(out) : g.cim(out);
          const auto &gam = tp->node(gamma_ids[part]).re;
          const bool want_g = g.wants(gamma_ids[part]);
          const bool want_b = g.wants(beta_ids[part]);
          const bool want_x = g.wants(x.id);
          for (std::size_t c = 0; c < C; ++c) {
            T sum_g{}, sum_gx{};
            for (std::size_t b = 0; b < B; ++b)
              for (std::size_t k = 0; k < inner; ++k) {
                const std::size_t i = at(b, c, k);
                const T xhat = (xv[i] - mu[part][c]) * istd[part][c];
                sum_g += G[i];
                sum_gx += G[i] * xhat;
              }
            if (want_g)
              g.re(gamma_ids[part])[c] += sum_gx;
            if (want_b)
              g.re(beta_ids[part])[c] += sum_g;
            if (!want_x)
              continue;
            auto dx = part == 0 ? g.re(x.id) : g.im(x.id);
            const T scale_c = gam[c] * istd[part][c];
            for (std::size_t b = 0; b < B; ++b)
              for (std::size_t k = 0; k < inner; ++k) {
                const std::size_t i = at(b, c, k);
                if (train) {
                  const T xhat = (xv[i] - mu[part][c]) * istd[part][c];
                  dx[i] += scale_c * (G[i] - sum_g / m - xhat * sum_gx / m);
                } else {
                  dx[i] += scale_c * G[i];
                }
              }
          }
        }
      });
}

/// Complex (B, C, L) -> real tokens (B, L, 2C). Token t holds the real parts
/// of all C channels followed by their imaginary parts.
template <class T> Var<T> complex_to_real(Var<T> f) {
  detail::require_complex(f, "complex_to_real");
  const Shape s = f.shape();
  if (s.rank() != 3)
    throw std::invalid_argument("complex_to_real: expected (B, C, L), got " +
                                s.str());
  const std::size_t B = s[0], C = s[1], L = s[2];
  Tape<T> &t = *f.tape;
  const auto &nf = t.node(f);
  std::vector<T> v(B * L * 2 * C);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t l = 0; l < L; ++l) {
        const std::size_t src = (b * C + c) * L + l;
        v[(b * L + l) * 2 * C + c] = nf.re[src];
        v[(b * L + l) * 2 * C + C + c] = nf.im[src];
      }
  const std::size_t out = t.size();
  return t.push(Shape{B, L, 2 * C}, false, std::move(v), {}, {f},
                [=](GradBuffers<T> &g) {
                  auto G = g.cre(out);
                  auto dr = g.re(f.id), di = g.im(f.id);
                  for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t c = 0; c < C; ++c)
                      for (std::size_t l = 0; l < L; ++l) {
                        const std::size_t src = (b * C + c) * L + l;
                        dr[src] += G[(b * L + l) * 2 * C + c];
                        di[src] += G[(b * L + l) * 2 * C + C + c];
                      }
                });
}

} // namespace rfn::ad
