#pragma once

// Differentiable primitives on the gradient tape. Shapes must match exactly;
// there is no implicit broadcasting.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rfn/autodiff.hpp"

namespace rfn::ad {

namespace detail {

template <class T> void require_complex(Var<T> v, const char *op) {
  if (!v.is_complex())
    throw std::invalid_argument(std::string(op) + ": expected complex input");
}
template <class T> void require_real(Var<T> v, const char *op) {
  if (v.is_complex())
    throw std::invalid_argument(std::string(op) + ": expected real input");
}
template <class T> void require_same_kind(Var<T> a, Var<T> b, const char *op) {
  if (a.is_complex() != b.is_complex())
    throw std::invalid_argument(std::string(op) +
                                ": cannot mix real and complex operands");
}

template <class T> void accumulate(std::span<T> dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i)
    dst[i] += src[i];
}

} // namespace detail

template <class T> Var<T> add(Var<T> a, Var<T> b) {
  Tape<T> &t = *a.tape;
  detail::require_same_kind(a, b, "add");
  require_same_shape(a.shape(), b.shape(), "add");
  const auto &na = t.node(a);
  const auto &nb = t.node(b);
  const bool cx = na.complex;
  std::vector<T> re(na.re.size()), im(cx ? na.re.size() : 0);
  for (std::size_t i = 0; i < re.size(); ++i)
    re[i] = na.re[i] + nb.re[i];
  for (std::size_t i = 0; i < im.size(); ++i)
    im[i] = na.im[i] + nb.im[i];
  const std::size_t out = t.size();
  return t.push(na.shape, cx, std::move(re), std::move(im), {a, b},
                [=](GradBuffers<T> &g) {
                  for (auto in : {a.id, b.id}) {
                    if (!g.wants(in))
                      continue;
                    detail::accumulate<T>(g.re(in), g.cre(out));
                    if (cx)
                      detail::accumulate<T>(g.im(in), g.cim(out));
                  }
                });
}

template <class T> Var<T> sub(Var<T> a, Var<T> b) {
  Tape<T> &t = *a.tape;
  detail::require_same_kind(a, b, "sub");
  require_same_shape(a.shape(), b.shape(), "sub");
  const auto &na = t.node(a);
  const auto &nb = t.node(b);
  const bool cx = na.complex;
  std::vector<T> re(na.re.size()), im(cx ? na.re.size() : 0);
  for (std::size_t i = 0; i < re.size(); ++i)
    re[i] = na.re[i] - nb.re[i];
  for (std::size_t i = 0; i < im.size(); ++i)
    im[i] = na.im[i] - nb.im[i];
  const std::size_t out = t.size();
  return t.push(na.shape, cx, std::move(re), std::move(im), {a, b},
                [=](GradBuffers<T> &g) {
                  const T sign[2] = {T{1}, T{-1}};
                  const std::size_t ins[2] = {a.id, b.id};
                  for (int k = 0; k < 2; ++k) {
                    if (!g.wants(ins[k]))
                      continue;
                    auto gr = g.re(ins[k]);
                    auto src = g.cre(out);
                    for (std::size_t i = 0; i < gr.size(); ++i)
                      gr[i] += sign[k] * src[i];
                    if (cx) {
                      auto gi = g.im(ins[k]);
                      auto srci = g.cim(out);
                      for (std::size_t i = 0; i < gi.size(); ++i)
                        gi[i] += sign[k] * srci[i];
                    }
                  }
                });
}

/// Elementwise product. For complex operands this is
/// (c + jd)(a + jb) = ca - db + j(cb + da).
template <class T> Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T> &t = *a.tape;
  detail::require_same_kind(a, b, "mul");
  require_same_shape(a.shape(), b.shape(), "mul");
  const auto &na = t.node(a);
  const auto &nb = t.node(b);
  const bool cx = na.complex;
  const std::size_t n = na.re.size();
  std::vector<T> re(n), im(cx ? n : 0);
  if (cx) {
    for (std::size_t i = 0; i < n; ++i) {
      re[i] = na.re[i] * nb.re[i] - na.im[i] * nb.im[i];
      im[i] = na.re[i] * nb.im[i] + na.im[i] * nb.re[i];
    }
  } else {
    for (std::size_t i = 0; i < n; ++i)
      re[i] = na.re[i] * nb.re[i];
  }
  const std::size_t out = t.size();
  const Tape<T> *tp = &t;
  return t.push(na.shape, cx, std::move(re), std::move(im), {a, b},
                [=](GradBuffers<T> &g) {
                  const auto &xa = tp->node(a.id);
                  const auto &xb = tp->node(b.id);
                  auto gr = g.cre(out);
                  // d/da of a*b contracted with g is conj(b) * g.
                  auto backprop = [&](std::size_t dst, const Node<T> &other) {
                    if (!g.wants(dst))
                      return;
                    auto dr = g.re(dst);
                    if (!cx) {
                      for (std::size_t i = 0; i < n; ++i)
                        dr[i] += other.re[i] * gr[i];
                      return;
                    }
                    auto gi = g.cim(out);
                    auto di = g.im(dst);
                    for (std::size_t i = 0; i < n; ++i) {
                      dr[i] += other.re[i] * gr[i] + other.im[i] * gi[i];
                      di[i] += other.re[i] * gi[i] - other.im[i] * gr[i];
                    }
                  };
                  backprop(a.id, xb);
                  backprop(b.id, xa);
                });
}

/// Multiplies every element by a real constant.
template <class T> Var<T> scale(Var<T> a, T s) {
  Tape<T> &t = *a.tape;
  const auto &na = t.node(a);
  const bool cx = na.complex;
  std::vector<T> re(na.re), im(na.im);
  for (auto &v : re)
    v *= s;
  for (auto &v : im)
    v *= s;
  const std::size_t out = t.size();
  return t.push(na.shape, cx, std::move(re), std::move(im), {a},
                [=](GradBuffers<T> &g) {
                  auto dr = g.re(a.id);
                  auto gr = g.cre(out);
                  for (std::size_t i = 0; i < dr.size(); ++i)
                    dr[i] += s * gr[i];
                  if (cx) {
                    auto di = g.im(a.id);
                    auto gi = g.cim(out);
                    for (std::size_t i = 0; i < di.size(); ++i)
                      di[i] += s * gi[i];
                  }
                });
}

template <class T> Var<T> reshape(Var<T> a, Shape shape) {
  Tape<T> &t = *a.tape;
  const auto &na = t.node(a);
  if (shape.numel() != na.shape.numel())
    throw std::invalid_argument("reshape: cannot view " + na.shape.str() +
                                " as " + shape.str());
  const bool cx = na.complex;
  const std::size_t out = t.size();
  return t.push(std::move(shape), cx, na.re, na.im, {a},
                [=](GradBuffers<T> &g) {
                  detail::accumulate<T>(g.re(a.id), g.cre(out));
                  if (cx)
                    detail::accumulate<T>(g.im(a.id), g.cim(out));
                });
}

/// Real part of a complex tensor.
template <class T> Var<T> real_part(Var<T> a) {
  detail::require_complex(a, "real_part");
  Tape<T> &t = *a.tape;
  const auto &na = t.node(a);
  const std::size_t out = t.size();
  return t.push(na.shape, false, na.re, {}, {a}, [=](GradBuffers<T> &g) {
    detail::accumulate<T>(g.re(a.id), g.cre(out));
  });
}

/// Imaginary part of a complex tensor.
template <class T> Var<T> imag_part(Var<T> a) {
  detail::require_complex(a, "imag_part");
  Tape<T> &t = *a.tape;
  const auto &na = t.node(a);
  const std::size_t out = t.size();
  return t.push(na.shape, false, na.im, {}, {a}, [=](GradBuffers<T> &g) {
    detail::accumulate<T>(g.im(a.id), g.cre(out));
  });
}

/// Elementwise squared magnitude re^2 + im^2 (real output).
template <class T> Var<T> abs2(Var<T> a) {
  detail::require_complex(a, "abs2");
  Tape<T> &t = *a.tape;
  const auto &na = t.node(a);
  std::vector<T> re(na.re.size());
  for (std::size_t i = 0; i < re.size(); ++i)
    re[i] = na.re[i] * na.re[i] + na.im[i] * na.im[i];
  const std::size_t out = t.size();
  const Tape<T> *tp = &t;
  return t.push(na.shape, false, std::move(re), {}, {a},
                [=](GradBuffers<T> &g) {
                  const auto &x = tp->node(a.id);
                  auto gr = g.cre(out);
                  auto dr = g.re(a.id);
                  auto di = g.im(a.id);
                  for (std::size_t i = 0; i < gr.size(); ++i) {
                    dr[i] += T{2} * x.re[i] * gr[i];
                    di[i] += T{2} * x.im[i] * gr[i];
                  }
                });
}

/// Sum of all elements of a real tensor, left to right.
template <class T> Var<T> sum(Var<T> a) {
  detail::require_real(a, "sum");
  Tape<T> &t = *a.tape;
  const auto &na = t.node(a);
  T acc{};
  for (auto v : na.re)
    acc += v;
  const std::size_t out = t.size();
  return t.push(Shape{1}, false, {acc}, {}, {a}, [=](GradBuffers<T> &g) {
    const T s = g.cre(out)[0];
    for (auto &v : g.re(a.id))
      v += s;
  });
}

/// Mean of all elements of a real tensor.
template <class T> Var<T> mean(Var<T> a) {
  return scale(sum(a), T{1} / static_cast<T>(a.shape().numel()));
}

/// Matrix product of real (n, k) and (k, m).
template <class T> Var<T> matmul(Var<T> a, Var<T> b) {
  detail::require_real(a, "matmul");
  detail::require_real(b, "matmul");
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.rank() != 2 || sb.rank() != 2 || sa[1] != sb[0])
    throw std::invalid_argument("matmul: incompatible shapes " + sa.str() +
                                " and " + sb.str());
  Tape<T> &t = *a.tape;
  const std::size_t n = sa[0], k = sa[1], m = sb[1];
  const auto &A = t.node(a).re;
  const auto &B = t.node(b).re;
  std::vector<T> C(n * m, T{});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const T av = A[i * k + p];
      const T *brow = &B[p * m];
      T *crow = &C[i * m];
      for (std::size_t j = 0; j < m; ++j)
        crow[j] += av * brow[j];
    }
  const std::size_t out = t.size();
  const Tape<T> *tp = &t;
  return t.push(Shape{n, m}, false, std::move(C), {}, {a, b},
                [=](GradBuffers<T> &g) {
                  const auto &A = tp->node(a.id).re;
                  const auto &B = tp->node(b.id).re;
                  auto G = g.cre(out);
                  if (g.wants(a.id)) {
                    auto dA = g.re(a.id);
                    for (std::size_t i = 0; i < n; ++i)
                      for (std::size_t p = 0; p < k; ++p) {
                        T acc{};
                        for (std::size_t j = 0; j < m; ++j)
                          acc += G[i * m + j] * B[p * m + j];
                        dA[i * k + p] += acc;
                      }
                  }
                  if (g.wants(b.id)) {
                    auto dB = g.re(b.id);
                    for (std::size_t i = 0; i < n; ++i)
                      for (std::size_t p = 0; p < k; ++p) {
                        const T av = A[i * k + p];
                        for (std::size_t j = 0; j < m; ++j)
                          dB[p * m + j] += av * G[i * m + j];
                      }
                  }
                });
}

/// Batched matrix product of real (b, n, k) and (b, k, m).
template <class T> Var<T> bmm(Var<T> a, Var<T> b) {
  detail::require_real(a, "bmm");
  detail::require_real(b, "bmm");
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.rank() != 3 || sb.rank() != 3 || sa[0] != sb[0] || sa[2] != sb[1])
    throw std::invalid_argument("bmm: incompatible shapes " + sa.str() +
                                " and " + sb.str());
  Tape<T> &t = *a.tape;
  const std::size_t nb = sa[0], n = sa[1], k = sa[2], m = sb[2];
  const auto &A = t.node(a).re;
  const auto &B = t.node(b).re;
  std::vector<T> C(nb * n * m, T{});
  for (std::size_t q = 0; q < nb; ++q)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const T av = A[(q * n + i) * k + p];
        const T *brow = &B[(q * k + p) * m];
        T *crow = &C[(q * n + i) * m];
        for (std::size_t j = 0; j < m; ++j)
          crow[j] += av * brow[j];
      }
  const std::size_t out = t.size();
  const Tape<T> *tp = &t;
  return t.push(Shape{nb, n, m}, false, std::move(C), {}, {a, b},
                [=](GradBuffers<T> &g) {
                  const auto &A = tp->node(a.id).re;
                  const auto &B = tp->node(b.id).re;
                  auto G = g.cre(out);
                  const bool da = g.wants(a.id), db = g.wants(b.id);
                  std::span<T> dA, dB;
                  if (da)
                    dA = g.re(a.id);
                  if (db)
                    dB = g.re(b.id);
                  for (std::size_t q = 0; q < nb; ++q)
                    for (std::size_t i = 0; i < n; ++i) {
                      const T *grow = &G[(q * n + i) * m];
                      for (std::size_t p = 0; p < k; ++p) {
                        const T *brow = &B[(q * k + p) * m];
                        if (da) {
                          T acc{};
                          for (std::size_t j = 0; j < m; ++j)
                            acc += grow[j] * brow[j];
                          dA[(q * n + i) * k + p] += acc;
                        }
                        if (db) {
                          const T av = A[(q * n + i) * k + p];
                          T *dbrow = &dB[(q * k + p) * m];
                          for (std::size_t j = 0; j < m; ++j)
                            dbrow[j] += av * grow[j];
                        }
                      }
                    }
                });
}

/// Swaps the last two axes of a real rank-3 tensor.
template <class T> Var<T> transpose_last(Var<T> a) {
  detail::require_real(a, "transpose_last");
  const Shape s = a.shape();
  if (s.rank() != 3)
    throw std::invalid_argument("transpose_last: expected rank 3, got " +
                                s.str());
  Tape<T> &t = *a.tape;
  const std::size_t nb = s[0], n = s[1], m = s[2];
  const auto &A = t.node(a).re;
  std::vector<T> out_v(A.size());
  for (std::size_t q = 0; q < nb; ++q)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j)
        out_v[(q * m + j) * n + i] = A[(q * n + i) * m + j];
  const std::size_t out = t.size();
  return t.push(Shape{nb, m, n}, false, std::move(out_v), {}, {a},
                [=](GradBuffers<T> &g) {
                  auto G = g.cre(out);
                  auto dA = g.re(a.id);
                  for (std::size_t q = 0; q < nb; ++q)
                    for (std::size_t i = 0; i < n; ++i)
                      for (std::size_t j = 0; j < m; ++j)
                        dA[(q * n + i) * m + j] += G[(q * m + j) * n + i];
                });
}

/// Adds a bias vector of length c to every row of a real (..., c) tensor.
template <class T> Var<T> add_bias(Var<T> x, Var<T> bias) {
  detail::require_real(x, "add_bias");
  detail::require_real(bias, "add_bias");
  const Shape sx = x.shape(), sb = bias.shape();
  if (sb.rank() != 1 || sx[sx.rank() - 1] != sb[0])
    throw std::invalid_argument("add_bias: bias " + sb.str() +
                                " does not match trailing extent of " +
                                sx.str());
  Tape<T> &t = *x.tape;
  const std::size_t c = sb[0], rows = sx.numel() / c;
  std::vector<T> v(t.node(x).re);
  const auto &b = t.node(bias).re;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j)
      v[r * c + j] += b[j];
  const std::size_t out = t.size();
  return t.push(sx, false, std::move(v), {}, {x, bias},
                [=](GradBuffers<T> &g) {
                  auto G = g.cre(out);
                  if (g.wants(x.id))
                    detail::accumulate<T>(g.re(x.id), G);
                  if (g.wants(bias.id)) {
                    auto db = g.re(bias.id);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t j = 0; j < c; ++j)
                        db[j] += G[r * c + j];
                  }
                });
}

/// Affine map of the trailing axis: (..., in) x (in, out) -> (..., out).
template <class T> Var<T> linear(Var<T> x, Var<T> weight) {
  const Shape sx = x.shape();
  const Shape sw = weight.shape();
  if (sw.rank() != 2 || sx[sx.rank() - 1] != sw[0])
    throw std::invalid_argument("linear: input " + sx.str() +
                                " does not match weight " + sw.str());
  const std::size_t rows = sx.numel() / sw[0];
  auto y = matmul(reshape(x, Shape{rows, sw[0]}), weight);
  std::vector<std::size_t> dims = sx.dims();
  dims.back() = sw[1];
  return reshape(y, Shape(dims));
}

/// Row-wise softmax over the trailing axis, with max subtraction.
template <class T> Var<T> softmax(Var<T> x) {
  detail::require_real(x, "softmax");
  const Shape s = x.shape();
  Tape<T> &t = *x.tape;
  const std::size_t c = s[s.rank() - 1], rows = s.numel() / c;
  const auto &X = t.node(x).re;
  std::vector<T> P(X.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T *xr = &X[r * c];
    T *pr = &P[r * c];
    T mx = xr[0];
    for (std::size_t j = 1; j < c; ++j)
      mx = std::max(mx, xr[j]);
    T z{};
    for (std::size_t j = 0; j < c; ++j) {
      pr[j] = std::exp(xr[j] - mx);
      z += pr[j];
    }
    for (std::size_t j = 0; j < c; ++j)
      pr[j] /= z;
  }
  const std::size_t out = t.size();
  const Tape<T> *tp = &t;
  return t.push(s, false, std::move(P), {}, {x}, [=](GradBuffers<T> &g) {
    const auto &P = tp->node(out).re;
    auto G = g.cre(out);
    auto dX = g.re(x.id);
    for (std::size_t r = 0; r < rows; ++r) {
      T dot{};
      for (std::size_t j = 0; j < c; ++j)
        dot += G[r * c + j] * P[r * c + j];
      for (std::size_t j = 0; j < c; ++j)
        dX[r * c + j] += P[r * c + j] * (G[r * c + j] - dot);
    }
  });
}

/// Concatenates two real tensors along the trailing axis.
template <class T> Var<T> concat_last(Var<T> a, Var<T> b) {
  detail::require_real(a, "concat_last");
  detail::require_real(b, "concat_last");
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.rank() != sb.rank())
    throw std::invalid_argument("concat_last: rank mismatch " + sa.str() +
                                " vs " + sb.str());
  for (std::size_t i = 0; i + 1 < sa.rank(); ++i)
    if (sa[i] != sb[i])
      throw std::invalid_argument("concat_last: leading extents differ " +
                                  sa.str() + " vs " + sb.str());
  Tape<T> &t = *a.tape;
  const std::size_t p = sa[sa.rank() - 1], q = sb[sb.rank() - 1];
  const std::size_t rows = sa.numel() / p;
  const auto &A = t.node(a).re;
  const auto &B = t.node(b).re;
  std::vector<T> v(rows * (p + q));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(&A[r * p], p, &v[r * (p + q)]);
    std::copy_n(&B[r * q], q, &v[r * (p + q) + p]);
  }
  std::vector<std::size_t> dims = sa.dims();
  dims.back() = p + q;
  const std::size_t out = t.size();
  return t.push(Shape(dims), false, std::move(v), {}, {a, b},
                [=](GradBuffers<T> &g) {
                  auto G = g.cre(out);
                  if (g.wants(a.id)) {
                    auto dA = g.re(a.id);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t j = 0; j < p; ++j)
                        dA[r * p + j] += G[r * (p + q) + j];
                  }
                  if (g.wants(b.id)) {
                    auto dB = g.re(b.id);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t j = 0; j < q; ++j)
                        dB[r * q + j] += G[r * (p + q) + p + j];
                  }
                });
}

/// (B, L, E) -> (B*H, L, E/H): head h takes columns [h*d, (h+1)*d).
template <class T> Var<T> split_heads(Var<T> x, std::size_t heads) {
  detail::require_real(x, "split_heads");
  const Shape s = x.shape();
  if (s.rank() != 3 || heads == 0 || s[2] % heads != 0)
    throw std::invalid_argument("split_heads: cannot split " + s.str() +
                                " into " + std::to_string(heads) + " heads");
  Tape<T> &t = *x.tape;
  const std::size_t B = s[0], L = s[1], E = s[2], d = E / heads;
  const auto &X = t.node(x).re;
  std::vector<T> v(X.size());
  auto src = [=](std::size_t b, std::size_t h, std::size_t l, std::size_t j) {
    return (b * L + l) * E + h * d + j;
  };
  auto dst = [=](std::size_t b, std::size_t h, std::size_t l, std::size_t j) {
    return ((b * heads + h) * L + l) * d + j;
  };
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t j = 0; j < d; ++j)
          v[dst(b, h, l, j)] = X[src(b, h, l, j)];
  const std::size_t out = t.size();
  return t.push(Shape{B * heads, L, d}, false, std::move(v), {}, {x},
                [=](GradBuffers<T> &g) {
                  auto G = g.cre(out);
                  auto dX = g.re(x.id);
                  for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t h = 0; h < heads; ++h)
                      for (std::size_t l = 0; l < L; ++l)
                        for (std::size_t j = 0; j < d; ++j)
                          dX[src(b, h, l, j)] += G[dst(b, h, l, j)];
                });
}

/// Inverse of split_heads: (B*H, L, d) -> (B, L, H*d).
template <class T> Var<T> merge_heads(Var<T> x, std::size_t heads) {
  detail::require_real(x, "merge_heads");
  const Shape s = x.shape();
  if (s.rank() != 3 || heads == 0 || s[0] % heads != 0)
    throw std::invalid_argument("merge_heads: cannot merge " + s.str() +
                                " over " + std::to_string(heads) + " heads");
  Tape<T> &t = *x.tape;
  const std::size_t B = s[0] / heads, L = s[1], d = s[2], E = d * heads;
  const auto &X = t.node(x).re;
  std::vector<T> v(X.size());
  auto src = [=](std::size_t b, std::size_t h, std::size_t l, std::size_t j) {
    return ((b * heads + h) * L + l) * d + j;
  };
  auto dst = [=](std::size_t b, std::size_t h, std::size_t l, std::size_t j) {
    return (b * L + l) * E + h * d + j;
  };
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t j = 0; j < d; ++j)
          v[dst(b, h, l, j)] = X[src(b, h, l, j)];
  const std::size_t out = t.size();
  return t.push(Shape{B, L, E}, false, std::move(v), {}, {x},
                [=](GradBuffers<T> &g) {
                  auto G = g.cre(out);
                  auto dX = g.re(x.id);
                  for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t h = 0; h < heads; ++h)
                      for (std::size_t l = 0; l < L; ++l)
                        for (std::size_t j = 0; j < d; ++j)
                          dX[src(b, h, l, j)] += G[dst(b, h, l, j)];
                });
}

/// Mean over the middle axis of a real (B, L, D) tensor -> (B, D).
template <class T> Var<T> mean_tokens(Var<T> x) {
  detail::require_real(x, "mean_tokens");
  const Shape s = x.shape();
  if (s.rank() != 3)
    throw std::invalid_argument("mean_tokens: expected (B, L, D), got " +
                                s.str());
  Tape<T> &t = *x.tape;
  const std::size_t B = s[0], L = s[1], D = s[2];
  const T inv = T{1} / static_cast<T>(L);
  const auto &X = t.node(x).re;
  std::vector<T> v(B * D, T{});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t j = 0; j < D; ++j)
        v[b * D + j] += X[(b * L + l) * D + j];
    for (std::size_t j = 0; j < D; ++j)
      v[b * D + j] *= inv;
  }
  const std::size_t out = t.size();
  return t.push(Shape{B, D}, false, std::move(v), {}, {x},
                [=](GradBuffers<T> &g) {
                  auto G = g.cre(out);
                  auto dX = g.re(x.id);
                  for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t l = 0; l < L; ++l)
                      for (std::size_t j = 0; j < D; ++j)
                        dX[(b * L + l) * D + j] += inv * G[b * D + j];
                });
}

/// Mean cross-entropy over a batch of logits (B, C) and integer labels,
/// evaluated through a max-shifted log-softmax.
template <class T>
Var<T> cross_entropy_logits(Var<T> logits, std::span<const std::size_t> labels) {
  detail::require_real(logits, "cross_entropy_logits");
  const Shape s = logits.shape();
  if (s.rank() != 2 || s[0] != labels.size())
    throw std::invalid_argument("cross_entropy_logits: logits " + s.str() +
                                " do not match " +
                                std::to_string(labels.size()) + " labels");
  Tape<T> &t = *logits.tape;
  const std::size_t B = s[0], C = s[1];
  const auto &X = t.node(logits).re;
  std::vector<T> P(B * C);
  T loss{};
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] >= C)
      throw std::invalid_argument("cross_entropy_logits: label " +
                                  std::to_string(labels[b]) +
                                  " out of range for " + std::to_string(C) +
                                  " classes");
    const T *xr = &X[b * C];
    for (std::size_t j = 0; j < C; ++j)
      if (std::isnan(xr[j]))
        throw std::domain_error("cross_entropy_logits: NaN logit");
    T mx = xr[0];
    for (std::size_t j = 1; j < C; ++j)
      mx = std::max(mx, xr[j]);
    T z{};
    for (std::size_t j = 0; j < C; ++j)
      z += std::exp(xr[j] - mx);
    const T logz = mx + std::log(z);
    for (std::size_t j = 0; j < C; ++j)
      P[b * C + j] = std::exp(xr[j] - logz);
    loss += logz - xr[labels[b]];
  }
  loss /= static_cast<T>(B);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  const std::size_t out = t.size();
  return t.push(Shape{1}, false, {loss}, {}, {logits},
                [=, P = std::move(P)](GradBuffers<T> &g) {
                  const T s = g.cre(out)[0] / static_cast<T>(B);
                  auto dX = g.re(logits.id);
                  for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t j = 0; j < C; ++j)
                      dX[b * C + j] +=
                          s * (P[b * C + j] - (j == lab[b] ? T{1} : T{0}));
                });
}

} // namespace rfn::ad
