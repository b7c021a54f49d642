#pragma once

// Scaled dot-product cross-attention and bidirectional fusion of the two
// branch token sequences.

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>

#include "rfn/layers.hpp"
#include "rfn/ops.hpp"

namespace rfn {

/// softmax(Q K^T / sqrt(d_k)) for Q (b, n, d_k) and K (b, m, d_k).
template <class T> ad::Var<T> attention_weights(ad::Var<T> q, ad::Var<T> k) {
  const Shape &sq = q.shape(), &sk = k.shape();
  if (sq.rank() != 3 || sk.rank() != 3)
    throw std::invalid_argument("attention: expected rank-3 Q and K, got " +
                                sq.str() + " and " + sk.str());
  if (sq[2] != sk[2])
    throw std::invalid_argument("attention: d_k mismatch between Q " +
                                sq.str() + " and K " + sk.str());
  if (sq[0] != sk[0])
    throw std::invalid_argument("attention: batch mismatch between Q " +
                                sq.str() + " and K " + sk.str());
  const T inv_sqrt_dk = T{1} / std::sqrt(static_cast<T>(sq[2]));
  return ad::softmax(ad::scale(ad::bmm(q, ad::transpose_last(k)), inv_sqrt_dk));
}

/// Attn(Q, K, V) = softmax(Q K^T / sqrt(d_k)) V.
template <class T>
ad::Var<T> scaled_dot_attention(ad::Var<T> q, ad::Var<T> k, ad::Var<T> v) {
  const Shape &sk = k.shape(), &sv = v.shape();
  if (sv.rank() != 3 || sk[1] != sv[1] || sk[0] != sv[0])
    throw std::invalid_argument("attention: K " + sk.str() + " and V " +
                                sv.str() + " must share their token count");
  return ad::bmm(attention_weights(q, k), v);
}

/// Projection weights of one attention direction, each (token_dim, E).
template <class T> struct DirectionVars {
  ad::Var<T> wq, wk, wv;
};

/// Multi-head attention with queries from `query_src` (B, L, D) and keys and
/// values from `kv_src` (B, L', D). The E-wide projections are split into
/// `heads` heads of width E / heads and the head outputs are concatenated.
template <class T>
ad::Var<T> cross_attention(ad::Var<T> query_src, ad::Var<T> kv_src,
                           const DirectionVars<T> &w, std::size_t heads) {
  auto q = ad::split_heads(ad::linear(query_src, w.wq), heads);
  auto k = ad::split_heads(ad::linear(kv_src, w.wk), heads);
  auto v = ad::split_heads(ad::linear(kv_src, w.wv), heads);
  return ad::merge_heads(scaled_dot_attention(q, k, v), heads);
}

/// A1 = Attn(f, F, F), A2 = Attn(F, f, f), A = concat(A1, A2) on the
/// trailing axis: (B, L, D) x (B, L, D) -> (B, L, 2E).
template <class T>
ad::Var<T> bidirectional_fuse(ad::Var<T> iq_tokens, ad::Var<T> fft_tokens,
                              const DirectionVars<T> &iq_to_fft,
                              const DirectionVars<T> &fft_to_iq,
                              std::size_t heads) {
  const Shape &a = iq_tokens.shape(), &b = fft_tokens.shape();
  if (a.rank() != 3 || b.rank() != 3 || a[0] != b[0] || a[1] != b[1])
    throw std::invalid_argument("bidirectional_fuse: token count mismatch " +
                                a.str() + " vs " + b.str());
  auto a1 = cross_attention(iq_tokens, fft_tokens, iq_to_fft, heads);
  auto a2 = cross_attention(fft_tokens, iq_tokens, fft_to_iq, heads);
  return ad::concat_last(a1, a2);
}

/// Mean over tokens followed by one fully connected layer: (B, L, D) ->
/// (B, C).
template <class T>
ad::Var<T> classify(ad::Var<T> fused, ad::Var<T> weight, ad::Var<T> bias) {
  const Shape &s = fused.shape(), &w = weight.shape();
  if (s.rank() != 3 || w.rank() != 2 || s[2] != w[0])
    throw std::invalid_argument("classify: fused tokens " + s.str() +
                                " do not match head weight " + w.str());
  return ad::add_bias(ad::linear(ad::mean_tokens(fused), weight), bias);
}

/// H(p, q) = -sum_j q_j log(p_j) for predicted p and target q. Predicted
/// probabilities below 1e-12 are clamped.
template <class T>
T cross_entropy(std::span<const T> predicted, std::span<const T> target) {
  if (predicted.size() != target.size())
    throw std::invalid_argument("cross_entropy: distributions differ in "
                                "length");
  constexpr T floor = T(1e-12);
  T h{};
  for (std::size_t j = 0; j < predicted.size(); ++j) {
    if (std::isnan(predicted[j]) || std::isnan(target[j]))
      throw std::domain_error("cross_entropy: NaN input");
    h -= target[j] * std::log(std::max(predicted[j], floor));
  }
  return h;
}

/// Value-level complex (C, L) -> real (L, 2C) token matrix.
template <class T> RealTensor<T> complex_to_real(const ComplexTensor<T> &f) {
  const Shape &s = f.shape();
  if (s.rank() != 2)
    throw std::invalid_argument("complex_to_real: expected (C, L), got " +
                                s.str());
  ad::Tape<T> tape;
  auto r = ad::complex_to_real(
      tape.constant(f.reshaped(Shape{1, s[0], s[1]})));
  return tape.real_value(r).reshaped(Shape{s[1], 2 * s[0]});
}

} // namespace rfn
