#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rfn/params.hpp"

namespace rfn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate > 0))
      throw std::invalid_argument("adam: learning rate must be positive");
    if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1))
      throw std::invalid_argument("adam: betas must lie in (0, 1)");
    if (!(epsilon > 0))
      throw std::invalid_argument("adam: epsilon must be positive");
  }
};

/// First and second moments per parameter plane. Complex parameters carry
/// separate moments for their real and imaginary planes.
template <class T> struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t step = 0;
};

namespace detail {

template <class T> std::span<T> plane(AnyTensor<T> &t, int part) {
  if (auto *r = std::get_if<RealTensor<T>>(&t))
    return r->data();
  auto &c = std::get<ComplexTensor<T>>(t);
  return part == 0 ? c.re() : c.im();
}

template <class T> std::span<const T> plane(const AnyTensor<T> &t, int part) {
  if (auto *r = std::get_if<RealTensor<T>>(&t))
    return r->data();
  const auto &c = std::get<ComplexTensor<T>>(t);
  return part == 0 ? c.re() : c.im();
}

} // namespace detail

/// One bias-corrected Adam update of every trainable entry:
///   m = b1 m + (1 - b1) g,  v = b2 v + (1 - b2) g^2
///   p -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
/// `grads` is indexed like the store; non-trainable entries are skipped.
template <class T>
void adam_step(ParamStore<T> &params, const std::vector<AnyTensor<T>> &grads,
               AdamState<T> &state, const AdamConfig &cfg) {
  cfg.validate();
  if (grads.size() != params.size())
    throw std::invalid_argument("adam: " + std::to_string(grads.size()) +
                                " gradients for " +
                                std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable)
      continue;
    if (!(shape_of(grads[i]) == shape_of(params[i].value)) ||
        is_complex(grads[i]) != is_complex(params[i].value))
      throw std::invalid_argument("adam: gradient for " + params[i].name +
                                  " has shape " + shape_of(grads[i]).str() +
                                  ", parameter has " +
                                  shape_of(params[i].value).str());
    const int parts = is_complex(grads[i]) ? 2 : 1;
    for (int part = 0; part < parts; ++part)
      for (T g : detail::plane(grads[i], part))
        if (!std::isfinite(g))
          throw std::domain_error("adam: non-finite gradient for " +
                                  params[i].name);
  }

  // Two moment slots per entry: [2i] real/re plane, [2i+1] im plane.
  if (state.m.empty()) {
    state.m.resize(2 * params.size());
    state.v.resize(2 * params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      const std::size_t n = shape_of(params[i].value).numel();
      const int parts = is_complex(params[i].value) ? 2 : 1;
      for (int part = 0; part < parts; ++part) {
        state.m[2 * i + part].assign(n, T{});
        state.v[2 * i + part].assign(n, T{});
      }
    }
  }
  if (state.m.size() != 2 * params.size())
    throw std::invalid_argument("adam: state does not match parameter set");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(cfg.beta1, t));
  const T c2 = static_cast<T>(1.0 - std::pow(cfg.beta2, t));
  const T lr = static_cast<T>(cfg.learning_rate);
  const T eps = static_cast<T>(cfg.epsilon);

  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable)
      continue;
    const int parts = is_complex(params[i].value) ? 2 : 1;
    // A tensor whose gradient is identically zero did not take part in the
    // loss; it and its moments are left untouched.
    bool any = false;
    for (int part = 0; part < parts && !any; ++part)
      for (T gv : detail::plane(grads[i], part))
        if (gv != T{0}) {
          any = true;
          break;
        }
    if (!any)
      continue;
    for (int part = 0; part < parts; ++part) {
      auto p = detail::plane(params[i].value, part);
      auto g = detail::plane(grads[i], part);
      auto &m = state.m[2 * i + part];
      auto &v = state.v[2 * i + part];
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = b1 * m[j] + (T{1} - b1) * g[j];
        v[j] = b2 * v[j] + (T{1} - b2) * g[j] * g[j];
        const T mhat = m[j] / c1;
        const T vhat = v[j] / c2;
        p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }
}

} // namespace rfn
