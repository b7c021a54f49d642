#pragma once

// Central finite-difference verification of tape gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "rfn/autodiff.hpp"
#include "rfn/params.hpp"

namespace rfn {

template <class T> struct GradCheckReport {
  T max_rel_error = T{0};
  std::string worst; // "tensor <i> element <j> <re|im>"
  T kink_margin = std::numeric_limits<T>::infinity();
  std::size_t coordinates = 0;
};

template <class T>
using LossFn =
    std::function<ad::Var<T>(ad::Tape<T> &, const std::vector<ad::Var<T>> &)>;

/// Compares the tape gradient of `fn` at `point` against central
/// differences with the given step, over every coordinate of the tensors
/// marked in `checked` (all tensors when empty). The error per coordinate is
/// |analytic - numeric| / max(|analytic|, |numeric|, floor); the floor keeps
/// structurally zero gradients (e.g. a conv bias ahead of batch norm) from
/// turning roundoff into a large ratio.
template <class T>
GradCheckReport<T> grad_check(const LossFn<T> &fn,
                              std::vector<AnyTensor<T>> point, T step,
                              std::vector<bool> checked = {},
                              T floor = T(1e-5)) {
  if (!(step > T{0}))
    throw std::invalid_argument("grad_check: step must be positive");
  if (checked.empty())
    checked.assign(point.size(), true);
  if (checked.size() != point.size())
    throw std::invalid_argument("grad_check: mask size mismatch");

  auto evaluate = [&](const std::vector<AnyTensor<T>> &values, T *margin,
                      std::vector<AnyTensor<T>> *grads) {
    ad::Tape<T> tape;
    std::vector<ad::Var<T>> leaves;
    for (std::size_t i = 0; i < values.size(); ++i)
      leaves.push_back(tape.leaf(values[i], checked[i]));
    auto loss = fn(tape, leaves);
    const T v = tape.scalar(loss);
    if (margin)
      *margin = tape.kink_margin();
    if (grads) {
      auto g = tape.backward(loss);
      for (auto &l : leaves)
        grads->push_back(g.of(l));
    }
    return v;
  };

  GradCheckReport<T> rep;
  std::vector<AnyTensor<T>> analytic;
  const T base = evaluate(point, &rep.kink_margin, &analytic);
  if (!std::isfinite(base))
    throw std::domain_error("grad_check: non-finite loss at the base point");

  auto values_of = [](AnyTensor<T> &t, int part) -> std::span<T> {
    if (auto *r = std::get_if<RealTensor<T>>(&t))
      return r->data();
    auto &c = std::get<ComplexTensor<T>>(t);
    return part == 0 ? c.re() : c.im();
  };

  for (std::size_t ti = 0; ti < point.size(); ++ti) {
    if (!checked[ti])
      continue;
    const int parts = is_complex(point[ti]) ? 2 : 1;
    for (int part = 0; part < parts; ++part) {
      const std::size_t n = shape_of(point[ti]).numel();
      for (std::size_t j = 0; j < n; ++j) {
        const std::string where = "tensor " + std::to_string(ti) +
                                  " element " + std::to_string(j) +
                                  (part == 0 ? " re" : " im");
        const T orig = values_of(point[ti], part)[j];
        values_of(point[ti], part)[j] = orig + step;
        const T up = evaluate(point, nullptr, nullptr);
        values_of(point[ti], part)[j] = orig - step;
        const T down = evaluate(point, nullptr, nullptr);
        values_of(point[ti], part)[j] = orig;
        const T numeric = (up - down) / (T{2} * step);
        const T a = values_of(analytic[ti], part)[j];
        if (!std::isfinite(numeric) || !std::isfinite(a))
          throw std::domain_error("grad_check: non-finite value at " + where);
        const T denom = std::max({std::abs(a), std::abs(numeric), floor});
        const T err = std::abs(a - numeric) / denom;
        ++rep.coordinates;
        if (rep.worst.empty() || err > rep.max_rel_error) {
          rep.max_rel_error = err;
          rep.worst = where;
        }
      }
    }
  }
  return rep;
}

/// Single-tensor form: `fn` maps a complex point to a real scalar.
template <class T>
T grad_check(const std::function<ad::Var<T>(ad::Tape<T> &, ad::Var<T>)> &fn,
             const ComplexTensor<T> &point, T step) {
  LossFn<T> wrapped = [&](ad::Tape<T> &tape,
                          const std::vector<ad::Var<T>> &leaves) {
    return fn(tape, leaves[0]);
  };
  return grad_check<T>(wrapped, {AnyTensor<T>(point)}, step).max_rel_error;
}

/// Checks every trainable tensor of a store; non-trainable entries are bound
/// as constants. Extra tensors (e.g. inputs) are appended after the store and
/// always checked.
template <class T>
GradCheckReport<T> grad_check_store(const LossFn<T> &fn,
                                    const ParamStore<T> &store, T step,
                                    std::vector<AnyTensor<T>> extra = {}) {
  std::vector<AnyTensor<T>> point;
  std::vector<bool> mask;
  for (const auto &e : store) {
    point.push_back(e.value);
    mask.push_back(e.trainable);
  }
  for (auto &x : extra) {
    point.push_back(std::move(x));
    mask.push_back(true);
  }
  return grad_check<T>(fn, std::move(point), step, std::move(mask));
}

} // namespace rfn
