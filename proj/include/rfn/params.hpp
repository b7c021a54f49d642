#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rfn/autodiff.hpp"
#include "rfn/tensor.hpp"

namespace rfn {

/// Ordered, named set of model tensors. Non-trainable entries hold state such
/// as batch-norm running statistics.
template <class T> class ParamStore {
public:
  struct Entry {
    std::string name;
    AnyTensor<T> value;
    bool trainable = true;
  };

  std::size_t add(std::string name, AnyTensor<T> value, bool trainable = true) {
    for (const auto &e : entries_)
      if (e.name == name)
        throw std::invalid_argument("duplicate parameter name " + name);
    entries_.push_back({std::move(name), std::move(value), trainable});
    return entries_.size() - 1;
  }

  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] const Entry &operator[](std::size_t i) const {
    return entries_.at(i);
  }
  [[nodiscard]] Entry &operator[](std::size_t i) { return entries_.at(i); }
  [[nodiscard]] auto begin() const { return entries_.begin(); }
  [[nodiscard]] auto end() const { return entries_.end(); }
  [[nodiscard]] auto begin() { return entries_.begin(); }
  [[nodiscard]] auto end() { return entries_.end(); }

  [[nodiscard]] std::size_t index_of(std::string_view name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name == name)
        return i;
    throw std::out_of_range("no parameter named " + std::string(name));
  }

  [[nodiscard]] const RealTensor<T> &real(std::size_t i) const {
    return std::get<RealTensor<T>>(entries_.at(i).value);
  }
  [[nodiscard]] RealTensor<T> &real(std::size_t i) {
    return std::get<RealTensor<T>>(entries_.at(i).value);
  }
  [[nodiscard]] const ComplexTensor<T> &complex(std::size_t i) const {
    return std::get<ComplexTensor<T>>(entries_.at(i).value);
  }

  [[nodiscard]] std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto &e : entries_)
      if (e.trainable)
        n += shape_of(e.value).numel() * (is_complex(e.value) ? 2 : 1);
    return n;
  }

  friend bool operator==(const ParamStore &a, const ParamStore &b) {
    if (a.entries_.size() != b.entries_.size())
      return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      const auto &x = a.entries_[i], &y = b.entries_[i];
      if (x.name != y.name || x.trainable != y.trainable || !(x.value == y.value))
        return false;
    }
    return true;
  }

private:
  std::vector<Entry> entries_;
};

/// Puts every store entry on the tape as a leaf; trainable entries require
/// gradients. The returned vector is indexed like the store.
template <class T>
std::vector<ad::Var<T>> bind(ad::Tape<T> &tape, const ParamStore<T> &store) {
  std::vector<ad::Var<T>> vars;
  vars.reserve(store.size());
  for (const auto &e : store)
    vars.push_back(tape.leaf(e.value, e.trainable));
  return vars;
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Per-name generator so a parameter's initial value depends only on the
/// model seed and its name, not on registration order.
inline std::mt19937_64 param_rng(std::uint64_t seed, std::string_view name) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(fnv1a(name)),
                    static_cast<std::uint32_t>(fnv1a(name) >> 32)};
  return std::mt19937_64(seq);
}

template <class T>
RealTensor<T> uniform_real(Shape shape, T bound, std::mt19937_64 &rng) {
  RealTensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> d(-static_cast<double>(bound),
                                           static_cast<double>(bound));
  for (auto &v : t.data())
    v = static_cast<T>(d(rng));
  return t;
}

template <class T>
ComplexTensor<T> uniform_complex(Shape shape, T bound, std::mt19937_64 &rng) {
  ComplexTensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> d(-static_cast<double>(bound),
                                           static_cast<double>(bound));
  for (auto &v : t.re())
    v = static_cast<T>(d(rng));
  for (auto &v : t.im())
    v = static_cast<T>(d(rng));
  return t;
}

} // namespace rfn
