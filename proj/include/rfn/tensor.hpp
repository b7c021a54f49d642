#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace rfn {

/// Ordered list of strictly positive extents.
class Shape {
public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims) : dims_(dims) { validate(); }
  explicit Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
    validate();
  }

  [[nodiscard]] std::size_t rank() const { return dims_.size(); }
  [[nodiscard]] std::size_t operator[](std::size_t i) const {
    return dims_.at(i);
  }
  [[nodiscard]] const std::vector<std::size_t> &dims() const { return dims_; }
  [[nodiscard]] std::size_t numel() const {
    if (dims_.empty())
      return 0;
    return std::accumulate(dims_.begin(), dims_.end(), std::size_t{1},
                           std::multiplies<>());
  }
  [[nodiscard]] bool empty() const { return dims_.empty(); }

  friend bool operator==(const Shape &, const Shape &) = default;

  [[nodiscard]] std::string str() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < dims_.size(); ++i)
      os << (i ? ", " : "") << dims_[i];
    if (dims_.size() == 1)
      os << ',';
    os << ')';
    return os.str();
  }

private:
  void validate() const {
    if (dims_.empty())
      throw std::invalid_argument("shape must have at least one extent");
    for (auto d : dims_)
      if (d == 0)
        throw std::invalid_argument("zero extent in shape " + str());
  }

  std::vector<std::size_t> dims_;
};

inline void require_same_shape(const Shape &a, const Shape &b,
                               const char *what) {
  if (!(a == b))
    throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                a.str() + " vs " + b.str());
}

/// Dense row-major real array.
template <class T> class RealTensor {
public:
  using value_type = T;

  RealTensor() = default;
  explicit RealTensor(Shape shape, T fill = T{})
      : shape_(std::move(shape)), data_(shape_.numel(), fill) {
    if (shape_.empty())
      throw std::invalid_argument("RealTensor requires a non-empty shape");
  }
  RealTensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.empty())
      throw std::invalid_argument("RealTensor requires a non-empty shape");
    if (data_.size() != shape_.numel())
      throw std::invalid_argument("RealTensor data size " +
                                  std::to_string(data_.size()) +
                                  " does not match shape " + shape_.str());
  }

  [[nodiscard]] const Shape &shape() const { return shape_; }
  [[nodiscard]] std::size_t numel() const { return data_.size(); }
  [[nodiscard]] std::span<const T> data() const { return data_; }
  [[nodiscard]] std::span<T> data() { return data_; }
  [[nodiscard]] T operator[](std::size_t i) const { return data_[i]; }
  [[nodiscard]] T &operator[](std::size_t i) { return data_[i]; }

  [[nodiscard]] RealTensor reshaped(Shape s) const {
    if (s.numel() != numel())
      throw std::invalid_argument("cannot reshape " + shape_.str() + " to " +
                                  s.str());
    return RealTensor(std::move(s), data_);
  }

  friend bool operator==(const RealTensor &, const RealTensor &) = default;

private:
  Shape shape_;
  std::vector<T> data_;
};

/// Dense complex array stored as separate real and imaginary planes.
template <class T> class ComplexTensor {
public:
  using value_type = T;

  ComplexTensor() = default;
  explicit ComplexTensor(Shape shape)
      : shape_(std::move(shape)), re_(shape_.numel()), im_(shape_.numel()) {
    if (shape_.empty())
      throw std::invalid_argument("ComplexTensor requires a non-empty shape");
  }
  ComplexTensor(Shape shape, std::vector<T> re, std::vector<T> im)
      : shape_(std::move(shape)), re_(std::move(re)), im_(std::move(im)) {
    if (shape_.empty())
      throw std::invalid_argument("ComplexTensor requires a non-empty shape");
    if (re_.size() != shape_.numel() || im_.size() != shape_.numel())
      throw std::invalid_argument("ComplexTensor planes do not match shape " +
                                  shape_.str());
  }

  [[nodiscard]] static ComplexTensor
  from_complex(Shape shape, std::span<const std::complex<T>> values) {
    ComplexTensor t(std::move(shape));
    if (values.size() != t.numel())
      throw std::invalid_argument("complex value count does not match shape");
    for (std::size_t i = 0; i < values.size(); ++i) {
      t.re_[i] = values[i].real();
      t.im_[i] = values[i].imag();
    }
    return t;
  }

  [[nodiscard]] const Shape &shape() const { return shape_; }
  [[nodiscard]] std::size_t numel() const { return re_.size(); }
  [[nodiscard]] std::span<const T> re() const { return re_; }
  [[nodiscard]] std::span<const T> im() const { return im_; }
  [[nodiscard]] std::span<T> re() { return re_; }
  [[nodiscard]] std::span<T> im() { return im_; }

  [[nodiscard]] std::complex<T> at(std::size_t i) const {
    return {re_[i], im_[i]};
  }
  void set(std::size_t i, std::complex<T> v) {
    re_[i] = v.real();
    im_[i] = v.imag();
  }

  [[nodiscard]] ComplexTensor reshaped(Shape s) const {
    if (s.numel() != numel())
      throw std::invalid_argument("cannot reshape " + shape_.str() + " to " +
                                  s.str());
    return ComplexTensor(std::move(s), re_, im_);
  }

  [[nodiscard]] bool all_finite() const {
    for (std::size_t i = 0; i < re_.size(); ++i)
      if (!std::isfinite(re_[i]) || !std::isfinite(im_[i]))
        return false;
    return true;
  }

  friend bool operator==(const ComplexTensor &, const ComplexTensor &) =
      default;

private:
  Shape shape_;
  std::vector<T> re_;
  std::vector<T> im_;
};

template <class T>
using AnyTensor = std::variant<RealTensor<T>, ComplexTensor<T>>;

template <class T> const Shape &shape_of(const AnyTensor<T> &t) {
  return std::visit([](const auto &v) -> const Shape & { return v.shape(); },
                    t);
}

template <class T> bool is_complex(const AnyTensor<T> &t) {
  return std::holds_alternative<ComplexTensor<T>>(t);
}

enum class ElementwiseOp { add, sub, mul };

/// Elementwise complex arithmetic. Shapes must match exactly.
template <class T>
ComplexTensor<T> complex_elementwise(const ComplexTensor<T> &a,
                                     const ComplexTensor<T> &b,
                                     ElementwiseOp op) {
  require_same_shape(a.shape(), b.shape(), "complex_elementwise");
  ComplexTensor<T> out(a.shape());
  auto ar = a.re(), ai = a.im(), br = b.re(), bi = b.im();
  auto orr = out.re(), oi = out.im();
  for (std::size_t i = 0; i < a.numel(); ++i) {
    switch (op) {
    case ElementwiseOp::add:
      orr[i] = ar[i] + br[i];
      oi[i] = ai[i] + bi[i];
      break;
    case ElementwiseOp::sub:
      orr[i] = ar[i] - br[i];
      oi[i] = ai[i] - bi[i];
      break;
    case ElementwiseOp::mul:
      // (c + jd)(a + jb) = ca - db + j(cb + da)
      orr[i] = ar[i] * br[i] - ai[i] * bi[i];
      oi[i] = ar[i] * bi[i] + ai[i] * br[i];
      break;
    }
  }
  return out;
}

template <class T>
ComplexTensor<T> operator+(const ComplexTensor<T> &a,
                           const ComplexTensor<T> &b) {
  return complex_elementwise(a, b, ElementwiseOp::add);
}
template <class T>
ComplexTensor<T> operator-(const ComplexTensor<T> &a,
                           const ComplexTensor<T> &b) {
  return complex_elementwise(a, b, ElementwiseOp::sub);
}
template <class T>
ComplexTensor<T> operator*(const ComplexTensor<T> &a,
                           const ComplexTensor<T> &b) {
  return complex_elementwise(a, b, ElementwiseOp::mul);
}

template <class T>
ComplexTensor<T> scale(const ComplexTensor<T> &a, std::complex<T> s) {
  ComplexTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i)
    out.set(i, a.at(i) * s);
  return out;
}

template <class T> T frobenius_norm(const ComplexTensor<T> &a) {
  T acc{};
  for (std::size_t i = 0; i < a.numel(); ++i)
    acc += a.re()[i] * a.re()[i] + a.im()[i] * a.im()[i];
  return std::sqrt(acc);
}

template <class T> T frobenius_norm(const RealTensor<T> &a) {
  T acc{};
  for (auto v : a.data())
    acc += v * v;
  return std::sqrt(acc);
}

template <class To, class From>
ComplexTensor<To> cast(const ComplexTensor<From> &t) {
  std::vector<To> re(t.re().begin(), t.re().end());
  std::vector<To> im(t.im().begin(), t.im().end());
  return ComplexTensor<To>(t.shape(), std::move(re), std::move(im));
}

template <class To, class From>
RealTensor<To> cast(const RealTensor<From> &t) {
  return RealTensor<To>(t.shape(),
                        std::vector<To>(t.data().begin(), t.data().end()));
}

} // namespace rfn
