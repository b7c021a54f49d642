#pragma once

// Reverse-mode gradient tape. Every complex value is treated as an
// independent (re, im) pair of real values; gradients are reported as the
// pair (dL/dre, dL/dim).

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rfn/tensor.hpp"

namespace rfn::ad {

template <class T> class Tape;

template <class T> struct Var {
  Tape<T> *tape = nullptr;
  std::size_t id = 0;

  [[nodiscard]] const Shape &shape() const;
  [[nodiscard]] bool is_complex() const;
};

/// Gradient buffers for one backward pass, indexed by node id.
template <class T> class GradBuffers {
public:
  explicit GradBuffers(const Tape<T> &tape);

  /// Real-part (or real) gradient of node `id`, allocated on first use.
  std::span<T> re(std::size_t id) {
    ensure(id);
    return re_[id];
  }
  std::span<T> im(std::size_t id) {
    ensure(id);
    return im_[id];
  }
  [[nodiscard]] std::span<const T> cre(std::size_t id) const { return re_[id]; }
  [[nodiscard]] std::span<const T> cim(std::size_t id) const { return im_[id]; }
  [[nodiscard]] bool has(std::size_t id) const { return !re_[id].empty(); }
  [[nodiscard]] bool wants(std::size_t id) const;

private:
  void ensure(std::size_t id);
  const Tape<T> *tape_;
  std::vector<std::vector<T>> re_;
  std::vector<std::vector<T>> im_;
};

template <class T> struct Node {
  Shape shape;
  bool complex = false;
  bool requires_grad = false;
  bool leaf = false;
  std::vector<T> re;
  std::vector<T> im;
  std::function<void(GradBuffers<T> &)> backward;
};

/// Gradients produced by Tape::backward. Holds one slot per node.
template <class T> class Gradients {
public:
  Gradients(const Tape<T> &tape, GradBuffers<T> buffers)
      : tape_(&tape), buffers_(std::move(buffers)) {}

  /// Gradient with respect to `v`, shaped exactly like `v`. Zero if `v` did
  /// not influence the loss.
  [[nodiscard]] AnyTensor<T> of(Var<T> v) const;
  [[nodiscard]] ComplexTensor<T> complex_of(Var<T> v) const {
    return std::get<ComplexTensor<T>>(of(v));
  }
  [[nodiscard]] RealTensor<T> real_of(Var<T> v) const {
    return std::get<RealTensor<T>>(of(v));
  }

private:
  const Tape<T> *tape_;
  GradBuffers<T> buffers_;
};

/// Single-writer record of primitive operations. Nodes are appended in
/// evaluation order so every node's inputs precede it.
template <class T> class Tape {
public:
  Tape() = default;
  Tape(const Tape &) = delete;
  Tape &operator=(const Tape &) = delete;

  Var<T> leaf(const ComplexTensor<T> &value, bool requires_grad = true) {
    Node<T> n;
    n.shape = value.shape();
    n.complex = true;
    n.requires_grad = requires_grad;
    n.leaf = true;
    n.re.assign(value.re().begin(), value.re().end());
    n.im.assign(value.im().begin(), value.im().end());
    return append(std::move(n));
  }
  Var<T> leaf(const RealTensor<T> &value, bool requires_grad = true) {
    Node<T> n;
    n.shape = value.shape();
    n.complex = false;
    n.requires_grad = requires_grad;
    n.leaf = true;
    n.re.assign(value.data().begin(), value.data().end());
    return append(std::move(n));
  }
  Var<T> leaf(const AnyTensor<T> &value, bool requires_grad = true) {
    return std::visit([&](const auto &v) { return leaf(v, requires_grad); },
                      value);
  }
  template <class Tensor> Var<T> constant(const Tensor &value) {
    return leaf(value, false);
  }

  /// Appends an operation result. `backward` is dropped when no input
  /// requires a gradient.
  Var<T> push(Shape shape, bool complex, std::vector<T> re, std::vector<T> im,
              std::initializer_list<Var<T>> inputs,
              std::function<void(GradBuffers<T> &)> backward) {
    Node<T> n;
    n.shape = std::move(shape);
    n.complex = complex;
    n.re = std::move(re);
    n.im = std::move(im);
    if (n.re.size() != n.shape.numel() ||
        (complex && n.im.size() != n.shape.numel()))
      throw std::logic_error("tape node value does not match its shape");
    for (const auto &in : inputs) {
      check_owned(in);
      n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
    }
    if (n.requires_grad)
      n.backward = std::move(backward);
    return append(std::move(n));
  }

  [[nodiscard]] const Node<T> &node(std::size_t id) const {
    return nodes_.at(id);
  }
  [[nodiscard]] const Node<T> &node(Var<T> v) const {
    check_owned(v);
    return nodes_[v.id];
  }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  [[nodiscard]] ComplexTensor<T> complex_value(Var<T> v) const {
    const auto &n = node(v);
    if (!n.complex)
      throw std::invalid_argument("tape node " + std::to_string(v.id) +
                                  " is real, expected complex");
    return ComplexTensor<T>(n.shape, n.re, n.im);
  }
  [[nodiscard]] RealTensor<T> real_value(Var<T> v) const {
    const auto &n = node(v);
    if (n.complex)
      throw std::invalid_argument("tape node " + std::to_string(v.id) +
                                  " is complex, expected real");
    return RealTensor<T>(n.shape, n.re);
  }
  [[nodiscard]] T scalar(Var<T> v) const {
    const auto &n = node(v);
    if (n.complex || n.re.size() != 1)
      throw std::invalid_argument("tape node is not a real scalar");
    return n.re[0];
  }

  /// Reverse sweep from a real scalar. The tape itself is not modified, so
  /// repeated calls produce identical results.
  [[nodiscard]] Gradients<T> backward(Var<T> loss) const {
    if (loss.tape != this)
      throw std::invalid_argument("backward: loss is not on this tape");
    check_owned(loss);
    const auto &ln = nodes_[loss.id];
    if (ln.complex || ln.shape.numel() != 1)
      throw std::invalid_argument("backward: loss must be a real scalar, got " +
                                  std::string(ln.complex ? "complex " : "") +
                                  ln.shape.str());
    GradBuffers<T> buf(*this);
    if (ln.requires_grad) {
      buf.re(loss.id)[0] = T{1};
      for (std::size_t id = loss.id + 1; id-- > 0;) {
        const auto &n = nodes_[id];
        if (n.backward && buf.has(id))
          n.backward(buf);
      }
    }
    return Gradients<T>(*this, std::move(buf));
  }

  /// Smallest absolute real or imaginary component seen at any cReLU input.
  /// Used by gradient checks to reject points near the activation kink.
  [[nodiscard]] T kink_margin() const { return kink_margin_; }
  void note_kink_distance(T d) {
    if (d < kink_margin_)
      kink_margin_ = d;
  }

  void check_owned(Var<T> v) const {
    if (v.tape != this || v.id >= nodes_.size())
      throw std::invalid_argument("variable does not belong to this tape");
  }

private:
  Var<T> append(Node<T> n) {
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  std::vector<Node<T>> nodes_;
  T kink_margin_ = std::numeric_limits<T>::infinity();
};

template <class T> const Shape &Var<T>::shape() const {
  return tape->node(*this).shape;
}
template <class T> bool Var<T>::is_complex() const {
  return tape->node(*this).complex;
}

template <class T>
GradBuffers<T>::GradBuffers(const Tape<T> &tape)
    : tape_(&tape), re_(tape.size()), im_(tape.size()) {}

template <class T> bool GradBuffers<T>::wants(std::size_t id) const {
  return tape_->node(id).requires_grad;
}

template <class T> void GradBuffers<T>::ensure(std::size_t id) {
  if (!re_[id].empty())
    return;
  const auto &n = tape_->node(id);
  re_[id].assign(n.shape.numel(), T{});
  if (n.complex)
    im_[id].assign(n.shape.numel(), T{});
}

template <class T> AnyTensor<T> Gradients<T>::of(Var<T> v) const {
  const auto &n = tape_->node(v);
  const std::size_t count = n.shape.numel();
  auto plane = [&](std::span<const T> g) {
    return g.empty() ? std::vector<T>(count, T{})
                     : std::vector<T>(g.begin(), g.end());
  };
  if (!n.complex)
    return RealTensor<T>(n.shape, plane(buffers_.cre(v.id)));
  return ComplexTensor<T>(n.shape, plane(buffers_.cre(v.id)),
                          plane(buffers_.cim(v.id)));
}

} // namespace rfn::ad
