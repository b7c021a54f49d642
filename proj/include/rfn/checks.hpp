#pragma once

// Self-check suites behind the `gradcheck` and `fftcheck` commands.

#include <chrono>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "rfn/attention.hpp"
#include "rfn/gradcheck.hpp"
#include "rfn/layers.hpp"
#include "rfn/model.hpp"
#include "rfn/ops.hpp"
#include "rfn/radar.hpp"

namespace rfn::checks {

using D = double;
using VarD = ad::Var<D>;
using TapeD = ad::Tape<D>;

struct GradCase {
  std::string module; // ctensor, cnn, fusion or model
  std::string name;
  // Builds the point to check and its loss. Called again with a new attempt
  // number when the point lies too close to a cReLU kink.
  std::function<std::pair<LossFn<D>, std::vector<AnyTensor<D>>>(
      std::mt19937_64 &)>
      build;
};

struct GradOutcome {
  std::string module, name;
  double max_rel_error = 0;
  std::string worst;
  std::size_t coordinates = 0;
  int attempts = 0;
};

inline ComplexTensor<D> rand_c(Shape s, std::mt19937_64 &rng, D lo = -1,
                               D hi = 1) {
  std::uniform_real_distribution<D> u(lo, hi);
  ComplexTensor<D> t(std::move(s));
  for (auto &v : t.re())
    v = u(rng);
  for (auto &v : t.im())
    v = u(rng);
  return t;
}

inline RealTensor<D> rand_r(Shape s, std::mt19937_64 &rng, D lo = -1,
                            D hi = 1) {
  std::uniform_real_distribution<D> u(lo, hi);
  RealTensor<D> t(std::move(s));
  for (auto &v : t.data())
    v = u(rng);
  return t;
}

/// Random linear functional of a node, so every output coordinate
/// contributes to the checked scalar.
inline VarD project(TapeD &tape, VarD out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  if (out.is_complex()) {
    auto wr = tape.constant(rand_r(out.shape(), rng));
    auto wi = tape.constant(rand_r(out.shape(), rng));
    return ad::sum(ad::add(ad::mul(ad::real_part(out), wr),
                           ad::mul(ad::imag_part(out), wi)));
  }
  return ad::sum(ad::mul(out, tape.constant(rand_r(out.shape(), rng))));
}

/// Toy architecture used by the end-to-end checks.
inline ModelSpec toy_spec(ModelKind kind) {
  ModelSpec s;
  s.kind = kind;
  s.branch.input_h = 4;
  s.branch.input_w = 8;
  s.branch.conv = {ConvSpec{2, 1, 3, 1, 1}, ConvSpec{2, 1, 2, 1, 1},
                   ConvSpec{2, 1, 2, 1, 1}};
  s.branch.pool_h = 1;
  s.branch.pool_w = 2;
  s.attention.embed_dim = 8;
  s.attention.heads = 2;
  s.num_classes = 2;
  return s;
}

using Point = std::vector<AnyTensor<D>>;
using Built = std::pair<LossFn<D>, Point>;

inline std::vector<GradCase> gradient_cases() {
  std::vector<GradCase> cs;
  auto add = [&](std::string module, std::string name,
                 std::function<Built(std::mt19937_64 &)> b) {
    cs.push_back({std::move(module), std::move(name), std::move(b)});
  };
  auto unary = [](std::function<VarD(VarD)> f) {
    return [f](TapeD &t, const std::vector<VarD> &v) {
      return project(t, f(v[0]), 17);
    };
  };
  auto binary = [](std::function<VarD(VarD, VarD)> f) {
    return [f](TapeD &t, const std::vector<VarD> &v) {
      return project(t, f(v[0], v[1]), 17);
    };
  };

  // ctensor primitives
  add("ctensor", "add", [=](auto &r) {
    return Built{binary([](VarD a, VarD b) { return ad::add(a, b); }),
                 {rand_c({2, 3}, r), rand_c({2, 3}, r)}};
  });
  add("ctensor", "sub", [=](auto &r) {
    return Built{binary([](VarD a, VarD b) { return ad::sub(a, b); }),
                 {rand_c({2, 3}, r), rand_c({2, 3}, r)}};
  });
  add("ctensor", "mul", [=](auto &r) {
    return Built{binary([](VarD a, VarD b) { return ad::mul(a, b); }),
                 {rand_c({2, 3}, r), rand_c({2, 3}, r)}};
  });
  add("ctensor", "mul_real", [=](auto &r) {
    return Built{binary([](VarD a, VarD b) { return ad::mul(a, b); }),
                 {rand_r({4}, r), rand_r({4}, r)}};
  });
  add("ctensor", "scale", [=](auto &r) {
    return Built{unary([](VarD a) { return ad::scale(a, D(-1.7)); }),
                 {rand_c({5}, r)}};
  });
  add("ctensor", "abs2", [=](auto &r) {
    return Built{unary([](VarD a) { return ad::abs2(a); }), {rand_c({2, 2}, r)}};
  });
  add("ctensor", "mean", [=](auto &r) {
    return Built{[](TapeD &, const std::vector<VarD> &v) {
                   return ad::mean(ad::abs2(v[0]));
                 },
                 {rand_c({3, 2}, r)}};
  });
  add("ctensor", "matmul", [=](auto &r) {
    return Built{binary([](VarD a, VarD b) { return ad::matmul(a, b); }),
                 {rand_r({3, 4}, r), rand_r({4, 2}, r)}};
  });
  add("ctensor", "bmm_transpose", [=](auto &r) {
    return Built{binary([](VarD a, VarD b) {
                   return ad::bmm(a, ad::transpose_last(b));
                 }),
                 {rand_r({2, 3, 4}, r), rand_r({2, 5, 4}, r)}};
  });
  add("ctensor", "linear_bias", [=](auto &r) {
    return Built{[](TapeD &t, const std::vector<VarD> &v) {
                   return project(t, ad::add_bias(ad::linear(v[0], v[1]), v[2]),
                                  5);
                 },
                 {rand_r({2, 3, 4}, r), rand_r({4, 2}, r), rand_r({2}, r)}};
  });
  add("ctensor", "softmax", [=](auto &r) {
    return Built{unary([](VarD a) { return ad::softmax(a); }),
                 {rand_r({2, 3, 4}, r, -2, 2)}};
  });
  add("ctensor", "concat_heads_tokens", [=](auto &r) {
    return Built{binary([](VarD a, VarD b) {
                   auto c = ad::concat_last(a, b);
                   return ad::mean_tokens(
                       ad::merge_heads(ad::split_heads(c, 2), 2));
                 }),
                 {rand_r({2, 3, 2}, r), rand_r({2, 3, 4}, r)}};
  });
  add("ctensor", "cross_entropy", [=](auto &r) {
    return Built{[](TapeD &, const std::vector<VarD> &v) {
                   static const std::size_t labels[] = {0, 2, 1};
                   return ad::cross_entropy_logits(v[0], labels);
                 },
                 {rand_r({3, 3}, r, -2, 2)}};
  });

  // cnn layers
  add("cnn", "cconv2d", [=](auto &r) {
    return Built{[](TapeD &t, const std::vector<VarD> &v) {
                   return project(t, ad::cconv2d(v[0], v[1], v[2], {1, 2}), 3);
                 },
                 {rand_c({2, 2, 3, 7}, r), rand_c({3, 2, 2, 3}, r),
                  rand_c({3}, r)}};
  });
  add("cnn", "cbatchnorm_train", [=](auto &r) {
    return Built{[](TapeD &t, const std::vector<VarD> &v) {
                   return project(t,
                                  ad::cbatchnorm(v[0], v[1], v[2], v[3], v[4],
                                                 ad::BnMode::train),
                                  3);
                 },
                 {rand_c({3, 2, 2, 3}, r), rand_r({2}, r, 0.5, 1.5),
                  rand_r({2}, r, 0.5, 1.5), rand_r({2}, r), rand_r({2}, r)}};
  });
  add("cnn", "cbatchnorm_eval", [=](auto &r) {
    return Built{[](TapeD &t, const std::vector<VarD> &v) {
                   static const std::vector<D> mr{0.1, -0.2}, vr{0.8, 1.3},
                       mi{-0.3, 0.05}, vi{1.1, 0.6};
                   ad::BnRunning<D> run{mr, vr, mi, vi};
                   return project(t,
                                  ad::cbatchnorm(v[0], v[1], v[2], v[3], v[4],
                                                 ad::BnMode::eval, run),
                                  3);
                 },
                 {rand_c({2, 2, 3}, r), rand_r({2}, r), rand_r({2}, r),
                  rand_r({2}, r), rand_r({2}, r)}};
  });
  add("cnn", "crelu", [=](auto &r) {
    return Built{unary([](VarD a) { return ad::crelu(a); }),
                 {rand_c({4, 5}, r)}};
  });
  add("cnn", "cavgpool2d", [=](auto &r) {
    return Built{unary([](VarD a) { return ad::cavgpool2d(a, 2, 3); }),
                 {rand_c({2, 1, 5, 7}, r)}};
  });
  add("cnn", "cavgpool", [=](auto &r) {
    return Built{unary([](VarD a) { return ad::cavgpool(a, 3); }),
                 {rand_c({2, 2, 8}, r)}};
  });
  add("cnn", "complex_to_real", [=](auto &r) {
    return Built{unary([](VarD a) { return ad::complex_to_real(a); }),
                 {rand_c({2, 3, 4}, r)}};
  });
  add("cnn", "composite_block", [=](auto &r) {
    // conv -> batch norm -> cReLU -> pooling on a 2x2x3 input
    return Built{[](TapeD &t, const std::vector<VarD> &v) {
                   auto y = ad::cconv2d(v[0], v[1], v[2]);
                   y = ad::cbatchnorm(y, v[3], v[4], v[5], v[6],
                                      ad::BnMode::train);
                   y = ad::cavgpool2d(ad::crelu(y), 1, 2);
                   return project(t, y, 9);
                 },
                 {rand_c({2, 1, 2, 3}, r), rand_c({2, 1, 1, 2}, r),
                  rand_c({2}, r), rand_r({2}, r, 0.5, 1.5),
                  rand_r({2}, r, 0.5, 1.5), rand_r({2}, r), rand_r({2}, r)}};
  });

  // fusion
  add("fusion", "scaled_dot_attention", [=](auto &r) {
    return Built{[](TapeD &t, const std::vector<VarD> &v) {
                   return project(t, scaled_dot_attention(v[0], v[1], v[2]), 4);
                 },
                 {rand_r({2, 3, 4}, r), rand_r({2, 5, 4}, r),
                  rand_r({2, 5, 3}, r)}};
  });
  add("fusion", "bidirectional_fuse", [=](auto &r) {
    return Built{[](TapeD &t, const std::vector<VarD> &v) {
                   DirectionVars<D> a{v[2], v[3], v[4]}, b{v[5], v[6], v[7]};
                   return project(t, bidirectional_fuse(v[0], v[1], a, b, 2), 4);
                 },
                 {rand_r({2, 3, 4}, r), rand_r({2, 3, 4}, r),
                  rand_r({4, 4}, r), rand_r({4, 4}, r), rand_r({4, 4}, r),
                  rand_r({4, 4}, r), rand_r({4, 4}, r), rand_r({4, 4}, r)}};
  });
  add("fusion", "classify_loss", [=](auto &r) {
    return Built{[](TapeD &, const std::vector<VarD> &v) {
                   static const std::size_t labels[] = {1, 0};
                   return ad::cross_entropy_logits(classify(v[0], v[1], v[2]),
                                                   labels);
                 },
                 {rand_r({2, 3, 4}, r), rand_r({4, 2}, r), rand_r({2}, r)}};
  });

  // full models at toy size: input 4x8, E=8, H=2, C=2
  for (auto kind : {ModelKind::fusenet, ModelKind::baseline}) {
    add("model", to_string(kind) + "_toy", [kind](auto &r) {
      ModelSpec spec = toy_spec(kind);
      auto m = make_model<D>(spec, r());
      // perturb the deterministic init so biases and BN affine are generic
      for (auto &e : m.params) {
        if (!e.trainable)
          continue;
        if (auto *c = std::get_if<ComplexTensor<D>>(&e.value)) {
          auto n = rand_c(c->shape(), r, -0.5, 0.5);
          *c = *c + n;
        } else {
          auto &t = std::get<RealTensor<D>>(e.value);
          auto n = rand_r(t.shape(), r, -0.3, 0.3);
          for (std::size_t i = 0; i < t.data().size(); ++i)
            t.data()[i] += n.data()[i];
        }
      }
      Point point;
      std::vector<bool> mask;
      for (const auto &e : m.params)
        point.push_back(e.value);
      const std::size_t np = point.size();
      point.push_back(rand_c({3, 1, 4, 8}, r));
      point.push_back(rand_c({3, 1, 4, 8}, r));
      auto shared = std::make_shared<Model<D>>(std::move(m));
      LossFn<D> fn = [shared, np](TapeD &, const std::vector<VarD> &v) {
        std::vector<VarD> vars(v.begin(), v.begin() + np);
        auto tr = model_forward(*shared, vars, v[np], v[np + 1],
                                ad::BnMode::train);
        static const std::size_t labels[] = {0, 1, 1};
        return ad::cross_entropy_logits(tr.logits, labels);
      };
      return Built{fn, std::move(point)};
    });
  }
  return cs;
}

/// Runs one case, resampling the point until every cReLU input sits at least
/// `kink_margin` away from the axes.
inline GradOutcome run_case(const GradCase &c, std::uint64_t seed,
                            double step = 1e-5, double kink_margin = 1e-3,
                            int max_attempts = 50) {
  std::mt19937_64 rng(seed);
  GradOutcome out;
  out.module = c.module;
  out.name = c.name;
  for (int a = 1; a <= max_attempts; ++a) {
    auto [fn, point] = c.build(rng);
    // probe the kink distance first so rejected points cost one forward pass
    {
      TapeD tape;
      std::vector<VarD> leaves;
      for (const auto &p : point)
        leaves.push_back(tape.leaf(p, false));
      (void)fn(tape, leaves);
      if (tape.kink_margin() < kink_margin && a < max_attempts)
        continue;
    }
    auto rep = grad_check<D>(fn, std::move(point), step);
    out.max_rel_error = rep.max_rel_error;
    out.worst = rep.worst;
    out.coordinates = rep.coordinates;
    out.attempts = a;
    return out;
  }
  return out;
}

/// Literal triple-sum DFT, O((XYN)^2).
inline ComplexTensor<D> naive_dft3(const ComplexTensor<D> &s) {
  const std::size_t X = s.shape()[0], Y = s.shape()[1], N = s.shape()[2];
  ComplexTensor<D> out(s.shape());
  auto tw = [](std::size_t n) {
    std::vector<std::complex<D>> w(n);
    for (std::size_t i = 0; i < n; ++i)
      w[i] = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<D>(i) /
                                 static_cast<D>(n));
    return w;
  };
  const auto wx = tw(X), wy = tw(Y), wn = tw(N);
  for (std::size_t l = 0; l < X; ++l)
    for (std::size_t m = 0; m < Y; ++m)
      for (std::size_t k = 0; k < N; ++k) {
        std::complex<D> acc{};
        for (std::size_t x = 0; x < X; ++x)
          for (std::size_t y = 0; y < Y; ++y) {
            const auto wxy = wx[(x * l) % X] * wy[(y * m) % Y];
            for (std::size_t n = 0; n < N; ++n)
              acc += s.at((x * Y + y) * N + n) * wxy * wn[(n * k) % N];
          }
        out.set((l * Y + m) * N + k, acc);
      }
  return out;
}

struct FftCheckResult {
  double max_abs_error = 0;
  double seconds = 0;
};

inline FftCheckResult fft_check(std::size_t X, std::size_t Y, std::size_t N,
                                std::size_t trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  FftCheckResult r;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t t = 0; t < trials; ++t) {
    auto cube = rand_c({X, Y, N}, rng);
    const auto fast = fft3d(cube).data;
    const auto slow = naive_dft3(cube);
    for (std::size_t i = 0; i < cube.numel(); ++i)
      r.max_abs_error = std::max(r.max_abs_error, std::abs(fast.at(i) - slow.at(i)));
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                  .count();
  return r;
}

} // namespace rfn::checks
