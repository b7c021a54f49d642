#pragma once

// Single-branch complex CNN: three conv -> split BN -> cReLU blocks followed
// by complex average pooling.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rfn/layers.hpp"
#include "rfn/params.hpp"

namespace rfn {

struct ConvSpec {
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1, kernel_w = 1;
  std::size_t stride_h = 1, stride_w = 1;
};

struct StageShape {
  std::size_t channels, height, width;
};

/// Branch hyperparameters. The (X*Y, N) input matrix enters as one channel
/// of height X*Y.
struct BranchConfig {
  std::size_t input_h = 400;
  std::size_t input_w = 100;
  std::array<ConvSpec, 3> conv{ConvSpec{16, 1, 7, 1, 2},
                               ConvSpec{32, 1, 5, 1, 2},
                               ConvSpec{64, 1, 3, 1, 1}};
  std::size_t pool_h = 40;
  std::size_t pool_w = 2;

  /// Shapes after each conv block and after pooling (4 entries).
  [[nodiscard]] std::vector<StageShape> propagate() const {
    std::vector<StageShape> out;
    StageShape s{1, input_h, input_w};
    for (std::size_t i = 0; i < conv.size(); ++i) {
      const auto &c = conv[i];
      if (c.out_channels == 0 || c.kernel_h == 0 || c.kernel_w == 0 ||
          c.stride_h == 0 || c.stride_w == 0)
        throw std::invalid_argument("conv" + std::to_string(i + 1) +
                                    ": extents and strides must be >= 1");
      if (c.kernel_h > s.height || c.kernel_w > s.width)
        throw std::invalid_argument(
            "conv" + std::to_string(i + 1) + ": kernel " +
            std::to_string(c.kernel_h) + "x" + std::to_string(c.kernel_w) +
            " exceeds input " + std::to_string(s.height) + "x" +
            std::to_string(s.width));
      s = {c.out_channels, (s.height - c.kernel_h) / c.stride_h + 1,
           (s.width - c.kernel_w) / c.stride_w + 1};
      out.push_back(s);
    }
    if (pool_h == 0 || pool_w == 0)
      throw std::invalid_argument("pooling window must be >= 1");
    if (pool_h > s.height || pool_w > s.width)
      throw std::invalid_argument("pooling window exceeds conv3 output");
    out.push_back({s.channels, s.height / pool_h, s.width / pool_w});
    return out;
  }

  void validate() const { (void)propagate(); }

  [[nodiscard]] std::size_t feature_channels() const {
    return conv.back().out_channels;
  }
  [[nodiscard]] std::size_t feature_length() const {
    const auto p = propagate().back();
    return p.height * p.width;
  }
};

inline nlohmann::json branch_to_json(const BranchConfig &b) {
  nlohmann::json convs = nlohmann::json::array();
  for (const auto &c : b.conv)
    convs.push_back({{"out_channels", c.out_channels},
                     {"kernel", {c.kernel_h, c.kernel_w}},
                     {"stride", {c.stride_h, c.stride_w}}});
  return {{"input", {b.input_h, b.input_w}},
          {"conv", convs},
          {"pool", {b.pool_h, b.pool_w}}};
}

inline BranchConfig branch_from_json(const nlohmann::json &j,
                                     BranchConfig base = {}) {
  if (j.contains("input")) {
    auto in = j.at("input").get<std::vector<std::size_t>>();
    if (in.size() != 2)
      throw std::invalid_argument("branch.input must be [height, width]");
    base.input_h = in[0];
    base.input_w = in[1];
  }
  if (j.contains("conv")) {
    const auto &arr = j.at("conv");
    if (arr.size() != 3)
      throw std::invalid_argument("branch.conv must list exactly 3 layers");
    for (std::size_t i = 0; i < 3; ++i) {
      const auto &e = arr[i];
      ConvSpec c;
      c.out_channels = e.at("out_channels").get<std::size_t>();
      auto k = e.at("kernel").get<std::vector<std::size_t>>();
      auto s = e.value("stride", std::vector<std::size_t>{1, 1});
      if (k.size() != 2 || s.size() != 2)
        throw std::invalid_argument("kernel and stride must be [h, w]");
      c.kernel_h = k[0];
      c.kernel_w = k[1];
      c.stride_h = s[0];
      c.stride_w = s[1];
      base.conv[i] = c;
    }
  }
  if (j.contains("pool")) {
    auto p = j.at("pool").get<std::vector<std::size_t>>();
    if (p.size() != 2)
      throw std::invalid_argument("branch.pool must be [rows, cols]");
    base.pool_h = p[0];
    base.pool_w = p[1];
  }
  base.validate();
  return base;
}

/// Indices of one branch's tensors inside a ParamStore.
struct BranchIndex {
  struct Conv {
    std::size_t kernel, bias;
  };
  struct Norm {
    std::size_t gamma_re, gamma_im, beta_re, beta_im;
    std::size_t mean_re, var_re, mean_im, var_im;
  };
  std::array<Conv, 3> conv{};
  std::array<Norm, 3> norm{};
};

/// Registers a branch under `prefix` and initializes it: kernel parts
/// uniform in +-1/sqrt(2 fan_in), zero bias, unit gamma, zero beta, running
/// mean 0 and variance 1.
template <class T>
BranchIndex register_branch(ParamStore<T> &store, const std::string &prefix,
                            const BranchConfig &cfg, std::uint64_t seed) {
  cfg.validate();
  BranchIndex idx;
  std::size_t in_ch = 1;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto &c = cfg.conv[i];
    const std::string p = prefix + ".conv" + std::to_string(i + 1);
    const std::size_t fan_in = in_ch * c.kernel_h * c.kernel_w;
    const T bound = T{1} / std::sqrt(T(2) * static_cast<T>(fan_in));
    auto rng = param_rng(seed, p + ".kernel");
    idx.conv[i].kernel = store.add(
        p + ".kernel",
        uniform_complex<T>(Shape{c.out_channels, in_ch, c.kernel_h, c.kernel_w},
                           bound, rng));
    idx.conv[i].bias =
        store.add(p + ".bias", ComplexTensor<T>(Shape{c.out_channels}));
    const std::string b = prefix + ".bn" + std::to_string(i + 1);
    const Shape ch{c.out_channels};
    auto &n = idx.norm[i];
    n.gamma_re = store.add(b + ".gamma_re", RealTensor<T>(ch, T{1}));
    n.gamma_im = store.add(b + ".gamma_im", RealTensor<T>(ch, T{1}));
    n.beta_re = store.add(b + ".beta_re", RealTensor<T>(ch));
    n.beta_im = store.add(b + ".beta_im", RealTensor<T>(ch));
    n.mean_re = store.add(b + ".running_mean_re", RealTensor<T>(ch), false);
    n.var_re = store.add(b + ".running_var_re", RealTensor<T>(ch, T{1}), false);
    n.mean_im = store.add(b + ".running_mean_im", RealTensor<T>(ch), false);
    n.var_im = store.add(b + ".running_var_im", RealTensor<T>(ch, T{1}), false);
    in_ch = c.out_channels;
  }
  return idx;
}

/// Batch statistics captured during a training-mode forward, keyed by the
/// store index of the running-mean-re entry of each batch-norm layer.
template <class T> struct BnUpdate {
  BranchIndex::Norm layer;
  ad::BnBatchStats<T> stats;
};

struct BatchNormSettings {
  double epsilon = 1e-5;
  double momentum = 0.1;
};

/// Folds batch statistics into the running estimates:
/// running = (1 - momentum) * running + momentum * batch.
template <class T>
void apply_bn_updates(ParamStore<T> &store,
                      const std::vector<BnUpdate<T>> &updates,
                      double momentum) {
  const T m = static_cast<T>(momentum);
  for (const auto &u : updates) {
    auto blend = [&](std::size_t idx, const std::vector<T> &batch) {
      auto data = store.real(idx).data();
      for (std::size_t c = 0; c < data.size(); ++c)
        data[c] = (T{1} - m) * data[c] + m * batch[c];
    };
    blend(u.layer.mean_re, u.stats.mean_re);
    blend(u.layer.var_re, u.stats.var_re);
    blend(u.layer.mean_im, u.stats.mean_im);
    blend(u.layer.var_im, u.stats.var_im);
  }
}

/// Runs one branch on a complex (B, 1, H, W) batch and returns its features
/// as (B, C_f, L), L = pooled height * pooled width.
template <class T>
ad::Var<T> extract_features(ad::Var<T> input, const BranchConfig &cfg,
                            const BranchIndex &idx, const ParamStore<T> &store,
                            const std::vector<ad::Var<T>> &vars,
                            ad::BnMode mode, const BatchNormSettings &bn,
                            std::vector<BnUpdate<T>> *updates = nullptr) {
  const Shape &s = input.shape();
  if (s.rank() != 4 || s[1] != 1 || s[2] != cfg.input_h ||
      s[3] != cfg.input_w)
    throw std::invalid_argument(
        "extract_features: input " + s.str() + " does not match (B, 1, " +
        std::to_string(cfg.input_h) + ", " + std::to_string(cfg.input_w) + ")");
  ad::Var<T> x = input;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string stage = "block " + std::to_string(i + 1);
    try {
      const auto &c = cfg.conv[i];
      x = ad::cconv2d(x, vars[idx.conv[i].kernel], vars[idx.conv[i].bias],
                      ad::Stride2{c.stride_h, c.stride_w});
      const auto &n = idx.norm[i];
      ad::BnRunning<T> running{store.real(n.mean_re).data(),
                               store.real(n.var_re).data(),
                               store.real(n.mean_im).data(),
                               store.real(n.var_im).data()};
      ad::BnBatchStats<T> stats;
      x = ad::cbatchnorm(x, vars[n.gamma_re], vars[n.gamma_im],
                         vars[n.beta_re], vars[n.beta_im], mode, running,
                         static_cast<T>(bn.epsilon),
                         mode == ad::BnMode::train ? &stats : nullptr);
      if (updates && mode == ad::BnMode::train)
        updates->push_back({n, std::move(stats)});
      x = ad::crelu(x);
    } catch (const std::invalid_argument &e) {
      throw std::invalid_argument("extract_features " + stage + ": " +
                                  e.what());
    }
  }
  try {
    x = ad::cavgpool2d(x, cfg.pool_h, cfg.pool_w);
  } catch (const std::invalid_argument &e) {
    throw std::invalid_argument(std::string("extract_features pooling: ") +
                                e.what());
  }
  const Shape &p = x.shape();
  return ad::reshape(x, Shape{p[0], p[1], p[2] * p[3]});
}

// Value-level layer types used outside a training step.

template <class T> struct ComplexConvLayer {
  ComplexTensor<T> kernels; // (out, in, kh, kw)
  ComplexTensor<T> bias;    // (out)
  ad::Stride2 stride{};
};

/// Convolution of a single (C_in, H, W) input.
template <class T>
ComplexTensor<T> cconv2d(const ComplexTensor<T> &input,
                         const ComplexConvLayer<T> &layer) {
  const Shape &s = input.shape();
  if (s.rank() != 3)
    throw std::invalid_argument("cconv2d: expected (C_in, H, W), got " +
                                s.str());
  ad::Tape<T> tape;
  auto x = tape.constant(input.reshaped(Shape{1, s[0], s[1], s[2]}));
  auto y = ad::cconv2d(x, tape.constant(layer.kernels),
                       tape.constant(layer.bias), layer.stride);
  const Shape &o = y.shape();
  return tape.complex_value(y).reshaped(Shape{o[1], o[2], o[3]});
}

template <class T> struct ComplexBatchNormLayer {
  std::vector<T> gamma_re, gamma_im, beta_re, beta_im;
  std::vector<T> running_mean_re, running_var_re, running_mean_im,
      running_var_im;
  T epsilon = T(1e-5);
  T momentum = T(0.1);

  static ComplexBatchNormLayer identity(std::size_t channels) {
    ComplexBatchNormLayer l;
    l.gamma_re.assign(channels, T{1});
    l.gamma_im.assign(channels, T{1});
    l.beta_re.assign(channels, T{0});
    l.beta_im.assign(channels, T{0});
    l.running_mean_re.assign(channels, T{0});
    l.running_var_re.assign(channels, T{1});
    l.running_mean_im.assign(channels, T{0});
    l.running_var_im.assign(channels, T{1});
    return l;
  }
};

/// Split batch norm of a (B, C, ...) batch. Train mode also updates the
/// layer's running statistics.
template <class T>
ComplexTensor<T> cbatchnorm(const ComplexTensor<T> &batch,
                            ComplexBatchNormLayer<T> &layer, ad::BnMode mode) {
  if (!(layer.epsilon > T{0}))
    throw std::invalid_argument("cbatchnorm: epsilon must be positive");
  const std::size_t C = layer.gamma_re.size();
  auto vec = [&](const std::vector<T> &v) {
    return RealTensor<T>(Shape{C}, v);
  };
  ad::Tape<T> tape;
  ad::BnBatchStats<T> stats;
  auto y = ad::cbatchnorm(
      tape.constant(batch), tape.constant(vec(layer.gamma_re)),
      tape.constant(vec(layer.gamma_im)), tape.constant(vec(layer.beta_re)),
      tape.constant(vec(layer.beta_im)), mode,
      ad::BnRunning<T>{layer.running_mean_re, layer.running_var_re,
                       layer.running_mean_im, layer.running_var_im},
      layer.epsilon, &stats);
  if (mode == ad::BnMode::train) {
    auto blend = [&](std::vector<T> &run, const std::vector<T> &b) {
      for (std::size_t c = 0; c < run.size(); ++c)
        run[c] = (T{1} - layer.momentum) * run[c] + layer.momentum * b[c];
    };
    blend(layer.running_mean_re, stats.mean_re);
    blend(layer.running_var_re, stats.var_re);
    blend(layer.running_mean_im, stats.mean_im);
    blend(layer.running_var_im, stats.var_im);
  }
  return tape.complex_value(y);
}

template <class T> ComplexTensor<T> crelu(const ComplexTensor<T> &z) {
  ad::Tape<T> tape;
  return tape.complex_value(ad::crelu(tape.constant(z)));
}

/// Window means along the last axis of a (C, L) tensor.
template <class T>
ComplexTensor<T> cavgpool(const ComplexTensor<T> &x, std::size_t window) {
  ad::Tape<T> tape;
  return tape.complex_value(ad::cavgpool(tape.constant(x), window));
}

} // namespace rfn
