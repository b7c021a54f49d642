#pragma once

// Model assembly: the FFT-only baseline and the two-branch fusion network.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rfn/attention.hpp"
#include "rfn/cnn.hpp"
#include "rfn/params.hpp"

namespace rfn {

enum class ModelKind { baseline, fusenet };

inline ModelKind parse_model_kind(const std::string &s) {
  if (s == "baseline")
    return ModelKind::baseline;
  if (s == "fusenet")
    return ModelKind::fusenet;
  throw std::invalid_argument("unknown model kind '" + s +
                              "' (expected baseline or fusenet)");
}

inline std::string to_string(ModelKind k) {
  return k == ModelKind::baseline ? "baseline" : "fusenet";
}

enum class FusionMode {
  cross_attention,
  // FFT branch straight into the baseline head; the IQ branch and attention
  // are removed. Used as an ablation that must match the baseline.
  passthrough,
};

struct AttentionConfig {
  std::size_t embed_dim = 256;
  std::size_t heads = 16;
  FusionMode fusion = FusionMode::cross_attention;

  void validate() const {
    if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0)
      throw std::invalid_argument(
          "attention: embed_dim " + std::to_string(embed_dim) +
          " must be a positive multiple of heads " + std::to_string(heads));
  }
  [[nodiscard]] std::size_t head_dim() const { return embed_dim / heads; }
};

struct ModelSpec {
  ModelKind kind = ModelKind::fusenet;
  BranchConfig branch;
  AttentionConfig attention;
  std::size_t num_classes = 2;
  BatchNormSettings batch_norm;

  /// True when the forward pass is the single FFT branch plus flatten head.
  [[nodiscard]] bool single_branch() const {
    return kind == ModelKind::baseline ||
           attention.fusion == FusionMode::passthrough;
  }
};

inline nlohmann::json model_spec_to_json(const ModelSpec &s) {
  return {{"kind", to_string(s.kind)},
          {"branch", branch_to_json(s.branch)},
          {"attention",
           {{"embed_dim", s.attention.embed_dim},
            {"heads", s.attention.heads},
            {"fusion", s.attention.fusion == FusionMode::passthrough
                           ? "passthrough"
                           : "cross_attention"}}},
          {"num_classes", s.num_classes},
          {"batch_norm",
           {{"epsilon", s.batch_norm.epsilon},
            {"momentum", s.batch_norm.momentum}}}};
}

inline AttentionConfig attention_from_json(const nlohmann::json &j,
                                           AttentionConfig a = {}) {
  a.embed_dim = j.value("embed_dim", a.embed_dim);
  a.heads = j.value("heads", a.heads);
  if (j.contains("fusion")) {
    const auto f = j.at("fusion").get<std::string>();
    if (f == "passthrough")
      a.fusion = FusionMode::passthrough;
    else if (f == "cross_attention")
      a.fusion = FusionMode::cross_attention;
    else
      throw std::invalid_argument("unknown fusion mode '" + f + "'");
  }
  a.validate();
  return a;
}

inline ModelSpec model_spec_from_json(const nlohmann::json &j) {
  ModelSpec s;
  s.kind = parse_model_kind(j.at("kind").get<std::string>());
  s.branch = branch_from_json(j.at("branch"));
  s.attention = attention_from_json(j.at("attention"));
  s.num_classes = j.at("num_classes").get<std::size_t>();
  if (j.contains("batch_norm")) {
    s.batch_norm.epsilon = j["batch_norm"].value("epsilon", 1e-5);
    s.batch_norm.momentum = j["batch_norm"].value("momentum", 0.1);
  }
  return s;
}

struct DirectionIndex {
  std::size_t wq, wk, wv;
};

/// Learnable tensors and BN state of a model, plus where each one lives in
/// the store.
template <class T> struct Model {
  ModelSpec spec;
  ParamStore<T> params;
  std::optional<BranchIndex> iq_branch;
  BranchIndex fft_branch;
  DirectionIndex iq_to_fft{}, fft_to_iq{};
  std::size_t head_weight = 0, head_bias = 0;
};

template <class T>
std::size_t register_linear(ParamStore<T> &store, const std::string &name,
                            std::size_t in, std::size_t out,
                            std::uint64_t seed) {
  auto rng = param_rng(seed, name);
  const T bound = T{1} / std::sqrt(static_cast<T>(in));
  return store.add(name, uniform_real<T>(Shape{in, out}, bound, rng));
}

/// Builds a freshly initialized model. Every tensor's initial value depends
/// only on (seed, tensor name).
template <class T> Model<T> make_model(const ModelSpec &spec, std::uint64_t seed) {
  if (spec.num_classes < 1)
    throw std::invalid_argument("model needs at least one class");
  spec.attention.validate();
  Model<T> m;
  m.spec = spec;
  const std::size_t cf = spec.branch.feature_channels();
  const std::size_t len = spec.branch.feature_length();
  const std::size_t token_dim = 2 * cf;
  const std::size_t E = spec.attention.embed_dim;

  if (spec.single_branch()) {
    m.fft_branch = register_branch(m.params, "fft", spec.branch, seed);
    m.head_weight = register_linear(m.params, "head.weight", len * token_dim,
                                    spec.num_classes, seed);
  } else {
    m.iq_branch = register_branch(m.params, "iq", spec.branch, seed);
    m.fft_branch = register_branch(m.params, "fft", spec.branch, seed);
    auto dir = [&](const std::string &p) {
      return DirectionIndex{
          register_linear(m.params, p + ".wq", token_dim, E, seed),
          register_linear(m.params, p + ".wk", token_dim, E, seed),
          register_linear(m.params, p + ".wv", token_dim, E, seed)};
    };
    m.iq_to_fft = dir("attn.iq_to_fft");
    m.fft_to_iq = dir("attn.fft_to_iq");
    m.head_weight = register_linear(m.params, "head.weight", 2 * E,
                                    spec.num_classes, seed);
  }
  m.head_bias =
      m.params.add("head.bias", RealTensor<T>(Shape{spec.num_classes}));
  return m;
}

/// Intermediate handles of one forward pass.
template <class T> struct ForwardTrace {
  ad::Var<T> logits;
  std::optional<ad::Var<T>> iq_features, fft_features, fused;
};

/// Forward pass on a batch. `iq` and `spectrum` are complex (B, 1, H, W);
/// the baseline ignores `iq`. `vars` must come from bind(tape, model.params).
template <class T>
ForwardTrace<T> model_forward(const Model<T> &m,
                              const std::vector<ad::Var<T>> &vars,
                              ad::Var<T> iq, ad::Var<T> spectrum,
                              ad::BnMode mode,
                              std::vector<BnUpdate<T>> *bn_updates = nullptr) {
  ForwardTrace<T> tr;
  const auto &spec = m.spec;
  auto branch = [&](ad::Var<T> in, const BranchIndex &idx, const char *name) {
    try {
      return extract_features(in, spec.branch, idx, m.params, vars, mode,
                              spec.batch_norm, bn_updates);
    } catch (const std::invalid_argument &e) {
      throw std::invalid_argument(std::string(name) + " branch: " + e.what());
    }
  };
  auto fft_f = branch(spectrum, m.fft_branch, "fft");
  tr.fft_features = fft_f;
  const std::size_t B = spectrum.shape()[0];
  if (spec.single_branch()) {
    auto tokens = ad::complex_to_real(fft_f);
    auto flat = ad::reshape(tokens, Shape{B, tokens.shape().numel() / B});
    tr.logits = ad::add_bias(ad::linear(flat, vars[m.head_weight]),
                             vars[m.head_bias]);
    return tr;
  }
  if (iq.shape() != spectrum.shape())
    throw std::invalid_argument("model_forward: IQ batch " + iq.shape().str() +
                                " and spectrum batch " +
                                spectrum.shape().str() + " differ");
  auto iq_f = branch(iq, *m.iq_branch, "iq");
  tr.iq_features = iq_f;
  auto dirvars = [&](const DirectionIndex &d) {
    return DirectionVars<T>{vars[d.wq], vars[d.wk], vars[d.wv]};
  };
  ad::Var<T> fused;
  try {
    fused = bidirectional_fuse(ad::complex_to_real(iq_f),
                               ad::complex_to_real(fft_f),
                               dirvars(m.iq_to_fft), dirvars(m.fft_to_iq),
                               spec.attention.heads);
  } catch (const std::invalid_argument &e) {
    throw std::invalid_argument(std::string("fusion: ") + e.what());
  }
  tr.fused = fused;
  try {
    tr.logits = classify(fused, vars[m.head_weight], vars[m.head_bias]);
  } catch (const std::invalid_argument &e) {
    throw std::invalid_argument(std::string("head: ") + e.what());
  }
  return tr;
}

/// Stacks per-sample (H, W) matrices into a complex (B, 1, H, W) tensor.
template <class T>
ComplexTensor<T> stack_batch(std::span<const ComplexTensor<T> *const> items) {
  if (items.empty())
    throw std::invalid_argument("stack_batch: empty batch");
  const Shape s = items[0]->shape();
  if (s.rank() != 2)
    throw std::invalid_argument("stack_batch: expected (H, W) items, got " +
                                s.str());
  ComplexTensor<T> out(Shape{items.size(), 1, s[0], s[1]});
  const std::size_t n = s.numel();
  for (std::size_t b = 0; b < items.size(); ++b) {
    if (!(items[b]->shape() == s))
      throw std::invalid_argument("stack_batch: item " + std::to_string(b) +
                                  " has shape " + items[b]->shape().str() +
                                  ", expected " + s.str());
    std::copy(items[b]->re().begin(), items[b]->re().end(),
              out.re().begin() + b * n);
    std::copy(items[b]->im().begin(), items[b]->im().end(),
              out.im().begin() + b * n);
  }
  return out;
}

/// Logits for a batch of prepared inputs, eval-mode batch norm.
template <class T>
RealTensor<T> predict_logits(const Model<T> &m,
                             const ComplexTensor<T> &iq_batch,
                             const ComplexTensor<T> &spectrum_batch) {
  ad::Tape<T> tape;
  std::vector<ad::Var<T>> vars;
  vars.reserve(m.params.size());
  for (const auto &e : m.params)
    vars.push_back(tape.constant(e.value));
  auto tr = model_forward(m, vars, tape.constant(iq_batch),
                          tape.constant(spectrum_batch), ad::BnMode::eval);
  return tape.real_value(tr.logits);
}

} // namespace rfn
