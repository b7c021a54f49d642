#pragma once

// Training loop, evaluation metrics and the paired baseline/fusion benchmark.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rfn/adam.hpp"
#include "rfn/checkpoint.hpp"
#include "rfn/io.hpp"
#include "rfn/model.hpp"
#include "rfn/synth.hpp"

namespace rfn {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 16;
  std::size_t epochs = 15;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double split_ratio = 0.8;
  bool normalize = true;
  std::string precision = "double"; // or "float"
  BranchConfig branch;              // input_h/input_w follow the data
  AttentionConfig attention;
  BatchNormSettings batch_norm;
  std::string manifest;

  [[nodiscard]] AdamConfig adam() const {
    return {learning_rate, beta1, beta2, epsilon};
  }

  void validate() const {
    adam().validate();
    if (batch_size == 0 || epochs == 0)
      throw std::invalid_argument("train: batch_size and epochs must be >= 1");
    if (!(split_ratio > 0 && split_ratio < 1))
      throw std::invalid_argument("train: split_ratio must lie in (0, 1)");
    if (precision != "double" && precision != "float")
      throw std::invalid_argument("train: precision must be float or double");
    attention.validate();
  }
};

inline TrainConfig train_config_from_json(const nlohmann::json &j) {
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.split_ratio = j.value("split_ratio", c.split_ratio);
  c.normalize = j.value("normalize", c.normalize);
  c.precision = j.value("precision", c.precision);
  if (j.contains("branch"))
    c.branch = branch_from_json(j.at("branch"), c.branch);
  if (j.contains("attention"))
    c.attention = attention_from_json(j.at("attention"), c.attention);
  if (j.contains("batch_norm")) {
    c.batch_norm.epsilon = j["batch_norm"].value("epsilon", 1e-5);
    c.batch_norm.momentum = j["batch_norm"].value("momentum", 0.1);
  }
  c.manifest = j.value("manifest", std::string{});
  c.validate();
  return c;
}

inline nlohmann::json train_config_to_json(const TrainConfig &c) {
  return {{"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon},
          {"split_ratio", c.split_ratio},
          {"normalize", c.normalize},
          {"precision", c.precision},
          {"branch", branch_to_json(c.branch)},
          {"attention",
           {{"embed_dim", c.attention.embed_dim},
            {"heads", c.attention.heads},
            {"fusion", c.attention.fusion == FusionMode::passthrough
                           ? "passthrough"
                           : "cross_attention"}}},
          {"batch_norm",
           {{"epsilon", c.batch_norm.epsilon},
            {"momentum", c.batch_norm.momentum}}},
          {"manifest", c.manifest}};
}

inline TrainConfig read_train_config(const fs::path &path) {
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("cannot open config " + path.string());
  try {
    return train_config_from_json(nlohmann::json::parse(in));
  } catch (const std::exception &e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

struct MetricsReport {
  std::string split; // "train", "test" or "unseen"
  std::vector<std::string> classes;
  std::size_t samples = 0;
  double accuracy = 0;
  std::vector<std::optional<double>> per_class_accuracy; // empty rows -> none
  std::vector<std::vector<std::size_t>> confusion; // [true][predicted]
  std::vector<double> loss_curve;                  // mean train loss per epoch

  bool operator==(const MetricsReport &) const = default;
};

inline nlohmann::json metrics_to_json(const MetricsReport &r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto &a : r.per_class_accuracy)
    per.push_back(a ? nlohmann::json(*a) : nlohmann::json(nullptr));
  return {{"split", r.split},
          {"classes", r.classes},
          {"samples", r.samples},
          {"accuracy", r.accuracy},
          {"per_class_accuracy", per},
          {"confusion", r.confusion},
          {"loss_curve", r.loss_curve}};
}

inline std::string metrics_table(const MetricsReport &r) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << "split " << r.split << ": " << r.samples << " samples, accuracy "
     << 100.0 * r.accuracy << " %\n";
  std::size_t w = 5;
  for (const auto &c : r.classes)
    w = std::max(w, c.size());
  auto pad = [&](const std::string &s, std::size_t n) {
    return s + std::string(n > s.size() ? n - s.size() : 0, ' ');
  };
  os << pad("class", w) << "  acc %    predicted\n";
  for (std::size_t i = 0; i < r.confusion.size(); ++i) {
    const std::string name =
        i < r.classes.size() ? r.classes[i] : std::to_string(i);
    os << pad(name, w) << "  ";
    if (r.per_class_accuracy[i]) {
      std::ostringstream a;
      a.setf(std::ios::fixed);
      a.precision(2);
      a << 100.0 * *r.per_class_accuracy[i];
      os << pad(a.str(), 7);
    } else {
      os << pad("-", 7);
    }
    for (auto n : r.confusion[i])
      os << "  " << n;
    os << '\n';
  }
  return os.str();
}

/// Accuracy, per-class accuracy and confusion counts of a prediction list.
inline MetricsReport evaluate_predictions(std::span<const std::size_t> labels,
                                          std::span<const std::size_t> predicted,
                                          std::size_t num_classes,
                                          std::string split) {
  if (labels.size() != predicted.size())
    throw std::invalid_argument("evaluate: label and prediction counts differ");
  MetricsReport r;
  r.split = std::move(split);
  r.samples = labels.size();
  r.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes || predicted[i] >= num_classes)
      throw std::invalid_argument("evaluate: class index out of range");
    ++r.confusion[labels[i]][predicted[i]];
    correct += labels[i] == predicted[i];
  }
  r.accuracy = labels.empty() ? 0.0
                              : static_cast<double>(correct) /
                                    static_cast<double>(labels.size());
  for (std::size_t c = 0; c < num_classes; ++c) {
    const std::size_t row = std::accumulate(r.confusion[c].begin(),
                                            r.confusion[c].end(), std::size_t{0});
    if (row == 0)
      r.per_class_accuracy.emplace_back(std::nullopt);
    else
      r.per_class_accuracy.emplace_back(static_cast<double>(r.confusion[c][c]) /
                                        static_cast<double>(row));
  }
  return r;
}

/// Index of the largest logit per row; ties resolve to the lowest index.
template <class T> std::vector<std::size_t> argmax_rows(const RealTensor<T> &l) {
  const std::size_t B = l.shape()[0], C = l.shape()[1];
  std::vector<std::size_t> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    const T *row = l.data().data() + b * C;
    out[b] = static_cast<std::size_t>(std::max_element(row, row + C) - row);
  }
  return out;
}

/// Network-ready inputs for a list of samples.
template <class T> struct PreparedSet {
  std::vector<ComplexTensor<T>> iq;       // (X*Y, N) each
  std::vector<ComplexTensor<T>> spectrum; // (X*Y, N) each
  std::vector<std::size_t> labels;

  [[nodiscard]] std::size_t size() const { return labels.size(); }
};

template <class T>
PreparedSet<T> prepare_set(const Dataset<T> &ds,
                           std::span<const std::size_t> indices,
                           bool normalize) {
  PreparedSet<T> p;
  for (auto i : indices) {
    const auto &s = ds.samples.at(i);
    if (s.spectrum) {
      auto iq = flatten_channels(s.cube.data);
      auto sp = flatten_channels(*s.spectrum);
      if (normalize) {
        iq = normalize_max_abs(std::move(iq));
        sp = normalize_max_abs(std::move(sp));
      }
      p.iq.push_back(std::move(iq));
      p.spectrum.push_back(std::move(sp));
    } else {
      auto in = prepare_inputs(s.cube.data, normalize);
      p.iq.push_back(std::move(in.iq));
      p.spectrum.push_back(std::move(in.spectrum));
    }
    p.labels.push_back(s.label);
  }
  return p;
}

template <class T>
std::pair<ComplexTensor<T>, ComplexTensor<T>>
gather_batch(const PreparedSet<T> &set, std::span<const std::size_t> rows) {
  std::vector<const ComplexTensor<T> *> iq, sp;
  for (auto r : rows) {
    iq.push_back(&set.iq[r]);
    sp.push_back(&set.spectrum[r]);
  }
  return {stack_batch<T>(iq), stack_batch<T>(sp)};
}

template <class T>
std::vector<std::size_t> predict(const Model<T> &m, const PreparedSet<T> &set,
                                 std::size_t batch = 32) {
  std::vector<std::size_t> out;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < set.size(); start += batch) {
    rows.clear();
    for (std::size_t i = start; i < std::min(set.size(), start + batch); ++i)
      rows.push_back(i);
    auto [iq, sp] = gather_batch(set, rows);
    auto pred = argmax_rows(predict_logits(m, iq, sp));
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

template <class T>
MetricsReport evaluate(const Model<T> &m, const PreparedSet<T> &set,
                       std::string split,
                       const std::vector<std::string> &classes = {}) {
  if (set.size() == 0)
    throw std::invalid_argument("evaluate: split '" + split + "' is empty");
  auto r = evaluate_predictions(set.labels, predict(m, set),
                                m.spec.num_classes, std::move(split));
  r.classes = classes;
  return r;
}

struct EpochLog {
  std::size_t epoch = 0; // 1-based
  double mean_loss = 0;
  double train_accuracy = 0;
  std::optional<double> test_accuracy;
  std::vector<double> step_losses;
};

class DivergenceError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

template <class T> struct TrainResult {
  Model<T> model;
  DatasetSplit split;
  std::vector<EpochLog> epochs;
  MetricsReport train, test;
  std::optional<MetricsReport> unseen;
  nlohmann::json extra; // stored alongside the weights
};

/// Batches of one epoch. A trailing batch of a single sample is folded into
/// the previous batch because training-mode batch norm needs two samples.
inline std::vector<std::vector<std::size_t>>
epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
              std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(seed, epoch));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < n; s += batch_size)
    out.emplace_back(order.begin() + s,
                     order.begin() + std::min(n, s + batch_size));
  if (out.size() > 1 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back()[0]);
    out.pop_back();
  }
  return out;
}

struct TrainHooks {
  std::function<void(const EpochLog &)> on_epoch;
  std::optional<fs::path> out_dir; // per-epoch checkpoints and metrics
};

/// One optimization step on the given rows; returns the batch loss.
template <class T>
T train_step(Model<T> &m, const PreparedSet<T> &set,
             std::span<const std::size_t> rows, AdamState<T> &state,
             const AdamConfig &adam) {
  if (rows.size() < 2)
    throw std::invalid_argument("train_step: batch norm needs >= 2 samples");
  auto [iq, sp] = gather_batch(set, rows);
  std::vector<std::size_t> labels;
  for (auto r : rows)
    labels.push_back(set.labels[r]);
  ad::Tape<T> tape;
  auto vars = bind(tape, m.params);
  std::vector<BnUpdate<T>> updates;
  auto tr = model_forward(m, vars, tape.constant(iq), tape.constant(sp),
                          ad::BnMode::train, &updates);
  for (T v : tape.real_value(tr.logits).data())
    if (!std::isfinite(v))
      throw DivergenceError("training diverged: non-finite logits");
  auto loss = ad::cross_entropy_logits(tr.logits, labels);
  const T value = tape.scalar(loss);
  if (!std::isfinite(value))
    throw DivergenceError("training diverged: loss is " +
                          std::to_string(value));
  auto grads = tape.backward(loss);
  std::vector<AnyTensor<T>> g;
  g.reserve(vars.size());
  for (auto &v : vars)
    g.push_back(grads.of(v));
  adam_step(m.params, g, state, adam);
  apply_bn_updates(m.params, updates, m.spec.batch_norm.momentum);
  return value;
}

inline ModelSpec spec_for(const TrainConfig &cfg, ModelKind kind,
                          std::size_t input_h, std::size_t input_w,
                          std::size_t num_classes) {
  ModelSpec s;
  s.kind = kind;
  s.branch = cfg.branch;
  s.branch.input_h = input_h;
  s.branch.input_w = input_w;
  s.branch.validate();
  s.attention = cfg.attention;
  s.num_classes = num_classes;
  s.batch_norm = cfg.batch_norm;
  return s;
}

/// Weights exactly as a checkpoint stores them.
template <class T> Model<T> round_trip(const Model<T> &m) {
  return decode_checkpoint<T>(encode_checkpoint(m, nlohmann::json::object()))
      .model;
}

/// Full protocol: seeded stratified split, per-epoch shuffled mini-batches,
/// Adam on the mean cross-entropy, final-epoch weights. Final metrics are
/// computed on the checkpointed (float32) weights so a saved model evaluates
/// identically.
template <class T>
TrainResult<T> train_model(const TrainConfig &cfg, ModelKind kind,
                           const Dataset<T> &ds, const TrainHooks &hooks = {}) {
  cfg.validate();
  if (ds.size() == 0)
    throw std::invalid_argument("train: dataset is empty");
  TrainResult<T> res;
  res.split = split_dataset(ds, cfg.split_ratio, cfg.seed);
  if (res.split.train.size() < 2)
    throw std::invalid_argument("train: need at least 2 training samples");
  const auto train_set = prepare_set(ds, res.split.train, cfg.normalize);
  const auto test_set = prepare_set(ds, res.split.test, cfg.normalize);
  const auto unseen_set = prepare_set(ds, res.split.unseen, cfg.normalize);
  const Shape in = train_set.iq[0].shape();
  res.model = make_model<T>(spec_for(cfg, kind, in[0], in[1], ds.num_classes()),
                            cfg.seed);
  res.extra = {{"classes", ds.classes},
               {"normalize", cfg.normalize},
               {"split_ratio", cfg.split_ratio},
               {"seed", cfg.seed},
               {"precision", cfg.precision}};
  if (hooks.out_dir)
    fs::create_directories(*hooks.out_dir);

  AdamState<T> state;
  const AdamConfig adam = cfg.adam();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch;
    for (const auto &rows :
         epoch_batches(train_set.size(), cfg.batch_size, cfg.seed, epoch)) {
      log.step_losses.push_back(static_cast<double>(
          train_step<T>(res.model, train_set, rows, state, adam)));
    }
    log.mean_loss =
        std::accumulate(log.step_losses.begin(), log.step_losses.end(), 0.0) /
        static_cast<double>(log.step_losses.size());
    log.train_accuracy = evaluate(res.model, train_set, "train").accuracy;
    if (test_set.size() > 0)
      log.test_accuracy = evaluate(res.model, test_set, "test").accuracy;
    if (hooks.out_dir) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03zu.rfnc", epoch);
      save_checkpoint(*hooks.out_dir / name, res.model, res.extra);
    }
    res.epochs.push_back(log);
    if (hooks.on_epoch)
      hooks.on_epoch(log);
  }

  res.model = round_trip(res.model);
  std::vector<double> curve;
  for (const auto &e : res.epochs)
    curve.push_back(e.mean_loss);
  res.train = evaluate(res.model, train_set, "train", ds.classes);
  res.train.loss_curve = curve;
  if (test_set.size() > 0) {
    res.test = evaluate(res.model, test_set, "test", ds.classes);
    res.test.loss_curve = curve;
  }
  if (unseen_set.size() > 0) {
    res.unseen = evaluate(res.model, unseen_set, "unseen", ds.classes);
    res.unseen->loss_curve = curve;
  }
  if (hooks.out_dir) {
    save_checkpoint(*hooks.out_dir / "model.rfnc", res.model, res.extra);
    nlohmann::json metrics = {{"train", metrics_to_json(res.train)}};
    if (test_set.size() > 0)
      metrics["test"] = metrics_to_json(res.test);
    if (res.unseen)
      metrics["unseen"] = metrics_to_json(*res.unseen);
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto &e : res.epochs)
      epochs.push_back({{"epoch", e.epoch},
                        {"mean_loss", e.mean_loss},
                        {"train_accuracy", e.train_accuracy},
                        {"test_accuracy", e.test_accuracy
                                              ? nlohmann::json(*e.test_accuracy)
                                              : nlohmann::json(nullptr)}});
    metrics["epochs"] = epochs;
    std::ofstream(*hooks.out_dir / "metrics.json") << metrics.dump(2) << '\n';
  }
  return res;
}

/// Evaluates stored weights on the test or unseen split of a dataset, using
/// the split settings recorded with the weights.
template <class T>
MetricsReport evaluate_checkpoint(const Checkpoint<T> &ck, const Dataset<T> &ds,
                                  const std::string &which) {
  if (ck.model.spec.num_classes != ds.num_classes())
    throw std::invalid_argument(
        "weights have " + std::to_string(ck.model.spec.num_classes) +
        " classes, manifest has " + std::to_string(ds.num_classes()));
  const double ratio = ck.extra.value("split_ratio", 0.8);
  const std::uint64_t seed = ck.extra.value("seed", std::uint64_t{0});
  const bool normalize = ck.extra.value("normalize", true);
  const auto split = split_dataset(ds, ratio, seed);
  std::vector<std::size_t> idx;
  if (which == "test")
    idx = split.test;
  else if (which == "unseen")
    idx = split.unseen;
  else
    throw std::invalid_argument("unknown split '" + which +
                                "' (expected test or unseen)");
  if (idx.empty())
    throw std::invalid_argument("split '" + which + "' has no samples");
  return evaluate(ck.model, prepare_set(ds, idx, normalize), which,
                  ds.classes);
}

struct TrendReport {
  std::vector<std::uint64_t> seeds;
  std::vector<double> baseline, fusenet; // accuracy on the unseen split
  double baseline_median = 0, fusenet_median = 0;
  double noise_bound = 0.02; // self-comparison tolerance on the medians

  [[nodiscard]] double gap() const { return fusenet_median - baseline_median; }
};

inline double median(std::vector<double> v) {
  if (v.empty())
    throw std::invalid_argument("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline nlohmann::json trend_to_json(const TrendReport &r) {
  return {{"seeds", r.seeds},
          {"baseline", r.baseline},
          {"fusenet", r.fusenet},
          {"baseline_median", r.baseline_median},
          {"fusenet_median", r.fusenet_median},
          {"noise_bound", r.noise_bound}};
}

/// Trains both models per seed on a freshly generated distance-shift set and
/// scores them on the unseen distances. `second` overrides the fusion model
/// (e.g. the passthrough ablation for a self-comparison).
template <class T>
TrendReport benchmark_trend(const TrainConfig &cfg,
                            const std::vector<std::uint64_t> &seeds,
                            const RadarConfig &radar = compact_radar(),
                            const DistanceShiftOptions &opt = {},
                            std::optional<TrainConfig> second = std::nullopt) {
  if (seeds.size() < 3)
    throw std::invalid_argument("benchmark_trend: need at least 3 seeds");
  TrendReport rep;
  rep.seeds = seeds;
  for (auto seed : seeds) {
    const auto ds = render<T>(distance_shift_scenes(radar, opt, seed));
    TrainConfig a = cfg;
    a.seed = seed;
    TrainConfig b = second.value_or(cfg);
    b.seed = seed;
    rep.baseline.push_back(
        train_model<T>(a, ModelKind::baseline, ds).unseen->accuracy);
    rep.fusenet.push_back(
        train_model<T>(b, ModelKind::fusenet, ds).unseen->accuracy);
  }
  rep.baseline_median = median(rep.baseline);
  rep.fusenet_median = median(rep.fusenet);
  return rep;
}

} // namespace rfn
