#include <gtest/gtest.h>

#include <random>
#include <set>

#include "oracles.hpp"
#include "rfn/checks.hpp"
#include "rfn/synth.hpp"
#include "rfn/train.hpp"

using namespace rfn;

namespace {

TrainConfig small_config() {
  TrainConfig c;
  c.learning_rate = 1e-2;
  c.batch_size = 8;
  c.epochs = 3;
  c.seed = 4;
  c.branch.conv = {ConvSpec{4, 1, 5, 1, 1}, ConvSpec{8, 1, 3, 1, 2},
                   ConvSpec{8, 1, 3, 1, 1}};
  c.branch.pool_h = 4;
  c.branch.pool_w = 2;
  c.attention.embed_dim = 16;
  c.attention.heads = 4;
  return c;
}

const Dataset<double> &points() {
  static const auto ds =
      render<double>(point_target_scenes(compact_radar(), 2, 10, 0.1, 9));
  return ds;
}

ParamStore<double> one_tensor(std::vector<double> v) {
  ParamStore<double> s;
  s.add("w", RealTensor<double>(Shape{v.size()}, v));
  return s;
}

} // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
  auto s = one_tensor({1.0, -2.0, 0.5});
  AdamState<double> st;
  AdamConfig cfg;
  adam_step<double>(s, {RealTensor<double>(Shape{3}, {0.3, -4.0, 1e-3})}, st,
                    cfg);
  const auto p = s.real(0).data();
  EXPECT_NEAR(p[0], 1.0 - 1e-3, 1e-10);
  EXPECT_NEAR(p[1], -2.0 + 1e-3, 1e-10);
  EXPECT_NEAR(p[2], 0.5 - 1e-3, 1e-8);
}

TEST(Adam, TenStepsMatchScalarRecurrence) {
  std::mt19937_64 rng(61);
  std::normal_distribution<double> n(0, 1);
  auto s = one_tensor({0.7, -0.1});
  AdamConfig cfg{3e-3, 0.85, 0.99, 1e-7};
  oracle::ScalarAdam a{3e-3, 0.85, 0.99, 1e-7}, b{3e-3, 0.85, 0.99, 1e-7};
  double pa = 0.7, pb = -0.1;
  AdamState<double> st;
  for (int t = 0; t < 10; ++t) {
    const double ga = n(rng), gb = n(rng);
    adam_step<double>(s, {RealTensor<double>(Shape{2}, {ga, gb})}, st, cfg);
    pa = a.step(pa, ga);
    pb = b.step(pb, gb);
    EXPECT_NEAR(s.real(0).data()[0], pa, 1e-10);
    EXPECT_NEAR(s.real(0).data()[1], pb, 1e-10);
  }
}

TEST(Adam, ZeroGradientAndFrozenTensorsAreUntouched) {
  ParamStore<double> s;
  s.add("a", RealTensor<double>(Shape{2}, 1.0));
  s.add("frozen", RealTensor<double>(Shape{2}, 5.0), false);
  s.add("z", ComplexTensor<double>(Shape{2}));
  AdamState<double> st;
  std::vector<AnyTensor<double>> g{RealTensor<double>(Shape{2}, 1.0),
                                   RealTensor<double>(Shape{2}, 1.0),
                                   ComplexTensor<double>(Shape{2})};
  adam_step(s, g, st, {});
  const auto before = s.real(0);
  g[0] = RealTensor<double>(Shape{2});
  adam_step(s, g, st, {});
  EXPECT_EQ(s.real(0), before);
  EXPECT_EQ(s.real(1).data()[0], 5.0);
  EXPECT_EQ(s.complex(2), ComplexTensor<double>(Shape{2}));
  EXPECT_EQ(st.step, 2u);
}

TEST(Adam, Errors) {
  auto s = one_tensor({1.0, 2.0});
  AdamState<double> st;
  std::vector<AnyTensor<double>> g{
      RealTensor<double>(Shape{2}, {1.0, std::nan("")})};
  try {
    adam_step(s, g, st, {});
    FAIL();
  } catch (const std::domain_error &e) {
    EXPECT_NE(std::string(e.what()).find("w"), std::string::npos);
  }
  std::vector<AnyTensor<double>> wrong{RealTensor<double>(Shape{3})};
  EXPECT_THROW(adam_step(s, wrong, st, {}), std::invalid_argument);
  AdamConfig bad;
  bad.beta1 = 1.0;
  std::vector<AnyTensor<double>> ok{RealTensor<double>(Shape{2})};
  EXPECT_THROW(adam_step(s, ok, st, bad), std::invalid_argument);
}

TEST(Metrics, MatchCountingOracle) {
  std::mt19937_64 rng(62);
  std::uniform_int_distribution<std::size_t> cls(0, 3);
  std::vector<std::size_t> y(200), p(200);
  for (std::size_t i = 0; i < 200; ++i) {
    y[i] = cls(rng);
    p[i] = cls(rng) == 0 ? (y[i] + 1) % 4 : y[i];
  }
  const auto r = evaluate_predictions(y, p, 4, "test");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < 200; ++i)
    hits += y[i] == p[i];
  EXPECT_DOUBLE_EQ(r.accuracy, static_cast<double>(hits) / 200);
  for (std::size_t c = 0; c < 4; ++c) {
    std::size_t count = 0, ok = 0;
    for (std::size_t i = 0; i < 200; ++i)
      if (y[i] == c) {
        ++count;
        ok += p[i] == c;
      }
    std::size_t row = 0;
    for (auto v : r.confusion[c])
      row += v;
    EXPECT_EQ(row, count);
    EXPECT_DOUBLE_EQ(*r.per_class_accuracy[c],
                     static_cast<double>(ok) / static_cast<double>(count));
  }
}

TEST(Metrics, ConstantPredictorOnBalancedSet) {
  const std::vector<std::size_t> y{0, 1, 0, 1, 0, 1}, p(6, 1);
  const auto r = evaluate_predictions(y, p, 3, "test");
  EXPECT_DOUBLE_EQ(r.accuracy, 0.5);
  EXPECT_DOUBLE_EQ(*r.per_class_accuracy[0], 0.0);
  EXPECT_DOUBLE_EQ(*r.per_class_accuracy[1], 1.0);
  EXPECT_FALSE(r.per_class_accuracy[2].has_value());
  EXPECT_EQ(r.confusion[0][1], 3u);
  const auto j = metrics_to_json(r);
  EXPECT_TRUE(j.at("per_class_accuracy")[2].is_null());
  EXPECT_NE(metrics_table(r).find("50.00"), std::string::npos);
  EXPECT_THROW((void)evaluate_predictions(y, std::vector<std::size_t>(5), 3, "x"),
               std::invalid_argument);
}

TEST(Batches, CoverEverySampleOncePerEpoch) {
  for (std::size_t n : {2, 7, 16, 17, 33}) {
    const auto b = epoch_batches(n, 8, 3, 1);
    std::set<std::size_t> seen;
    for (const auto &batch : b) {
      EXPECT_GE(batch.size(), 2u);
      for (auto i : batch)
        EXPECT_TRUE(seen.insert(i).second);
    }
    EXPECT_EQ(seen.size(), n);
  }
  EXPECT_EQ(epoch_batches(17, 8, 3, 1).back().size(), 9u);
  EXPECT_EQ(epoch_batches(20, 8, 3, 2), epoch_batches(20, 8, 3, 2));
  EXPECT_NE(epoch_batches(20, 8, 3, 2), epoch_batches(20, 8, 3, 3));
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
  auto c = small_config();
  c.manifest = "m.json";
  c.precision = "float";
  const auto j = train_config_to_json(c);
  EXPECT_EQ(train_config_to_json(train_config_from_json(j)), j);
  auto bad = j;
  bad["precision"] = "half";
  EXPECT_THROW((void)train_config_from_json(bad), std::invalid_argument);
  bad = j;
  bad["learning_rate"] = -1;
  EXPECT_THROW((void)train_config_from_json(bad), std::invalid_argument);
  bad = j;
  bad["attention"]["heads"] = 5;
  EXPECT_THROW((void)train_config_from_json(bad), std::invalid_argument);
}

TEST(Train, FreshModelLossIsNearLogC) {
  auto c = small_config();
  c.epochs = 1;
  const auto r = train_model<double>(c, ModelKind::fusenet, points());
  EXPECT_NEAR(r.epochs[0].step_losses[0], std::log(2.0), 0.2 * std::log(2.0));
}

TEST(Train, DeterministicForSeed) {
  const auto c = small_config();
  const auto a = train_model<double>(c, ModelKind::fusenet, points());
  const auto b = train_model<double>(c, ModelKind::fusenet, points());
  EXPECT_EQ(encode_checkpoint(a.model, a.extra),
            encode_checkpoint(b.model, b.extra));
  EXPECT_EQ(a.test, b.test);
  EXPECT_EQ(a.train.loss_curve, b.train.loss_curve);
  auto c2 = c;
  c2.seed = 5;
  const auto d = train_model<double>(c2, ModelKind::fusenet, points());
  EXPECT_NE(encode_checkpoint(a.model, a.extra),
            encode_checkpoint(d.model, d.extra));
}

TEST(Train, LossDecreases) {
  auto c = small_config();
  c.epochs = 8;
  const auto r = train_model<double>(c, ModelKind::baseline, points());
  EXPECT_LT(r.epochs.back().mean_loss, r.epochs.front().mean_loss);
  EXPECT_EQ(r.train.loss_curve.size(), 8u);
}

TEST(Train, SavedWeightsEvaluateIdentically) {
  const auto dir = fs::temp_directory_path() / "rfn_test_train_ck";
  fs::remove_all(dir);
  const auto c = small_config();
  TrainHooks hooks;
  std::size_t calls = 0;
  hooks.on_epoch = [&](const EpochLog &) { ++calls; };
  hooks.out_dir = dir;
  const auto r = train_model<double>(c, ModelKind::fusenet, points(), hooks);
  EXPECT_EQ(calls, c.epochs);
  EXPECT_TRUE(fs::exists(dir / "epoch_001.rfnc"));
  EXPECT_TRUE(fs::exists(dir / "metrics.json"));
  const auto ck = load_checkpoint<double>(dir / "model.rfnc");
  auto m = evaluate_checkpoint(ck, points(), "test");
  m.loss_curve = r.test.loss_curve;
  EXPECT_EQ(m, r.test);
  EXPECT_THROW((void)evaluate_checkpoint(ck, points(), "unseen"),
               std::invalid_argument);
  EXPECT_THROW((void)evaluate_checkpoint(ck, points(), "train"),
               std::invalid_argument);
  fs::remove_all(dir);
}

TEST(Train, ClassCountMismatchIsRejected) {
  const auto c = small_config();
  const auto r = train_model<double>(c, ModelKind::baseline, points());
  const auto three =
      render<double>(point_target_scenes(compact_radar(), 3, 4, 0.1, 1));
  const Checkpoint<double> ck{r.model, r.extra};
  EXPECT_THROW((void)evaluate_checkpoint(ck, three, "test"),
               std::invalid_argument);
}

TEST(TrainStep, NonFiniteParametersRaiseDivergence) {
  const auto c = small_config();
  auto m = make_model<double>(spec_for(c, ModelKind::fusenet, 16, 32, 2), 1);
  std::vector<std::size_t> idx{0, 1, 2, 3};
  const auto set = prepare_set(points(), idx, true);
  m.params.real(m.head_bias).data()[0] = std::numeric_limits<double>::infinity();
  AdamState<double> st;
  const std::size_t rows[] = {0, 1, 2};
  EXPECT_THROW((void)train_step(m, set, rows, st, c.adam()), DivergenceError);
  const std::size_t one[] = {0};
  EXPECT_THROW((void)train_step(m, set, one, st, c.adam()),
               std::invalid_argument);
}

TEST(Train, PassthroughMatchesBaselineExactly) {
  auto c = small_config();
  const auto base = train_model<double>(c, ModelKind::baseline, points());
  c.attention.fusion = FusionMode::passthrough;
  const auto pass = train_model<double>(c, ModelKind::fusenet, points());
  EXPECT_TRUE(base.model.params == pass.model.params);
  EXPECT_EQ(base.test, pass.test);
}

TEST(Train, FloatPrecisionRuns) {
  const auto ds =
      render<float>(point_target_scenes(compact_radar(), 2, 10, 0.1, 9));
  auto c = small_config();
  c.epochs = 2;
  const auto r = train_model<float>(c, ModelKind::fusenet, ds);
  EXPECT_TRUE(std::isfinite(r.epochs.back().mean_loss));
}

TEST(Trend, MedianAndGap) {
  EXPECT_DOUBLE_EQ(median({3, 1, 2}), 2);
  EXPECT_DOUBLE_EQ(median({4, 1, 2, 3}), 2.5);
  EXPECT_THROW((void)median({}), std::invalid_argument);
  TrendReport r;
  r.fusenet_median = 0.5;
  r.baseline_median = 0.45;
  EXPECT_NEAR(r.gap(), 0.05, 1e-15);
  EXPECT_THROW((void)benchmark_trend<double>(small_config(), {1, 2}),
               std::invalid_argument);
}
