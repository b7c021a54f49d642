#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "rfn/attention.hpp"
#include "rfn/cnn.hpp"

using namespace rfn;

namespace {

double max_diff(const ComplexTensor<double> &a, const ComplexTensor<double> &b) {
  EXPECT_EQ(a.shape(), b.shape());
  double e = 0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    e = std::max(e, std::abs(a.at(i) - b.at(i)));
  return e;
}

} // namespace

TEST(CConv2d, MatchesDirectSum) {
  std::mt19937_64 rng(41);
  std::uniform_int_distribution<std::size_t> d(1, 3);
  for (int t = 0; t < 30; ++t) {
    const std::size_t C = d(rng), O = d(rng), kh = d(rng), kw = d(rng);
    const std::size_t sh = d(rng), sw = d(rng);
    const std::size_t H = kh + d(rng) * 2, W = kw + d(rng) * 3;
    ComplexConvLayer<double> layer{
        oracle::random_complex(Shape{O, C, kh, kw}, rng),
        oracle::random_complex(Shape{O}, rng), {sh, sw}};
    auto x = oracle::random_complex(Shape{C, H, W}, rng);
    const auto got = cconv2d(x, layer);
    auto want = oracle::conv2d(x.reshaped(Shape{1, C, H, W}), layer.kernels,
                               layer.bias, sh, sw);
    const auto &ws = want.shape();
    EXPECT_LE(max_diff(got, want.reshaped(Shape{ws[1], ws[2], ws[3]})), 1e-12);
  }
}

TEST(CConv2d, Errors) {
  ad::Tape<double> t;
  auto x = t.constant(ComplexTensor<double>(Shape{1, 2, 4, 4}));
  auto k = t.constant(ComplexTensor<double>(Shape{3, 1, 2, 2}));
  auto b = t.constant(ComplexTensor<double>(Shape{3}));
  EXPECT_THROW((void)ad::cconv2d(x, k, b), std::invalid_argument);
  auto k5 = t.constant(ComplexTensor<double>(Shape{3, 2, 5, 1}));
  EXPECT_THROW((void)ad::cconv2d(x, k5, b), std::invalid_argument);
  auto k2 = t.constant(ComplexTensor<double>(Shape{3, 2, 2, 2}));
  EXPECT_THROW((void)ad::cconv2d(x, k2, b, ad::Stride2{0, 1}),
               std::invalid_argument);
}

TEST(CBatchNorm, TrainModeMatchesOracleAndUpdatesRunningStats) {
  std::mt19937_64 rng(42);
  for (int t = 0; t < 20; ++t) {
    const std::size_t C = 3;
    auto x = oracle::random_complex(Shape{4, C, 2, 5}, rng, -2, 3);
    auto layer = ComplexBatchNormLayer<double>::identity(C);
    std::uniform_real_distribution<double> u(0.5, 1.5);
    for (std::size_t c = 0; c < C; ++c) {
      layer.gamma_re[c] = u(rng);
      layer.gamma_im[c] = u(rng);
      layer.beta_re[c] = u(rng) - 1;
      layer.beta_im[c] = u(rng) - 1;
    }
    const auto before = layer;
    const auto y = cbatchnorm(x, layer, ad::BnMode::train);
    const auto want = oracle::batchnorm_train(x, before.gamma_re, before.gamma_im,
                                              before.beta_re, before.beta_im,
                                              1e-5);
    EXPECT_LE(max_diff(y, want.y), 1e-12);
    for (std::size_t c = 0; c < C; ++c) {
      EXPECT_NEAR(layer.running_mean_re[c], 0.1 * want.mean_re[c], 1e-14);
      EXPECT_NEAR(layer.running_var_re[c], 0.9 + 0.1 * want.var_re[c], 1e-14);
      EXPECT_NEAR(layer.running_mean_im[c], 0.1 * want.mean_im[c], 1e-14);
      EXPECT_NEAR(layer.running_var_im[c], 0.9 + 0.1 * want.var_im[c], 1e-14);
    }
  }
}

TEST(CBatchNorm, TrainOutputHasZeroMeanUnitVariance) {
  std::mt19937_64 rng(43);
  auto x = oracle::random_complex(Shape{8, 2, 16}, rng, 3, 9);
  auto layer = ComplexBatchNormLayer<double>::identity(2);
  const auto y = cbatchnorm(x, layer, ad::BnMode::train);
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0, v = 0;
    for (std::size_t b = 0; b < 8; ++b)
      for (std::size_t k = 0; k < 16; ++k)
        m += y.re()[(b * 2 + c) * 16 + k];
    m /= 128;
    for (std::size_t b = 0; b < 8; ++b)
      for (std::size_t k = 0; k < 16; ++k) {
        const double d = y.re()[(b * 2 + c) * 16 + k] - m;
        v += d * d;
      }
    v /= 128;
    EXPECT_NEAR(m, 0, 1e-12);
    EXPECT_NEAR(v, 1, 1e-4);
  }
}

TEST(CBatchNorm, EvalModeUsesRunningStatistics) {
  std::mt19937_64 rng(44);
  auto x = oracle::random_complex(Shape{1, 2, 3}, rng);
  auto layer = ComplexBatchNormLayer<double>::identity(2);
  layer.running_mean_re = {0.5, -0.5};
  layer.running_var_re = {4.0, 0.25};
  layer.running_mean_im = {0.0, 1.0};
  layer.running_var_im = {1.0, 9.0};
  layer.gamma_im = {2.0, 3.0};
  const auto before = layer;
  const auto y = cbatchnorm(x, layer, ad::BnMode::eval);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t k = 0; k < 3; ++k) {
      const auto z = x.at(c * 3 + k);
      EXPECT_NEAR(y.re()[c * 3 + k],
                  (z.real() - before.running_mean_re[c]) /
                      std::sqrt(before.running_var_re[c] + 1e-5),
                  1e-14);
      EXPECT_NEAR(y.im()[c * 3 + k],
                  before.gamma_im[c] * (z.imag() - before.running_mean_im[c]) /
                      std::sqrt(before.running_var_im[c] + 1e-5),
                  1e-14);
    }
  EXPECT_EQ(layer.running_var_re, before.running_var_re);
}

TEST(CBatchNorm, Errors) {
  auto layer = ComplexBatchNormLayer<double>::identity(2);
  EXPECT_THROW((void)cbatchnorm(ComplexTensor<double>(Shape{1, 2, 3}), layer,
                                ad::BnMode::train),
               std::invalid_argument);
  EXPECT_THROW((void)cbatchnorm(ComplexTensor<double>(Shape{2, 3, 3}), layer,
                                ad::BnMode::train),
               std::invalid_argument);
  layer.epsilon = 0;
  EXPECT_THROW((void)cbatchnorm(ComplexTensor<double>(Shape{2, 2, 3}), layer,
                                ad::BnMode::train),
               std::invalid_argument);
}

TEST(CRelu, QuadrantRule) {
  const std::vector<std::complex<double>> in{
      {1, 2}, {-1, 2}, {1, -2}, {-1, -2}, {0, 0}, {0, 3}, {2, 0}};
  const auto y = crelu(ComplexTensor<double>::from_complex(Shape{7}, in));
  EXPECT_EQ(y.at(0), in[0]);
  EXPECT_EQ(y.at(1), std::complex<double>(0, 0));
  EXPECT_EQ(y.at(2), std::complex<double>(0, 0));
  EXPECT_EQ(y.at(3), std::complex<double>(0, 0));
  EXPECT_EQ(y.at(4), in[4]);
  EXPECT_EQ(y.at(5), in[5]);
  EXPECT_EQ(y.at(6), in[6]);
}

TEST(CRelu, RecordsKinkMargin) {
  ad::Tape<double> t;
  const std::vector<std::complex<double>> in{{0.5, -0.25}, {-3, 0.01}};
  (void)ad::crelu(t.constant(ComplexTensor<double>::from_complex(Shape{2}, in)));
  EXPECT_DOUBLE_EQ(t.kink_margin(), 0.01);
}

TEST(CAvgPool, MatchesWindowMeans) {
  std::mt19937_64 rng(45);
  for (int t = 0; t < 20; ++t) {
    const std::size_t L = 5 + static_cast<std::size_t>(t), w = 1 + t % 4;
    auto x = oracle::random_complex(Shape{3, L}, rng);
    EXPECT_LE(max_diff(cavgpool(x, w), oracle::avgpool_last(x, w)), 1e-15);
  }
  auto x = oracle::random_complex(Shape{2, 3, 7, 9}, rng);
  ad::Tape<double> tape;
  const auto y = tape.complex_value(ad::cavgpool2d(tape.constant(x), 3, 2));
  EXPECT_LE(max_diff(y, oracle::avgpool2d(x, 3, 2)), 1e-15);
  EXPECT_EQ(y.shape(), (Shape{2, 3, 2, 4}));
  EXPECT_THROW((void)cavgpool(x.reshaped(Shape{6, 63}), 64),
               std::invalid_argument);
}

TEST(ComplexToReal, TokenLayout) {
  std::mt19937_64 rng(46);
  auto f = oracle::random_complex(Shape{3, 4}, rng);
  const auto r = complex_to_real(f);
  EXPECT_EQ(r.shape(), (Shape{4, 6}));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t l = 0; l < 4; ++l) {
      EXPECT_EQ(r.data()[l * 6 + c], f.re()[c * 4 + l]);
      EXPECT_EQ(r.data()[l * 6 + 3 + c], f.im()[c * 4 + l]);
    }
}

TEST(BranchConfig, DefaultPropagation) {
  const BranchConfig b;
  const auto st = b.propagate();
  ASSERT_EQ(st.size(), 4u);
  EXPECT_EQ(st[0].channels, 16u);
  EXPECT_EQ(st[0].height, 400u);
  EXPECT_EQ(st[0].width, 47u);
  EXPECT_EQ(st[1].width, 22u);
  EXPECT_EQ(st[2].width, 20u);
  EXPECT_EQ(st[3].height, 10u);
  EXPECT_EQ(st[3].width, 10u);
  EXPECT_EQ(b.feature_channels(), 64u);
  EXPECT_EQ(b.feature_length(), 100u);
}

TEST(BranchConfig, ValidationAndJson) {
  BranchConfig b;
  b.conv[0].kernel_w = 200;
  EXPECT_THROW(b.validate(), std::invalid_argument);
  b = {};
  b.pool_h = 0;
  EXPECT_THROW(b.validate(), std::invalid_argument);
  b = {};
  b.input_h = 16;
  b.conv[1].out_channels = 5;
  b.pool_h = 4;
  const auto j = branch_to_json(b);
  const auto back = branch_from_json(j, BranchConfig{});
  EXPECT_EQ(branch_to_json(back), j);
}

TEST(ExtractFeatures, DefaultBranchGivesFeatureMatrix) {
  ParamStore<double> store;
  const BranchConfig cfg;
  const auto idx = register_branch(store, "fft", cfg, 3);
  std::mt19937_64 rng(47);
  ad::Tape<double> t;
  auto vars = bind(t, store);
  auto x = t.constant(oracle::random_complex(Shape{2, 1, 400, 100}, rng));
  std::vector<BnUpdate<double>> upd;
  auto f = extract_features(x, cfg, idx, store, vars, ad::BnMode::train, {},
                            &upd);
  EXPECT_EQ(f.shape(), (Shape{2, 64, 100}));
  EXPECT_EQ(upd.size(), 3u);
  EXPECT_TRUE(t.complex_value(f).all_finite());
  auto wrong = t.constant(ComplexTensor<double>(Shape{2, 1, 399, 100}));
  EXPECT_THROW((void)extract_features(wrong, cfg, idx, store, vars,
                                      ad::BnMode::eval, {}),
               std::invalid_argument);
}

TEST(ApplyBnUpdates, MomentumBlend) {
  ParamStore<double> store;
  BranchConfig cfg;
  cfg.input_h = 4;
  cfg.input_w = 8;
  cfg.conv = {ConvSpec{2, 1, 3}, ConvSpec{2, 1, 2}, ConvSpec{2, 1, 2}};
  cfg.pool_h = 1;
  cfg.pool_w = 2;
  const auto idx = register_branch(store, "b", cfg, 1);
  BnUpdate<double> u{idx.norm[0], {{1, 2}, {3, 4}, {-1, 0}, {5, 5}}};
  apply_bn_updates(store, {u}, 0.1);
  const auto &mr = store.real(idx.norm[0].mean_re).data();
  const auto &vr = store.real(idx.norm[0].var_re).data();
  EXPECT_DOUBLE_EQ(mr[1], 0.2);
  EXPECT_DOUBLE_EQ(vr[0], 0.9 + 0.3);
}
