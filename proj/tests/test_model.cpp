#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "rfn/checkpoint.hpp"
#include "rfn/checks.hpp"

using namespace rfn;

namespace {

std::vector<std::string> names(const Model<double> &m) {
  std::vector<std::string> out;
  for (const auto &e : m.params)
    out.push_back(e.name);
  return out;
}

bool has(const std::vector<std::string> &v, const std::string &s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

ComplexTensor<double> toy_batch(std::size_t B, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return oracle::random_complex(Shape{B, 1, 4, 8}, rng);
}

} // namespace

TEST(Model, ParameterNames) {
  const auto f = names(make_model<double>(checks::toy_spec(ModelKind::fusenet), 1));
  const auto b = names(make_model<double>(checks::toy_spec(ModelKind::baseline), 1));
  for (const char *n : {"iq.conv1.kernel", "fft.conv3.bias", "iq.bn2.gamma_re",
                        "fft.bn1.running_var_im", "attn.iq_to_fft.wq",
                        "attn.fft_to_iq.wv", "head.weight", "head.bias"})
    EXPECT_TRUE(has(f, n)) << n;
  EXPECT_FALSE(has(b, "iq.conv1.kernel"));
  EXPECT_FALSE(has(b, "attn.iq_to_fft.wq"));
  EXPECT_TRUE(has(b, "fft.conv1.kernel"));
}

TEST(Model, HeadShapes) {
  const auto spec = checks::toy_spec(ModelKind::fusenet);
  const auto f = make_model<double>(spec, 1);
  // toy branch: 4x8 -> 4x6 -> 4x5 -> 4x4 (conv) -> 4x2 (pool), 2 channels
  EXPECT_EQ(spec.branch.feature_length(), 8u);
  EXPECT_EQ(shape_of(f.params[f.head_weight].value), (Shape{16, 2}));
  EXPECT_EQ(shape_of(f.params[f.iq_to_fft.wq].value), (Shape{4, 8}));
  const auto b = make_model<double>(checks::toy_spec(ModelKind::baseline), 1);
  EXPECT_EQ(shape_of(b.params[b.head_weight].value), (Shape{8 * 4, 2}));
}

TEST(Model, InitDependsOnSeedAndName) {
  const auto spec = checks::toy_spec(ModelKind::fusenet);
  const auto a = make_model<double>(spec, 7), b = make_model<double>(spec, 7);
  EXPECT_TRUE(a.params == b.params);
  const auto c = make_model<double>(spec, 8);
  EXPECT_FALSE(a.params == c.params);
  // Same-named tensors agree between the two model kinds.
  const auto base = make_model<double>(checks::toy_spec(ModelKind::baseline), 7);
  const auto i = a.params.index_of("fft.conv2.kernel");
  const auto j = base.params.index_of("fft.conv2.kernel");
  EXPECT_TRUE(a.params[i].value == base.params[j].value);
}

TEST(Model, PassthroughEqualsBaseline) {
  auto ps = checks::toy_spec(ModelKind::fusenet);
  ps.attention.fusion = FusionMode::passthrough;
  const auto p = make_model<double>(ps, 3);
  const auto b = make_model<double>(checks::toy_spec(ModelKind::baseline), 3);
  EXPECT_TRUE(p.params == b.params);
  const auto iq = toy_batch(3, 1), sp = toy_batch(3, 2);
  EXPECT_EQ(predict_logits(p, iq, sp), predict_logits(b, iq, sp));
}

TEST(Model, BaselineIgnoresIq) {
  const auto b = make_model<double>(checks::toy_spec(ModelKind::baseline), 3);
  const auto sp = toy_batch(2, 2);
  EXPECT_EQ(predict_logits(b, toy_batch(2, 5), sp),
            predict_logits(b, toy_batch(2, 6), sp));
  const auto f = make_model<double>(checks::toy_spec(ModelKind::fusenet), 3);
  EXPECT_FALSE(predict_logits(f, toy_batch(2, 5), sp) ==
               predict_logits(f, toy_batch(2, 6), sp));
}

TEST(Model, ForwardShapesAndErrors) {
  const auto m = make_model<double>(checks::toy_spec(ModelKind::fusenet), 3);
  const auto logits = predict_logits(m, toy_batch(5, 1), toy_batch(5, 2));
  EXPECT_EQ(logits.shape(), (Shape{5, 2}));
  ad::Tape<double> t;
  auto vars = bind(t, m.params);
  EXPECT_THROW((void)model_forward(m, vars, t.constant(toy_batch(1, 1)),
                                   t.constant(toy_batch(1, 2)),
                                   ad::BnMode::train),
               std::invalid_argument);
  EXPECT_THROW((void)model_forward(m, vars, t.constant(toy_batch(2, 1)),
                                   t.constant(toy_batch(3, 2)),
                                   ad::BnMode::eval),
               std::invalid_argument);
  auto spec = checks::toy_spec(ModelKind::fusenet);
  spec.attention.heads = 3;
  EXPECT_THROW((void)make_model<double>(spec, 0), std::invalid_argument);
}

TEST(Model, StackBatch) {
  std::mt19937_64 rng(4);
  const auto a = oracle::random_complex(Shape{4, 8}, rng);
  const auto b = oracle::random_complex(Shape{4, 8}, rng);
  const ComplexTensor<double> *items[] = {&a, &b};
  const auto s = stack_batch<double>(items);
  EXPECT_EQ(s.shape(), (Shape{2, 1, 4, 8}));
  EXPECT_EQ(s.at(32 + 5), b.at(5));
  const auto c = oracle::random_complex(Shape{4, 7}, rng);
  const ComplexTensor<double> *bad[] = {&a, &c};
  EXPECT_THROW((void)stack_batch<double>(bad), std::invalid_argument);
}

TEST(ModelSpec, JsonRoundTrip) {
  auto s = checks::toy_spec(ModelKind::fusenet);
  s.attention.fusion = FusionMode::passthrough;
  s.batch_norm.momentum = 0.2;
  s.num_classes = 5;
  const auto j = model_spec_to_json(s);
  EXPECT_EQ(model_spec_to_json(model_spec_from_json(j)), j);
  EXPECT_EQ(parse_model_kind("baseline"), ModelKind::baseline);
  EXPECT_THROW((void)parse_model_kind("resnet"), std::invalid_argument);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  for (auto kind : {ModelKind::fusenet, ModelKind::baseline}) {
    const auto m = make_model<double>(checks::toy_spec(kind), 11);
    const nlohmann::json extra = {{"classes", {"a", "b"}}, {"seed", 11}};
    const auto bytes = encode_checkpoint(m, extra);
    const auto ck = decode_checkpoint<double>(bytes);
    EXPECT_EQ(encode_checkpoint(ck.model, ck.extra), bytes);
    EXPECT_EQ(ck.extra, extra);
    ASSERT_EQ(ck.model.params.size(), m.params.size());
    for (std::size_t i = 0; i < m.params.size(); ++i) {
      const auto &want = m.params[i].value;
      const auto &got = ck.model.params[i].value;
      EXPECT_EQ(m.params[i].trainable, ck.model.params[i].trainable);
      if (auto *r = std::get_if<RealTensor<double>>(&want)) {
        const auto &g = std::get<RealTensor<double>>(got);
        for (std::size_t k = 0; k < r->numel(); ++k)
          EXPECT_EQ(g.data()[k], static_cast<double>(static_cast<float>(r->data()[k])));
      }
    }
    // Float weights survive unchanged.
    const auto fm = make_model<float>(checks::toy_spec(kind), 11);
    EXPECT_TRUE(decode_checkpoint<float>(encode_checkpoint(fm, {})).model.params ==
                fm.params);
  }
}

TEST(Checkpoint, HeaderLayout) {
  const auto m = make_model<float>(checks::toy_spec(ModelKind::baseline), 0);
  const auto b = encode_checkpoint(m, nlohmann::json::object());
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "RFNC");
  EXPECT_EQ(b[4], 1);
  EXPECT_EQ(b[5] | b[6] | b[7], 0);
  const std::size_t meta_len = b[8] | (b[9] << 8) | (b[10] << 16);
  const auto meta = nlohmann::json::parse(
      std::string(b.begin() + 12, b.begin() + 12 + static_cast<long>(meta_len)));
  EXPECT_EQ(meta.at("model").at("kind"), "baseline");
  EXPECT_EQ(b[12 + meta_len], m.params.size());
}

TEST(Checkpoint, CorruptionIsRejected) {
  const auto m = make_model<float>(checks::toy_spec(ModelKind::fusenet), 0);
  const auto b = encode_checkpoint(m, {});
  auto bad_magic = b;
  bad_magic[0] = 'X';
  EXPECT_THROW((void)decode_checkpoint<float>(bad_magic), std::runtime_error);
  auto bad_version = b;
  bad_version[4] = 9;
  EXPECT_THROW((void)decode_checkpoint<float>(bad_version), std::runtime_error);
  auto truncated = b;
  truncated.resize(b.size() - 3);
  EXPECT_THROW((void)decode_checkpoint<float>(truncated), std::runtime_error);
  auto trailing = b;
  trailing.push_back(0);
  EXPECT_THROW((void)decode_checkpoint<float>(trailing), std::runtime_error);
  auto renamed = b;
  const std::string key = "iq.conv1.kernel";
  auto it = std::search(renamed.begin() + 12, renamed.end(), key.begin(), key.end());
  ASSERT_NE(it, renamed.end());
  *it = 'x';
  EXPECT_THROW((void)decode_checkpoint<float>(renamed), std::runtime_error);
  EXPECT_THROW((void)load_checkpoint<float>("/nonexistent/model.rfnc"),
               std::runtime_error);
}

TEST(Checkpoint, SaveAndLoadFile) {
  const auto dir = fs::temp_directory_path() / "rfn_test_model_ck";
  fs::remove_all(dir);
  const auto m = make_model<float>(checks::toy_spec(ModelKind::fusenet), 2);
  save_checkpoint(dir / "sub" / "m.rfnc", m, {{"seed", 2}});
  const auto ck = load_checkpoint<float>(dir / "sub" / "m.rfnc");
  EXPECT_TRUE(ck.model.params == m.params);
  EXPECT_EQ(ck.extra.at("seed"), 2);
  fs::remove_all(dir);
}
