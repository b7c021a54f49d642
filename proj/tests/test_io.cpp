#include <gtest/gtest.h>

#include <cstring>
#include <random>
#include <set>

#include "oracles.hpp"
#include "rfn/io.hpp"
#include "rfn/npy.hpp"

using namespace rfn;

namespace {

fs::path scratch_dir(const std::string &name) {
  const auto d = fs::temp_directory_path() /
                 ("rfn_test_io_" + name + "_" +
                  std::to_string(::testing::UnitTest::GetInstance()->random_seed()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

ComplexTensor<float> random_float_cube(Shape s, std::mt19937_64 &rng) {
  return cast<float>(oracle::random_complex(s, rng, -100, 100));
}

std::uint32_t u32_at(const std::vector<std::uint8_t> &b, std::size_t at) {
  return b[at] | (b[at + 1] << 8) | (b[at + 2] << 16) |
         (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

} // namespace

TEST(Rfc1, ByteLayout) {
  ComplexTensor<float> c(Shape{1, 2, 3});
  c.set(0, {1.0f, -2.0f});
  c.set(5, {0.5f, 3.25f});
  const auto b = encode_rfc1(c);
  ASSERT_EQ(b.size(), 16u + 6 * 8);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "RFC1");
  EXPECT_EQ(u32_at(b, 4), 1u);
  EXPECT_EQ(u32_at(b, 8), 2u);
  EXPECT_EQ(u32_at(b, 12), 3u);
  EXPECT_EQ(u32_at(b, 16), std::bit_cast<std::uint32_t>(1.0f));
  EXPECT_EQ(u32_at(b, 20), std::bit_cast<std::uint32_t>(-2.0f));
  EXPECT_EQ(u32_at(b, 16 + 5 * 8), std::bit_cast<std::uint32_t>(0.5f));
  EXPECT_EQ(u32_at(b, 20 + 5 * 8), std::bit_cast<std::uint32_t>(3.25f));
}

TEST(Rfc1, RoundTripIsBitExact) {
  std::mt19937_64 rng(31);
  const auto dir = scratch_dir("rt");
  for (int i = 0; i < 20; ++i) {
    auto c = random_float_cube(Shape{3, 2, 5}, rng);
    const auto bytes = encode_rfc1(c);
    EXPECT_EQ(decode_rfc1<float>(bytes), c);
    EXPECT_EQ(encode_rfc1(decode_rfc1<float>(bytes)), bytes);
    write_rfc1(dir / "c.rfc1", c);
    EXPECT_EQ(read_rfc1<float>(dir / "c.rfc1"), c);
  }
  fs::remove_all(dir);
}

TEST(Rfc1, RejectsCorruptInput) {
  ComplexTensor<float> c(Shape{2, 2, 2});
  auto b = encode_rfc1(c);
  auto truncated = b;
  truncated.pop_back();
  EXPECT_THROW((void)decode_rfc1<float>(truncated), std::runtime_error);
  auto extra = b;
  extra.push_back(0);
  EXPECT_THROW((void)decode_rfc1<float>(extra), std::runtime_error);
  auto magic = b;
  magic[3] = '2';
  EXPECT_THROW((void)decode_rfc1<float>(magic), std::runtime_error);
  auto zero = b;
  zero[4] = zero[5] = zero[6] = zero[7] = 0;
  EXPECT_THROW((void)decode_rfc1<float>(zero), std::runtime_error);
  EXPECT_THROW((void)decode_rfc1<float>(std::vector<std::uint8_t>{'R', 'F'}),
               std::runtime_error);
  EXPECT_THROW((void)encode_rfc1(ComplexTensor<float>(Shape{4, 4})),
               std::invalid_argument);
}

TEST(Rfc1, MissingFileNamesPath) {
  try {
    (void)read_rfc1<float>("/nonexistent/cube.rfc1");
    FAIL();
  } catch (const std::runtime_error &e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/cube.rfc1"),
              std::string::npos);
  }
}

TEST(Manifest, JsonRoundTrip) {
  DatasetManifest m;
  m.classes = {"wood", "metal"};
  m.shape = std::vector<std::size_t>{20, 20, 100};
  m.radar = RadarConfig::occluded();
  m.samples.push_back({"a.rfc1", 1, "d0.3", SplitHint::unseen, "spec/a.rfc1"});
  m.samples.push_back({"b.rfc1", 0, "", SplitHint::automatic, std::nullopt});
  const auto j = manifest_to_json(m);
  const auto back = manifest_from_json(j);
  EXPECT_EQ(manifest_to_json(back), j);
  EXPECT_EQ(back.samples[0].split_hint, SplitHint::unseen);
  EXPECT_EQ(back.samples[0].spectrum_path.value(), "spec/a.rfc1");
  EXPECT_EQ(back.radar->bandwidth, 4e9);
}

TEST(Manifest, ClassByNameAndHintAliases) {
  const auto j = nlohmann::json::parse(R"({
    "version": 1, "classes": ["a", "b"],
    "samples": [
      {"path": "x.rfc1", "class": "b", "split_hint": "unseen-distance"},
      {"path": "y.rfc1", "class": 0}
    ]})");
  const auto m = manifest_from_json(j);
  EXPECT_EQ(m.samples[0].class_index, 1u);
  EXPECT_EQ(m.samples[0].split_hint, SplitHint::unseen);
  EXPECT_EQ(m.samples[1].split_hint, SplitHint::automatic);
}

TEST(Manifest, ErrorsNameTheSample) {
  auto bad = [](const char *text) {
    return manifest_from_json(nlohmann::json::parse(text));
  };
  EXPECT_THROW(bad(R"({"version": 2, "classes": ["a"], "samples": []})"),
               std::runtime_error);
  EXPECT_THROW(bad(R"({"version": 1, "classes": [], "samples": []})"),
               std::runtime_error);
  try {
    bad(R"({"version": 1, "classes": ["a"],
            "samples": [{"path": "p.rfc1", "class": 3}]})");
    FAIL();
  } catch (const std::runtime_error &e) {
    EXPECT_NE(std::string(e.what()).find("p.rfc1"), std::string::npos);
  }
  EXPECT_THROW(bad(R"({"version": 1, "classes": ["a"],
            "samples": [{"path": "p.rfc1", "class": "zz"}]})"),
               std::runtime_error);
  EXPECT_THROW(bad(R"({"version": 1, "classes": ["a"],
            "samples": [{"path": "p", "class": 0, "split_hint": "later"}]})"),
               std::runtime_error);
}

TEST(Dataset, LoadResolvesRelativePathsAndChecksFiles) {
  std::mt19937_64 rng(32);
  const auto dir = scratch_dir("ds");
  DatasetManifest m;
  m.classes = {"a", "b"};
  for (int i = 0; i < 4; ++i) {
    const std::string p = "cubes/" + std::to_string(i) + ".rfc1";
    write_rfc1(dir / p, random_float_cube(Shape{2, 2, 4}, rng));
    m.samples.push_back({p, static_cast<std::size_t>(i % 2), "t", SplitHint::automatic, {}});
  }
  write_manifest(dir / "manifest.json", m);
  const auto ds = load_dataset<double>(dir / "manifest.json");
  ASSERT_EQ(ds.size(), 4u);
  EXPECT_EQ(ds.samples[3].label, 1u);
  EXPECT_EQ(ds.samples[2].cube.data,
            cast<double>(read_rfc1<float>(dir / "cubes/2.rfc1")));

  m.samples.push_back({"cubes/missing.rfc1", 0, "", SplitHint::automatic, {}});
  write_manifest(dir / "manifest.json", m);
  try {
    (void)load_dataset<double>(dir / "manifest.json");
    FAIL();
  } catch (const std::runtime_error &e) {
    EXPECT_NE(std::string(e.what()).find("missing.rfc1"), std::string::npos);
  }

  m.samples.pop_back();
  write_rfc1(dir / "cubes/odd.rfc1", random_float_cube(Shape{2, 2, 5}, rng));
  m.samples.push_back({"cubes/odd.rfc1", 0, "", SplitHint::automatic, {}});
  write_manifest(dir / "manifest.json", m);
  EXPECT_THROW((void)load_dataset<double>(dir / "manifest.json"),
               std::runtime_error);
  fs::remove_all(dir);
}

TEST(Split, StratifiedDeterministicAndDisjoint) {
  std::vector<std::size_t> labels;
  for (std::size_t c = 0; c < 3; ++c)
    for (int i = 0; i < 10; ++i)
      labels.push_back(c);
  std::vector<SplitHint> hints(labels.size(), SplitHint::automatic);
  const auto a = split_indices(labels, hints, 3, 0.8, 5);
  const auto b = split_indices(labels, hints, 3, 0.8, 5);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  EXPECT_EQ(a.train.size(), 24u);
  EXPECT_EQ(a.test.size(), 6u);
  std::vector<int> per_class(3, 0);
  for (auto i : a.test)
    ++per_class[labels[i]];
  EXPECT_EQ(per_class, (std::vector<int>{2, 2, 2}));
  std::set<std::size_t> all(a.train.begin(), a.train.end());
  for (auto i : a.test)
    EXPECT_TRUE(all.insert(i).second);
  EXPECT_EQ(all.size(), labels.size());
  const auto c = split_indices(labels, hints, 3, 0.8, 6);
  EXPECT_NE(a.test, c.test);
}

TEST(Split, HintsAreHonored) {
  std::vector<std::size_t> labels{0, 0, 0, 1, 1, 1, 0, 1};
  std::vector<SplitHint> hints{SplitHint::automatic, SplitHint::automatic,
                               SplitHint::train,     SplitHint::automatic,
                               SplitHint::automatic, SplitHint::test,
                               SplitHint::unseen,    SplitHint::unseen};
  const auto s = split_indices(labels, hints, 2, 0.5, 1);
  EXPECT_EQ(s.unseen, (std::vector<std::size_t>{6, 7}));
  EXPECT_NE(std::find(s.train.begin(), s.train.end(), 2), s.train.end());
  EXPECT_NE(std::find(s.test.begin(), s.test.end(), 5), s.test.end());
  EXPECT_EQ(s.train.size() + s.test.size(), 6u);
}

TEST(Split, Errors) {
  std::vector<std::size_t> labels{0, 1, 1};
  std::vector<SplitHint> hints(3, SplitHint::automatic);
  EXPECT_THROW((void)split_indices(labels, hints, 2, 0.8, 0),
               std::invalid_argument);
  std::vector<std::size_t> ok{0, 0, 1, 1};
  std::vector<SplitHint> h4(4, SplitHint::automatic);
  EXPECT_THROW((void)split_indices(ok, h4, 2, 1.0, 0), std::invalid_argument);
  EXPECT_THROW((void)split_indices(ok, hints, 2, 0.5, 0),
               std::invalid_argument);
  EXPECT_THROW((void)parse_split_hint("sometimes"), std::invalid_argument);
}

namespace {

std::vector<std::uint8_t> npy_bytes(const std::string &descr,
                                    const std::string &shape,
                                    const std::vector<std::uint8_t> &payload) {
  std::string header = "{'descr': '" + descr +
                       "', 'fortran_order': False, 'shape': " + shape + ", }";
  while ((10 + header.size() + 1) % 64 != 0)
    header += ' ';
  header += '\n';
  std::vector<std::uint8_t> b{0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
  b.push_back(static_cast<std::uint8_t>(header.size() & 0xff));
  b.push_back(static_cast<std::uint8_t>(header.size() >> 8));
  b.insert(b.end(), header.begin(), header.end());
  b.insert(b.end(), payload.begin(), payload.end());
  return b;
}

template <class F> void append(std::vector<std::uint8_t> &b, F v) {
  std::uint8_t raw[sizeof(F)];
  std::memcpy(raw, &v, sizeof(F));
  b.insert(b.end(), raw, raw + sizeof(F));
}

} // namespace

TEST(Npy, Complex64AndFloatPairs) {
  std::vector<std::uint8_t> p;
  for (int i = 0; i < 6; ++i) {
    append(p, static_cast<float>(i));
    append(p, static_cast<float>(-i));
  }
  const auto a = decode_npy_complex<double>(npy_bytes("<c8", "(1, 2, 3)", p));
  EXPECT_EQ(a.shape(), (Shape{1, 2, 3}));
  EXPECT_EQ(a.at(4), std::complex<double>(4, -4));
  const auto b =
      decode_npy_complex<double>(npy_bytes("<f4", "(1, 2, 3, 2)", p));
  EXPECT_EQ(a, b);

  std::vector<std::uint8_t> q;
  append(q, 1.5);
  append(q, 2.5);
  const auto c = decode_npy_complex<double>(npy_bytes("<c16", "(1,)", q));
  EXPECT_EQ(c.at(0), std::complex<double>(1.5, 2.5));
}

TEST(Npy, Errors) {
  std::vector<std::uint8_t> p(16);
  EXPECT_THROW((void)decode_npy_complex<double>(npy_bytes("<i4", "(4,)", p)),
               std::runtime_error);
  EXPECT_THROW((void)decode_npy_complex<double>(npy_bytes("<c8", "(3,)", p)),
               std::runtime_error);
  EXPECT_THROW((void)decode_npy_complex<double>(npy_bytes("<f4", "(4,)", p)),
               std::runtime_error);
  EXPECT_THROW((void)decode_npy_complex<double>(std::vector<std::uint8_t>(20)),
               std::runtime_error);
}
