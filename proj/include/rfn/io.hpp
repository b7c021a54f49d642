#pragma once

// RFC1 cube files, JSON dataset manifests, loading and splitting.
//
// RFC1 layout (little endian):
//   bytes 0..3   "RFC1"
//   bytes 4..15  uint32 X, Y, N
//   payload      X*Y*N pairs of float32 (re, im), row-major over (x, y, n)

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rfn/radar.hpp"
#include "rfn/tensor.hpp"

namespace rfn {

namespace fs = std::filesystem;

namespace le {

inline void put_u32(std::vector<std::uint8_t> &out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_f32(std::vector<std::uint8_t> &out, float f) {
  put_u32(out, std::bit_cast<std::uint32_t>(f));
}

/// Bounds-checked little-endian reader over a byte buffer.
class Reader {
public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char *>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  [[nodiscard]] std::size_t remaining() const { return bytes_.size() - pos_; }

private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      throw std::runtime_error("unexpected end of data at byte " +
                               std::to_string(pos_));
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

} // namespace le

inline std::vector<std::uint8_t> read_file_bytes(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const fs::path &path,
                             std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char *>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out)
    throw std::runtime_error("short write to " + path.string());
}

template <class T>
std::vector<std::uint8_t> encode_rfc1(const ComplexTensor<T> &cube) {
  const Shape &s = cube.shape();
  if (s.rank() != 3)
    throw std::invalid_argument("RFC1 stores rank-3 cubes, got " + s.str());
  std::vector<std::uint8_t> out{'R', 'F', 'C', '1'};
  out.reserve(16 + cube.numel() * 8);
  for (std::size_t i = 0; i < 3; ++i)
    le::put_u32(out, static_cast<std::uint32_t>(s[i]));
  for (std::size_t i = 0; i < cube.numel(); ++i) {
    le::put_f32(out, static_cast<float>(cube.re()[i]));
    le::put_f32(out, static_cast<float>(cube.im()[i]));
  }
  return out;
}

template <class T>
ComplexTensor<T> decode_rfc1(std::span<const std::uint8_t> bytes) {
  le::Reader r(bytes);
  if (r.str(4) != "RFC1")
    throw std::runtime_error("not an RFC1 cube (bad magic)");
  const std::size_t X = r.u32(), Y = r.u32(), N = r.u32();
  if (X == 0 || Y == 0 || N == 0)
    throw std::runtime_error("RFC1 cube with zero extent");
  const std::size_t count = X * Y * N;
  if (r.remaining() != count * 8)
    throw std::runtime_error("RFC1 payload is " +
                             std::to_string(r.remaining()) +
                             " bytes, expected " + std::to_string(count * 8));
  std::vector<T> re(count), im(count);
  for (std::size_t i = 0; i < count; ++i) {
    re[i] = static_cast<T>(r.f32());
    im[i] = static_cast<T>(r.f32());
  }
  return ComplexTensor<T>(Shape{X, Y, N}, std::move(re), std::move(im));
}

template <class T>
void write_rfc1(const fs::path &path, const ComplexTensor<T> &cube) {
  write_file_bytes(path, encode_rfc1(cube));
}

template <class T> ComplexTensor<T> read_rfc1(const fs::path &path) {
  try {
    return decode_rfc1<T>(read_file_bytes(path));
  } catch (const std::exception &e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

enum class SplitHint { automatic, train, test, unseen };

inline SplitHint parse_split_hint(const std::string &s) {
  if (s.empty() || s == "auto")
    return SplitHint::automatic;
  if (s == "train")
    return SplitHint::train;
  if (s == "test")
    return SplitHint::test;
  if (s == "unseen" || s == "unseen-distance")
    return SplitHint::unseen;
  throw std::invalid_argument("unknown split_hint '" + s + "'");
}

inline std::string to_string(SplitHint h) {
  switch (h) {
  case SplitHint::automatic:
    return "auto";
  case SplitHint::train:
    return "train";
  case SplitHint::test:
    return "test";
  case SplitHint::unseen:
    return "unseen";
  }
  return "auto";
}

struct ManifestSample {
  std::string path;
  std::size_t class_index = 0;
  std::string distance_tag;
  SplitHint split_hint = SplitHint::automatic;
  std::optional<std::string> spectrum_path; // written by `preprocess`
};

struct DatasetManifest {
  static constexpr int kVersion = 1;

  int version = kVersion;
  std::vector<std::string> classes;
  std::vector<ManifestSample> samples;
  std::optional<std::vector<std::size_t>> shape;
  std::optional<RadarConfig> radar;
};

inline nlohmann::json radar_config_to_json(const RadarConfig &c) {
  return {{"center_frequency", c.center_frequency},
          {"bandwidth", c.bandwidth},
          {"eirp_dbm", c.eirp_dbm},
          {"n_tx", c.n_tx},
          {"n_rx", c.n_rx},
          {"fast_time_samples", c.fast_time_samples}};
}

inline RadarConfig radar_config_from_json(const nlohmann::json &j) {
  RadarConfig c;
  if (j.contains("preset")) {
    const auto p = j.at("preset").get<std::string>();
    if (p == "material")
      c = RadarConfig::material();
    else if (p == "occluded")
      c = RadarConfig::occluded();
    else
      throw std::invalid_argument("unknown radar preset '" + p + "'");
  }
  c.center_frequency = j.value("center_frequency", c.center_frequency);
  c.bandwidth = j.value("bandwidth", c.bandwidth);
  c.eirp_dbm = j.value("eirp_dbm", c.eirp_dbm);
  c.n_tx = j.value("n_tx", c.n_tx);
  c.n_rx = j.value("n_rx", c.n_rx);
  c.fast_time_samples = j.value("fast_time_samples", c.fast_time_samples);
  c.validate();
  return c;
}

inline nlohmann::json manifest_to_json(const DatasetManifest &m) {
  nlohmann::json j;
  j["version"] = m.version;
  j["classes"] = m.classes;
  if (m.shape)
    j["shape"] = *m.shape;
  if (m.radar)
    j["radar"] = radar_config_to_json(*m.radar);
  j["samples"] = nlohmann::json::array();
  for (const auto &s : m.samples) {
    nlohmann::json e = {{"path", s.path},
                        {"class", s.class_index},
                        {"distance_tag", s.distance_tag},
                        {"split_hint", to_string(s.split_hint)}};
    if (s.spectrum_path)
      e["spectrum_path"] = *s.spectrum_path;
    j["samples"].push_back(std::move(e));
  }
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json &j) {
  DatasetManifest m;
  m.version = j.at("version").get<int>();
  if (m.version != DatasetManifest::kVersion)
    throw std::runtime_error("unsupported manifest version " +
                             std::to_string(m.version));
  m.classes = j.at("classes").get<std::vector<std::string>>();
  if (m.classes.empty())
    throw std::runtime_error("manifest declares no classes");
  if (j.contains("shape"))
    m.shape = j.at("shape").get<std::vector<std::size_t>>();
  if (j.contains("radar"))
    m.radar = radar_config_from_json(j.at("radar"));
  const auto &arr = j.at("samples");
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto &e = arr[i];
    ManifestSample s;
    s.path = e.at("path").get<std::string>();
    const auto &cls = e.at("class");
    const std::string where =
        "manifest sample " + std::to_string(i) + " (" + s.path + ")";
    if (cls.is_string()) {
      auto it = std::find(m.classes.begin(), m.classes.end(),
                          cls.get<std::string>());
      if (it == m.classes.end())
        throw std::runtime_error(where + ": unknown class '" +
                                 cls.get<std::string>() + "'");
      s.class_index = static_cast<std::size_t>(it - m.classes.begin());
    } else {
      const auto idx = cls.get<long long>();
      if (idx < 0 || static_cast<std::size_t>(idx) >= m.classes.size())
        throw std::runtime_error(where + ": class index " +
                                 std::to_string(idx) + " outside [0, " +
                                 std::to_string(m.classes.size()) + ")");
      s.class_index = static_cast<std::size_t>(idx);
    }
    s.distance_tag = e.value("distance_tag", std::string{});
    try {
      s.split_hint = parse_split_hint(e.value("split_hint", std::string{}));
    } catch (const std::exception &ex) {
      throw std::runtime_error(where + ": " + ex.what());
    }
    if (e.contains("spectrum_path"))
      s.spectrum_path = e.at("spectrum_path").get<std::string>();
    m.samples.push_back(std::move(s));
  }
  return m;
}

inline DatasetManifest read_manifest(const fs::path &path) {
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception &e) {
    throw std::runtime_error("manifest " + path.string() +
                             " is not valid JSON: " + e.what());
  }
  return manifest_from_json(j);
}

inline void write_manifest(const fs::path &path, const DatasetManifest &m) {
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot write manifest " + path.string());
  out << manifest_to_json(m).dump(2) << '\n';
}

template <class T> struct Sample {
  RadarCube<T> cube;
  std::optional<ComplexTensor<T>> spectrum; // cached raw fft3d, if any
  std::size_t label = 0;
  std::string distance_tag;
  SplitHint split_hint = SplitHint::automatic;
  std::string source;
};

template <class T> struct Dataset {
  std::vector<std::string> classes;
  std::vector<Sample<T>> samples;

  [[nodiscard]] std::size_t size() const { return samples.size(); }
  [[nodiscard]] std::size_t num_classes() const { return classes.size(); }
};

/// Loads every sample of a manifest in manifest order. Relative sample paths
/// resolve against the manifest's directory.
template <class T> Dataset<T> load_dataset(const fs::path &manifest_path) {
  const DatasetManifest m = read_manifest(manifest_path);
  const fs::path root = manifest_path.parent_path();
  const RadarConfig cfg = m.radar.value_or(RadarConfig{});
  Dataset<T> ds;
  ds.classes = m.classes;
  std::optional<Shape> expected;
  if (m.shape)
    expected = Shape(*m.shape);
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    const auto &e = m.samples[i];
    const fs::path p = fs::path(e.path).is_absolute() ? fs::path(e.path)
                                                      : root / e.path;
    if (!fs::exists(p))
      throw std::runtime_error("manifest sample " + std::to_string(i) +
                               ": file not found: " + p.string());
    Sample<T> s;
    auto data = read_rfc1<T>(p);
    if (!expected)
      expected = data.shape();
    if (!(data.shape() == *expected))
      throw std::runtime_error("manifest sample " + std::to_string(i) + " (" +
                               p.string() + "): shape " + data.shape().str() +
                               " does not match expected " + expected->str());
    try {
      s.cube = RadarCube<T>(std::move(data), cfg);
    } catch (const std::exception &ex) {
      throw std::runtime_error(p.string() + ": " + ex.what());
    }
    if (e.spectrum_path) {
      const fs::path sp = fs::path(*e.spectrum_path).is_absolute()
                              ? fs::path(*e.spectrum_path)
                              : root / *e.spectrum_path;
      auto spec = read_rfc1<T>(sp);
      if (!(spec.shape() == *expected))
        throw std::runtime_error(sp.string() + ": spectrum shape " +
                                 spec.shape().str() + " does not match cube");
      s.spectrum = std::move(spec);
    }
    s.label = e.class_index;
    s.distance_tag = e.distance_tag;
    s.split_hint = e.split_hint;
    s.source = p.string();
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::vector<std::size_t> unseen;
};

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined word
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Stratified split of samples hinted "auto". Samples hinted "unseen" form a
/// separate evaluation set; explicit train/test hints are honored.
inline DatasetSplit split_indices(std::span<const std::size_t> labels,
                                  std::span<const SplitHint> hints,
                                  std::size_t num_classes, double ratio,
                                  std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0))
    throw std::invalid_argument("split ratio must lie in (0, 1)");
  if (labels.size() != hints.size())
    throw std::invalid_argument("split: labels and hints differ in length");
  DatasetSplit out;
  std::vector<std::vector<std::size_t>> eligible(num_classes);
  std::vector<std::size_t> forced(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes)
      throw std::invalid_argument("split: label out of range at sample " +
                                  std::to_string(i));
    switch (hints[i]) {
    case SplitHint::automatic:
      eligible[labels[i]].push_back(i);
      break;
    case SplitHint::train:
      out.train.push_back(i);
      ++forced[labels[i]];
      break;
    case SplitHint::test:
      out.test.push_back(i);
      ++forced[labels[i]];
      break;
    case SplitHint::unseen:
      out.unseen.push_back(i);
      break;
    }
  }

  std::size_t total = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (eligible[c].size() < 2 && forced[c] == 0)
      throw std::invalid_argument(
          "split: class " + std::to_string(c) + " has " +
          std::to_string(eligible[c].size()) +
          " eligible samples, need at least 2");
    total += eligible[c].size();
  }

  // Largest-remainder allocation so the overall train count is
  // round(ratio * total) while each class stays proportional.
  std::vector<std::size_t> take(num_classes);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double exact = ratio * static_cast<double>(eligible[c].size());
    take[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += take[c];
    remainders.emplace_back(-(exact - std::floor(exact)), c);
  }
  std::stable_sort(remainders.begin(), remainders.end());
  const auto target = static_cast<std::size_t>(
      std::llround(ratio * static_cast<double>(total)));
  for (std::size_t i = 0; assigned < target && i < remainders.size(); ++i) {
    ++take[remainders[i].second];
    ++assigned;
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    const std::size_t n = eligible[c].size();
    if (n >= 2)
      take[c] = std::clamp<std::size_t>(take[c], 1, n - 1);
  }

  for (std::size_t c = 0; c < num_classes; ++c) {
    auto idx = eligible[c];
    std::mt19937_64 rng(mix_seed(seed, c));
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < idx.size(); ++i)
      (i < take[c] ? out.train : out.test).push_back(idx[i]);
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

template <class T>
DatasetSplit split_dataset(const Dataset<T> &ds, double ratio,
                           std::uint64_t seed) {
  std::vector<std::size_t> labels;
  std::vector<SplitHint> hints;
  for (const auto &s : ds.samples) {
    labels.push_back(s.label);
    hints.push_back(s.split_hint);
  }
  return split_indices(labels, hints, ds.num_classes(), ratio, seed);
}

} // namespace rfn
