#pragma once

// Synthetic labelled scene sets rendered with the point-target FMCW model.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rfn/io.hpp"
#include "rfn/radar.hpp"

namespace rfn {

struct LabeledScene {
  SyntheticScene scene;
  std::size_t label = 0;
  std::string distance_tag;
  SplitHint split_hint = SplitHint::automatic;
};

struct SceneSet {
  RadarConfig radar;
  std::vector<std::string> classes;
  std::vector<LabeledScene> scenes;
};

/// Small array used by the synthetic benchmarks: 4 x 4 antennas, 32 samples.
inline RadarConfig compact_radar() {
  RadarConfig c = RadarConfig::material();
  c.n_tx = 4;
  c.n_rx = 4;
  c.fast_time_samples = 32;
  return c;
}

/// Two or more classes separated by target range: class c places a single
/// point target near range cell (c + 1) * N / (C + 2), with random angles,
/// reflectivity and a jitter of +-1.5 cells.
inline SceneSet point_target_scenes(const RadarConfig &radar,
                                    std::size_t num_classes,
                                    std::size_t per_class, double noise,
                                    std::uint64_t seed) {
  if (num_classes < 2)
    throw std::invalid_argument("point_target_scenes: need >= 2 classes");
  SceneSet set;
  set.radar = radar;
  for (std::size_t c = 0; c < num_classes; ++c)
    set.classes.push_back("target_" + std::to_string(c));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double dr = radar.range_resolution();
  const double N = static_cast<double>(radar.fast_time_samples);
  for (std::size_t i = 0; i < per_class; ++i)
    for (std::size_t c = 0; c < num_classes; ++c) {
      LabeledScene s;
      s.label = c;
      const double cell = static_cast<double>(c + 1) * N /
                              static_cast<double>(num_classes + 2) +
                          (u(rng) - 0.5) * 3.0;
      Reflector r;
      r.range = cell * dr;
      r.azimuth = (u(rng) - 0.5) * std::numbers::pi / 3.0;
      r.elevation = (u(rng) - 0.5) * std::numbers::pi / 3.0;
      r.reflectivity = std::polar(0.5 + u(rng), 2.0 * std::numbers::pi * u(rng));
      s.scene.reflectors.push_back(r);
      s.scene.noise_level = noise;
      s.scene.seed = mix_seed(seed, set.scenes.size() + 1);
      set.scenes.push_back(std::move(s));
    }
  return set;
}

struct DistanceShiftOptions {
  std::size_t per_class_per_distance = 12;
  std::vector<double> train_distances{0.25, 0.40, 0.55}; // fractions of Rmax
  std::vector<double> unseen_distances{0.32, 0.62};
  std::size_t unseen_per_class_per_distance = 6;
  double noise = 0.05;
};

/// Layered "materials": a front reflection at the surface distance plus a
/// weaker echo a class-specific number of range cells behind it. Surfaces at
/// the unseen distances are tagged for the separate evaluation set.
inline SceneSet distance_shift_scenes(const RadarConfig &radar,
                                      const DistanceShiftOptions &opt,
                                      std::uint64_t seed) {
  struct Signature {
    const char *name;
    double echo_cells;
    double echo_gain;
  };
  static constexpr Signature kMaterials[] = {
      {"layer_a", 2.0, 0.7}, {"layer_b", 4.0, 0.7}, {"layer_c", 3.0, 0.35}};
  SceneSet set;
  set.radar = radar;
  for (const auto &m : kMaterials)
    set.classes.emplace_back(m.name);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double dr = radar.range_resolution();
  const double rmax = radar.max_unambiguous_range();

  auto emit = [&](double frac, std::size_t count, SplitHint hint) {
    char tag[32];
    std::snprintf(tag, sizeof tag, "d%.2f", frac);
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t c = 0; c < std::size(kMaterials); ++c) {
        LabeledScene s;
        s.label = c;
        s.distance_tag = tag;
        s.split_hint = hint;
        const double d = frac * rmax + (u(rng) - 0.5) * 0.6 * dr;
        const double az = (u(rng) - 0.5) * 0.2;
        const double el = (u(rng) - 0.5) * 0.2;
        const double amp = 0.7 + 0.6 * u(rng);
        const double phase = 2.0 * std::numbers::pi * u(rng);
        Reflector front{d, az, el, std::polar(amp, phase)};
        Reflector echo{d + kMaterials[c].echo_cells * dr, az, el,
                       std::polar(amp * kMaterials[c].echo_gain,
                                  phase + 2.0 * std::numbers::pi * u(rng))};
        s.scene.reflectors = {front, echo};
        s.scene.noise_level = opt.noise;
        s.scene.seed = mix_seed(seed, set.scenes.size() + 1);
        set.scenes.push_back(std::move(s));
      }
  };
  for (double f : opt.train_distances)
    emit(f, opt.per_class_per_distance, SplitHint::automatic);
  for (double f : opt.unseen_distances)
    emit(f, opt.unseen_per_class_per_distance, SplitHint::unseen);
  return set;
}

template <class T> Dataset<T> render(const SceneSet &set) {
  Dataset<T> ds;
  ds.classes = set.classes;
  for (std::size_t i = 0; i < set.scenes.size(); ++i) {
    const auto &s = set.scenes[i];
    Sample<T> out;
    out.cube = synth_fmcw_cube<T>(s.scene, set.radar);
    out.label = s.label;
    out.distance_tag = s.distance_tag;
    out.split_hint = s.split_hint;
    out.source = "synthetic:" + std::to_string(i);
    ds.samples.push_back(std::move(out));
  }
  return ds;
}

/// Writes one RFC1 cube per scene plus manifest.json into `dir`.
inline void write_scene_set(const SceneSet &set, const fs::path &dir) {
  fs::create_directories(dir / "cubes");
  DatasetManifest m;
  m.classes = set.classes;
  m.shape = set.radar.cube_shape().dims();
  m.radar = set.radar;
  for (std::size_t i = 0; i < set.scenes.size(); ++i) {
    const auto &s = set.scenes[i];
    char name[32];
    std::snprintf(name, sizeof name, "cubes/%05zu.rfc1", i);
    write_rfc1(dir / name, synth_fmcw_cube<float>(s.scene, set.radar).data);
    m.samples.push_back({name, s.label, s.distance_tag, s.split_hint, {}});
  }
  write_manifest(dir / "manifest.json", m);
}

/// Parses a scene description. Either a preset
///   {"preset": "point_targets" | "distance_shift", "radar": {...}, ...}
/// or an explicit list
///   {"radar": {...}, "classes": [...], "scenes": [{"class", "reflectors":
///    [{"range", "azimuth", "elevation", "re", "im"}], "noise", ...}]}.
/// `seed` drives presets and any scene without its own "seed".
inline SceneSet scene_set_from_json(const nlohmann::json &j,
                                    std::uint64_t seed) {
  const RadarConfig radar = j.contains("radar")
                                ? radar_config_from_json(j.at("radar"))
                                : compact_radar();
  if (j.contains("preset")) {
    const auto p = j.at("preset").get<std::string>();
    if (p == "point_targets")
      return point_target_scenes(radar, j.value("classes", std::size_t{2}),
                                 j.value("samples_per_class", std::size_t{20}),
                                 j.value("noise", 0.1), seed);
    if (p == "distance_shift") {
      DistanceShiftOptions o;
      o.per_class_per_distance =
          j.value("per_class_per_distance", o.per_class_per_distance);
      o.unseen_per_class_per_distance = j.value(
          "unseen_per_class_per_distance", o.unseen_per_class_per_distance);
      o.train_distances = j.value("train_distances", o.train_distances);
      o.unseen_distances = j.value("unseen_distances", o.unseen_distances);
      o.noise = j.value("noise", o.noise);
      return distance_shift_scenes(radar, o, seed);
    }
    throw std::invalid_argument("unknown scene preset '" + p + "'");
  }
  SceneSet set;
  set.radar = radar;
  set.classes = j.at("classes").get<std::vector<std::string>>();
  const auto &arr = j.at("scenes");
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto &e = arr[i];
    LabeledScene s;
    s.label = e.at("class").get<std::size_t>();
    if (s.label >= set.classes.size())
      throw std::invalid_argument("scene " + std::to_string(i) +
                                  ": class index out of range");
    s.distance_tag = e.value("distance_tag", std::string{});
    s.split_hint = parse_split_hint(e.value("split_hint", std::string{}));
    s.scene.noise_level = e.value("noise", 0.0);
    s.scene.seed = e.value("seed", mix_seed(seed, i + 1));
    for (const auto &r : e.at("reflectors")) {
      Reflector ref;
      ref.range = r.at("range").get<double>();
      ref.azimuth = r.value("azimuth", 0.0);
      ref.elevation = r.value("elevation", 0.0);
      ref.reflectivity = {r.value("re", 1.0), r.value("im", 0.0)};
      s.scene.reflectors.push_back(ref);
    }
    set.scenes.push_back(std::move(s));
  }
  return set;
}

} // namespace rfn
