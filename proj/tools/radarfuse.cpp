// radarfuse: command-line front end for preprocessing, training and checks.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <CLI11.hpp>
#include <json.hpp>

#include "rfn/rfn.hpp"

namespace {

using namespace rfn;

std::vector<std::size_t> parse_dims(const std::string &s) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const auto x = s.find('x', pos);
    const std::string part =
        s.substr(pos, x == std::string::npos ? std::string::npos : x - pos);
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos)
      throw std::invalid_argument("bad size '" + s + "' (expected AxBxC)");
    out.push_back(std::stoull(part));
    if (x == std::string::npos)
      break;
    pos = x + 1;
  }
  return out;
}

int cmd_preprocess(const fs::path &manifest_path, const fs::path &out) {
  const auto m = read_manifest(manifest_path);
  const fs::path root = manifest_path.parent_path();
  fs::create_directories(out / "iq");
  fs::create_directories(out / "spectra");
  DatasetManifest cached = m;
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    const auto &e = m.samples[i];
    const fs::path src =
        fs::path(e.path).is_absolute() ? fs::path(e.path) : root / e.path;
    const auto cube = read_rfc1<double>(src);
    if (cube.shape().rank() != 3)
      throw std::runtime_error(src.string() + ": expected an (X, Y, N) cube");
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.rfc1", i);
    const std::string iq = std::string("iq/") + name;
    const std::string sp = std::string("spectra/") + name;
    fs::copy_file(src, out / iq, fs::copy_options::overwrite_existing);
    write_rfc1(out / sp, fft3d(cube).data);
    cached.samples[i].path = iq;
    cached.samples[i].spectrum_path = sp;
  }
  write_manifest(out / "manifest.json", cached);
  std::cout << "preprocessed " << m.samples.size() << " samples into "
            << out.string() << '\n';
  return 0;
}

template <class T>
int run_train(TrainConfig cfg, const fs::path &config_path, ModelKind kind,
              const fs::path &out) {
  if (cfg.manifest.empty())
    throw std::invalid_argument("config has no \"manifest\"");
  fs::path mpath = cfg.manifest;
  if (mpath.is_relative())
    mpath = config_path.parent_path() / mpath;
  const auto ds = load_dataset<T>(mpath);
  TrainHooks hooks;
  hooks.out_dir = out;
  hooks.on_epoch = [](const EpochLog &e) {
    std::printf("epoch %3zu  loss %.6f  train %.4f", e.epoch, e.mean_loss,
                e.train_accuracy);
    if (e.test_accuracy)
      std::printf("  test %.4f", *e.test_accuracy);
    std::printf("\n");
    std::fflush(stdout);
  };
  try {
    const auto res = train_model<T>(cfg, kind, ds, hooks);
    std::cout << metrics_table(res.test);
    if (res.unseen)
      std::cout << metrics_table(*res.unseen);
  } catch (const DivergenceError &e) {
    std::cerr << "error: " << e.what()
              << " (last completed epoch checkpoint kept in " << out.string()
              << ")\n";
    return 3;
  }
  return 0;
}

template <class T>
int run_eval(const fs::path &weights, const fs::path &manifest,
             const std::string &split) {
  const auto ck = load_checkpoint<T>(weights);
  const auto ds = load_dataset<T>(manifest);
  const auto r = evaluate_checkpoint(ck, ds, split);
  std::cout << metrics_to_json(r).dump(2) << '\n' << metrics_table(r);
  return 0;
}

int cmd_gradcheck(const std::string &module) {
  const std::set<std::string> known{"all", "ctensor", "cnn", "fusion", "model"};
  if (!known.count(module))
    throw std::invalid_argument("unknown module '" + module +
                                "' (expected ctensor, cnn, fusion, model or all)");
  constexpr double tolerance = 1e-4;
  int failures = 0, ran = 0;
  for (const auto &c : checks::gradient_cases()) {
    if (module != "all" && c.module != module)
      continue;
    const auto o = checks::run_case(c, 20240601);
    const bool ok = o.max_rel_error <= tolerance;
    failures += !ok;
    ++ran;
    std::printf("%-4s %-8s %-22s max rel err %.3e over %zu coords%s%s\n",
                ok ? "ok" : "FAIL", o.module.c_str(), o.name.c_str(),
                o.max_rel_error, o.coordinates, ok ? "" : " at ",
                ok ? "" : o.worst.c_str());
  }
  std::printf("%d of %d gradient checks passed\n", ran - failures, ran);
  return failures == 0 ? 0 : 1;
}

int cmd_fftcheck(const std::string &size, std::size_t trials) {
  const auto d = parse_dims(size);
  if (d.size() != 3)
    throw std::invalid_argument("--size needs three extents, e.g. 4x4x8");
  const auto r = checks::fft_check(d[0], d[1], d[2], trials, 7);
  const bool ok = r.max_abs_error <= 1e-6;
  std::printf("%s fft3d vs direct DFT on %zu cubes of %s: max abs err %.3e "
              "(%.2f s)\n",
              ok ? "ok" : "FAIL", trials, size.c_str(), r.max_abs_error,
              r.seconds);
  return ok ? 0 : 1;
}

int cmd_synth(const fs::path &scenes, const fs::path &out, std::uint64_t seed) {
  std::ifstream in(scenes);
  if (!in)
    throw std::runtime_error("cannot open " + scenes.string());
  const auto set = scene_set_from_json(nlohmann::json::parse(in), seed);
  write_scene_set(set, out);
  std::cout << "wrote " << set.scenes.size() << " cubes and manifest.json to "
            << out.string() << '\n';
  return 0;
}

// Converts a directory tree <input>/<class>/[<distance>/]*.npy of complex
// cubes into RFC1 files plus a manifest. Arrays may be (X, Y, N) or already
// flattened to (X*Y, N); --shape gives the cube extents for the latter.
int cmd_convert(const fs::path &input, const fs::path &out,
                const std::string &shape, const std::string &preset,
                const std::vector<std::string> &unseen_tags) {
  const auto dims = parse_dims(shape);
  if (dims.size() != 3)
    throw std::invalid_argument("--shape needs three extents");
  const Shape cube_shape(dims);
  DatasetManifest m;
  m.shape = dims;
  m.radar = preset == "occluded" ? RadarConfig::occluded()
                                 : RadarConfig::material();
  m.radar->n_tx = dims[0];
  m.radar->n_rx = dims[1];
  m.radar->fast_time_samples = dims[2];
  std::vector<fs::path> class_dirs;
  for (const auto &e : fs::directory_iterator(input))
    if (e.is_directory())
      class_dirs.push_back(e.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty())
    throw std::runtime_error(input.string() + ": no class directories");
  fs::create_directories(out / "cubes");
  const std::set<std::string> unseen(unseen_tags.begin(), unseen_tags.end());
  for (std::size_t c = 0; c < class_dirs.size(); ++c) {
    m.classes.push_back(class_dirs[c].filename().string());
    std::vector<fs::path> files;
    for (const auto &e : fs::recursive_directory_iterator(class_dirs[c]))
      if (e.is_regular_file() && e.path().extension() == ".npy")
        files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto &f : files) {
      auto t = read_npy_complex<float>(f);
      if (t.numel() != cube_shape.numel())
        throw std::runtime_error(f.string() + ": " + t.shape().str() +
                                 " does not hold a " + cube_shape.str() +
                                 " cube");
      t = t.reshaped(cube_shape);
      char name[48];
      std::snprintf(name, sizeof name, "cubes/%06zu.rfc1", m.samples.size());
      write_rfc1(out / name, t);
      ManifestSample s;
      s.path = name;
      s.class_index = c;
      const auto parent = f.parent_path();
      if (parent != class_dirs[c])
        s.distance_tag = parent.filename().string();
      if (unseen.count(s.distance_tag))
        s.split_hint = SplitHint::unseen;
      m.samples.push_back(std::move(s));
    }
  }
  write_manifest(out / "manifest.json", m);
  std::cout << "converted " << m.samples.size() << " samples in "
            << m.classes.size() << " classes\n";
  return 0;
}

template <class T>
int run_benchmark(const TrainConfig &cfg, std::size_t seeds) {
  std::vector<std::uint64_t> s;
  for (std::size_t i = 0; i < seeds; ++i)
    s.push_back(cfg.seed + i);
  const auto r = benchmark_trend<T>(cfg, s);
  std::cout << trend_to_json(r).dump(2) << '\n';
  return 0;
}

} // namespace

int main(int argc, char **argv) {
#if defined(__GLIBC__)
  // retain freed tape memory across training steps
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"radarfuse: complex-valued radar classifiers"};
  app.require_subcommand(1);

  std::string manifest, out, config, model = "fusenet", weights, split,
                                     scenes, size, module = "all";
  std::uint64_t seed = 0;
  std::size_t trials = 1;

  auto *pre = app.add_subcommand("preprocess", "cache IQ and 3D-FFT cubes");
  pre->add_option("--manifest", manifest, "dataset manifest")->required();
  pre->add_option("--out", out, "output directory")->required();

  auto *train = app.add_subcommand("train", "train a model");
  train->add_option("--config", config, "training config JSON")->required();
  train->add_option("--model", model, "baseline or fusenet")
      ->required()
      ->check(CLI::IsMember({"baseline", "fusenet"}));
  train->add_option("--out", out, "output directory")->required();

  auto *eval = app.add_subcommand("eval", "evaluate stored weights");
  eval->add_option("--weights", weights, "checkpoint file")->required();
  eval->add_option("--manifest", manifest, "dataset manifest")->required();
  eval->add_option("--split", split, "test or unseen")
      ->required()
      ->check(CLI::IsMember({"test", "unseen"}));

  auto *synth = app.add_subcommand("synth", "render synthetic scenes");
  synth->add_option("--scenes", scenes, "scene description JSON")->required();
  synth->add_option("--out", out, "output directory")->required();
  synth->add_option("--seed", seed, "random seed")->required();

  auto *grad = app.add_subcommand("gradcheck", "finite-difference checks");
  grad->add_option("--module", module, "ctensor, cnn, fusion, model or all");

  auto *fft = app.add_subcommand("fftcheck", "fft3d vs direct DFT");
  fft->add_option("--size", size, "XxYxN")->required();
  fft->add_option("--trials", trials, "number of random cubes")->required();

  std::string input, shape = "20x20x100", preset = "material";
  std::vector<std::string> unseen_tags;
  auto *conv = app.add_subcommand("convert", "import .npy cubes as RFC1");
  conv->add_option("--input", input, "<root>/<class>/[<distance>/]*.npy")
      ->required();
  conv->add_option("--out", out, "output directory")->required();
  conv->add_option("--shape", shape, "cube extents XxYxN");
  conv->add_option("--radar", preset, "material or occluded")
      ->check(CLI::IsMember({"material", "occluded"}));
  conv->add_option("--unseen", unseen_tags,
                   "distance directories to hold out as the unseen split");

  std::size_t seeds = 5;
  auto *bench = app.add_subcommand("benchmark", "paired distance-shift run");
  bench->add_option("--config", config, "training config JSON")->required();
  bench->add_option("--seeds", seeds, "number of seeds (>= 3)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*pre)
      return cmd_preprocess(manifest, out);
    if (*train) {
      const auto cfg = read_train_config(config);
      const auto kind = parse_model_kind(model);
      return cfg.precision == "float"
                 ? run_train<float>(cfg, config, kind, out)
                 : run_train<double>(cfg, config, kind, out);
    }
    if (*eval) {
      const auto ck = decode_checkpoint<double>(read_file_bytes(weights));
      return ck.extra.value("precision", std::string("double")) == "float"
                 ? run_eval<float>(weights, manifest, split)
                 : run_eval<double>(weights, manifest, split);
    }
    if (*synth)
      return cmd_synth(scenes, out, seed);
    if (*grad)
      return cmd_gradcheck(module);
    if (*fft)
      return cmd_fftcheck(size, trials);
    if (*conv)
      return cmd_convert(input, out, shape, preset, unseen_tags);
    if (*bench) {
      const auto cfg = read_train_config(config);
      return cfg.precision == "float" ? run_benchmark<float>(cfg, seeds)
                                      : run_benchmark<double>(cfg, seeds);
    }
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
