#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rfn/fft.hpp"
#include "rfn/tensor.hpp"

namespace rfn {

inline constexpr double kSpeedOfLight = 299'792'458.0;

/// Acquisition parameters of an FMCW MIMO sensor. Only bandwidth, centre
/// frequency and the array/sample counts affect the synthetic generator;
/// EIRP is metadata.
struct RadarConfig {
  double center_frequency = 65.5e9;
  double bandwidth = 5e9;
  double eirp_dbm = -5.0;
  std::size_t n_tx = 20;
  std::size_t n_rx = 20;
  std::size_t fast_time_samples = 100;

  void validate() const {
    if (!(bandwidth > 0))
      throw std::invalid_argument("RadarConfig: bandwidth must be positive");
    if (!(center_frequency > 0))
      throw std::invalid_argument(
          "RadarConfig: center frequency must be positive");
    if (fast_time_samples < 2)
      throw std::invalid_argument(
          "RadarConfig: need at least 2 fast-time samples");
    if (n_tx == 0 || n_rx == 0)
      throw std::invalid_argument("RadarConfig: antenna counts must be >= 1");
  }

  [[nodiscard]] double range_resolution() const {
    return kSpeedOfLight / (2.0 * bandwidth);
  }
  /// Largest range whose beat frequency does not alias on the complex
  /// fast-time grid.
  [[nodiscard]] double max_unambiguous_range() const {
    return range_resolution() * static_cast<double>(fast_time_samples);
  }
  [[nodiscard]] Shape cube_shape() const {
    return Shape{n_tx, n_rx, fast_time_samples};
  }

  static RadarConfig material() { return {}; }
  static RadarConfig occluded() {
    RadarConfig c;
    c.center_frequency = 64e9;
    c.bandwidth = 4e9;
    return c;
  }
};

/// One single-chirp measurement s(x, y, n): Tx index, Rx index, fast time.
template <class T> struct RadarCube {
  ComplexTensor<T> data;
  RadarConfig config;

  RadarCube() = default;
  RadarCube(ComplexTensor<T> d, RadarConfig c)
      : data(std::move(d)), config(c) {
    validate();
  }

  void validate() const {
    if (data.shape().rank() != 3)
      throw std::invalid_argument("RadarCube: expected rank-3 data, got " +
                                  data.shape().str());
    if (!data.all_finite())
      throw std::invalid_argument("RadarCube: non-finite sample");
  }
};

/// Range/azimuth/elevation spectrum S(l, m, k), same shape as its source.
template <class T> struct SpectrumCube {
  ComplexTensor<T> data;
};

/// S(l,m,k) = sum_x sum_y sum_n s(x,y,n) e^{-j2pi(lx/X + my/Y + kn/N)}.
/// Unnormalized.
template <class T> SpectrumCube<T> fft3d(const ComplexTensor<T> &cube) {
  const Shape &s = cube.shape();
  if (s.rank() != 3)
    throw std::invalid_argument("fft3d: expected a rank-3 cube, got " +
                                s.str());
  if (!cube.all_finite())
    throw std::invalid_argument("fft3d: non-finite input");
  const std::size_t X = s[0], Y = s[1], N = s[2];
  std::vector<std::complex<T>> buf(cube.numel());
  for (std::size_t i = 0; i < buf.size(); ++i)
    buf[i] = cube.at(i);
  fft_axis<T>(buf, X, Y, N, 2);
  fft_axis<T>(buf, X, Y, N, 1);
  fft_axis<T>(buf, X, Y, N, 0);
  return {ComplexTensor<T>::from_complex(s, buf)};
}

template <class T> SpectrumCube<T> fft3d(const RadarCube<T> &cube) {
  return fft3d(cube.data);
}

/// (X, Y, N) -> (X*Y, N); row r = x*Y + y carries channel (x, y).
template <class T>
ComplexTensor<T> flatten_channels(const ComplexTensor<T> &cube) {
  const Shape &s = cube.shape();
  if (s.rank() != 3)
    throw std::invalid_argument("flatten_channels: expected rank 3, got " +
                                s.str());
  return cube.reshaped(Shape{s[0] * s[1], s[2]});
}

template <class T>
ComplexTensor<T> unflatten_channels(const ComplexTensor<T> &m, std::size_t X,
                                    std::size_t Y) {
  const Shape &s = m.shape();
  if (s.rank() != 2 || s[0] != X * Y)
    throw std::invalid_argument("unflatten_channels: cannot unflatten " +
                                s.str() + " into " + std::to_string(X) + "x" +
                                std::to_string(Y) + " channels");
  return m.reshaped(Shape{X, Y, s[1]});
}

/// Scales so the largest magnitude is 1. All-zero input is returned as is.
template <class T> ComplexTensor<T> normalize_max_abs(ComplexTensor<T> t) {
  T peak{};
  for (std::size_t i = 0; i < t.numel(); ++i)
    peak = std::max(peak, std::abs(t.at(i)));
  if (peak > T{0}) {
    const T inv = T{1} / peak;
    for (auto &v : t.re())
      v *= inv;
    for (auto &v : t.im())
      v *= inv;
  }
  return t;
}

/// The two network inputs for one cube: raw IQ and its spectrum, each
/// flattened to (X*Y, N).
template <class T> struct BranchInputs {
  ComplexTensor<T> iq;
  ComplexTensor<T> spectrum;
};

template <class T>
BranchInputs<T> prepare_inputs(const ComplexTensor<T> &cube, bool normalize) {
  auto iq = flatten_channels(cube);
  auto sp = flatten_channels(fft3d(cube).data);
  if (normalize) {
    iq = normalize_max_abs(std::move(iq));
    sp = normalize_max_abs(std::move(sp));
  }
  return {std::move(iq), std::move(sp)};
}

struct Reflector {
  double range = 1.0;     // metres
  double azimuth = 0.0;   // radians, steers along the Tx axis
  double elevation = 0.0; // radians, steers along the Rx axis
  std::complex<double> reflectivity{1.0, 0.0};
};

struct SyntheticScene {
  std::vector<Reflector> reflectors;
  double noise_level = 0.0; // complex noise std relative to unit reflectivity
  std::uint64_t seed = 0;
};

/// Fractional FFT bins (l, m, k) at which a reflector's energy concentrates.
struct BinLocation {
  double l, m, k;
};

inline BinLocation predicted_bins(const Reflector &r, const RadarConfig &c) {
  auto wrap = [](double v, double n) {
    double w = std::fmod(v, n);
    return w < 0 ? w + n : w;
  };
  const double X = static_cast<double>(c.n_tx);
  const double Y = static_cast<double>(c.n_rx);
  return {wrap(X * std::sin(r.azimuth) / 2.0, X),
          wrap(Y * std::sin(r.elevation) / 2.0, Y),
          r.range / c.range_resolution()};
}

/// Point-target FMCW cube. Each reflector contributes
///   a * e^{j4pi fc R / c} * e^{j2pi n R/(dR N)} * e^{j pi x sin(az)}
///     * e^{j pi y sin(el)}
/// for a half-wavelength virtual array, plus complex Gaussian noise.
template <class T>
RadarCube<T> synth_fmcw_cube(const SyntheticScene &scene,
                             const RadarConfig &config) {
  config.validate();
  const double rmax = config.max_unambiguous_range();
  for (const auto &r : scene.reflectors)
    if (!(r.range > 0) || !(r.range < rmax))
      throw std::invalid_argument(
          "synth_fmcw_cube: reflector range " + std::to_string(r.range) +
          " m outside (0, " + std::to_string(rmax) + ") m");
  if (!(scene.noise_level >= 0))
    throw std::invalid_argument("synth_fmcw_cube: negative noise level");

  const std::size_t X = config.n_tx, Y = config.n_rx,
                    N = config.fast_time_samples;
  const double two_pi = 2.0 * std::numbers::pi;
  std::vector<std::complex<double>> acc(X * Y * N);
  for (const auto &r : scene.reflectors) {
    const std::complex<double> a =
        r.reflectivity *
        std::polar(1.0, two_pi * 2.0 * config.center_frequency * r.range /
                            kSpeedOfLight);
    const double fb = r.range / (config.range_resolution() *
                                 static_cast<double>(N));
    const double px = std::numbers::pi * std::sin(r.azimuth);
    const double py = std::numbers::pi * std::sin(r.elevation);
    for (std::size_t x = 0; x < X; ++x)
      for (std::size_t y = 0; y < Y; ++y) {
        const std::complex<double> sp =
            a * std::polar(1.0, px * static_cast<double>(x) +
                                    py * static_cast<double>(y));
        for (std::size_t n = 0; n < N; ++n)
          acc[(x * Y + y) * N + n] +=
              sp * std::polar(1.0, two_pi * fb * static_cast<double>(n));
      }
  }
  if (scene.noise_level > 0) {
    std::mt19937_64 rng(scene.seed);
    std::normal_distribution<double> dist(0.0, scene.noise_level /
                                                   std::numbers::sqrt2);
    for (auto &v : acc)
      v += std::complex<double>(dist(rng), dist(rng));
  }
  ComplexTensor<T> data(config.cube_shape());
  for (std::size_t i = 0; i < acc.size(); ++i)
    data.set(i, std::complex<T>(static_cast<T>(acc[i].real()),
                                static_cast<T>(acc[i].imag())));
  return RadarCube<T>(std::move(data), config);
}

} // namespace rfn
