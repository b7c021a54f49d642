#pragma once

// Mixed-radix decimation-in-time FFT for arbitrary lengths. A stage of prime
// radix p evaluates its p-point butterflies directly, so prime lengths reduce
// to a plain DFT.

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

namespace rfn {

/// Prime factors of n in ascending order (with multiplicity).
inline std::vector<std::size_t> prime_factors(std::size_t n) {
  std::vector<std::size_t> f;
  for (std::size_t p = 2; p * p <= n; ++p)
    while (n % p == 0) {
      f.push_back(p);
      n /= p;
    }
  if (n > 1)
    f.push_back(n);
  return f;
}

/// Precomputed transform of one length. Reusable across calls.
template <class T> class FftPlan {
public:
  using cplx = std::complex<T>;

  explicit FftPlan(std::size_t n) : n_(n), factors_(prime_factors(n)) {
    if (n == 0)
      throw std::invalid_argument("FftPlan: length must be positive");
    twiddle_.resize(n);
    for (std::size_t e = 0; e < n; ++e) {
      const long double ang = -2.0L * std::numbers::pi_v<long double> *
                              static_cast<long double>(e) /
                              static_cast<long double>(n);
      twiddle_[e] = cplx(static_cast<T>(std::cos(ang)),
                         static_cast<T>(std::sin(ang)));
    }
    scratch_.resize(n);
  }

  [[nodiscard]] std::size_t size() const { return n_; }

  /// In-place unnormalized forward transform X[k] = sum x[n] e^{-j2pi kn/N}.
  void forward(std::span<cplx> data) {
    if (data.size() != n_)
      throw std::invalid_argument("FftPlan: buffer length mismatch");
    if (n_ == 1)
      return;
    std::copy(data.begin(), data.end(), scratch_.begin());
    transform(scratch_.data(), 1, data.data(), n_, 0);
  }

private:
  // out[0..n) = DFT_n of in[0], in[stride], ..., using factors_[level..].
  void transform(const cplx *in, std::size_t stride, cplx *out, std::size_t n,
                 std::size_t level) {
    if (n == 1) {
      out[0] = in[0];
      return;
    }
    const std::size_t p = factors_[level];
    const std::size_t m = n / p;
    for (std::size_t q = 0; q < p; ++q)
      transform(in + q * stride, stride * p, out + q * m, m, level + 1);

    // Twiddle step in the full-length table: W_n^e = W_N^{e * N/n}.
    const std::size_t tstep = n_ / n;
    const std::size_t pstep = n_ / p;
    cplx local[64];
    std::vector<cplx> big;
    cplx *tmp = local;
    if (p > 64) {
      big.resize(p);
      tmp = big.data();
    }
    for (std::size_t k = 0; k < m; ++k) {
      for (std::size_t q = 0; q < p; ++q)
        tmp[q] = out[q * m + k] * twiddle_[(q * k * tstep) % n_];
      for (std::size_t r = 0; r < p; ++r) {
        cplx acc = tmp[0];
        for (std::size_t q = 1; q < p; ++q)
          acc += tmp[q] * twiddle_[((q * r) % p) * pstep];
        out[r * m + k] = acc;
      }
    }
  }

  std::size_t n_;
  std::vector<std::size_t> factors_;
  std::vector<cplx> twiddle_;
  std::vector<cplx> scratch_;
};

/// Unnormalized forward FFT along one axis of a row-major 3D complex array.
template <class T>
void fft_axis(std::span<std::complex<T>> data, std::size_t X, std::size_t Y,
              std::size_t N, int axis) {
  const std::size_t len = axis == 0 ? X : axis == 1 ? Y : N;
  const std::size_t stride = axis == 0 ? Y * N : axis == 1 ? N : 1;
  FftPlan<T> plan(len);
  std::vector<std::complex<T>> line(len);
  const std::size_t outer = X * Y * N / len;
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t base;
    if (axis == 2)
      base = o * N;
    else if (axis == 1)
      base = (o / N) * Y * N + (o % N);
    else
      base = o;
    for (std::size_t i = 0; i < len; ++i)
      line[i] = data[base + i * stride];
    plan.forward(line);
    for (std::size_t i = 0; i < len; ++i)
      data[base + i * stride] = line[i];
  }
}

} // namespace rfn
