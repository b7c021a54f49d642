#pragma once

// Minimal NumPy .npy reader for complex cubes (format versions 1-3).
// Accepts little-endian complex64 / complex128 arrays, or float32 / float64
// arrays whose trailing axis of length 2 holds (re, im). C order only.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <regex>
#include <stdexcept>
#include <string>
#include <vector>

#include "rfn/io.hpp"
#include "rfn/tensor.hpp"

namespace rfn {

struct NpyHeader {
  std::string descr;
  bool fortran_order = false;
  std::vector<std::size_t> shape;
  std::size_t data_offset = 0;
};

inline NpyHeader parse_npy_header(std::span<const std::uint8_t> b) {
  if (b.size() < 10 || std::memcmp(b.data(), "\x93NUMPY", 6) != 0)
    throw std::runtime_error("not a .npy file");
  const int major = b[6];
  std::size_t len = 0, start = 0;
  if (major == 1) {
    len = b[8] | (b[9] << 8);
    start = 10;
  } else if (major == 2 || major == 3) {
    if (b.size() < 12)
      throw std::runtime_error("truncated .npy header");
    len = b[8] | (b[9] << 8) | (b[10] << 16) |
          (static_cast<std::size_t>(b[11]) << 24);
    start = 12;
  } else {
    throw std::runtime_error("unsupported .npy version " +
                             std::to_string(major));
  }
  if (b.size() < start + len)
    throw std::runtime_error("truncated .npy header");
  const std::string h(reinterpret_cast<const char *>(b.data() + start), len);
  NpyHeader out;
  out.data_offset = start + len;
  std::smatch m;
  if (!std::regex_search(h, m, std::regex(R"('descr'\s*:\s*'([^']+)')")))
    throw std::runtime_error(".npy header has no descr");
  out.descr = m[1];
  out.fortran_order =
      std::regex_search(h, std::regex(R"('fortran_order'\s*:\s*True)"));
  if (!std::regex_search(h, m, std::regex(R"('shape'\s*:\s*\(([^)]*)\))")))
    throw std::runtime_error(".npy header has no shape");
  const std::string dims = m[1];
  const std::regex num(R"(\d+)");
  for (auto it = std::sregex_iterator(dims.begin(), dims.end(), num);
       it != std::sregex_iterator(); ++it)
    out.shape.push_back(std::stoull(it->str()));
  return out;
}

template <class T>
ComplexTensor<T> decode_npy_complex(std::span<const std::uint8_t> b) {
  const NpyHeader h = parse_npy_header(b);
  if (h.fortran_order)
    throw std::runtime_error(".npy: Fortran order is not supported");
  std::vector<std::size_t> shape = h.shape;
  std::size_t width = 0;
  if (h.descr == "<c8" || h.descr == "<c16") {
    width = h.descr == "<c8" ? 4 : 8;
  } else if (h.descr == "<f4" || h.descr == "<f8") {
    width = h.descr == "<f4" ? 4 : 8;
    if (shape.empty() || shape.back() != 2)
      throw std::runtime_error(".npy: real array needs a trailing axis of 2");
    shape.pop_back();
  } else {
    throw std::runtime_error(".npy: unsupported dtype " + h.descr);
  }
  if (shape.empty())
    throw std::runtime_error(".npy: scalar arrays are not supported");
  ComplexTensor<T> t{Shape(shape)};
  const std::size_t n = t.numel();
  if (b.size() - h.data_offset != 2 * n * width)
    throw std::runtime_error(".npy: payload size does not match shape");
  const std::uint8_t *p = b.data() + h.data_offset;
  auto read = [&](std::size_t i) -> double {
    if (width == 4) {
      std::uint32_t u;
      std::memcpy(&u, p + i * 4, 4);
      return std::bit_cast<float>(u);
    }
    std::uint64_t u;
    std::memcpy(&u, p + i * 8, 8);
    return std::bit_cast<double>(u);
  };
  for (std::size_t i = 0; i < n; ++i) {
    t.re()[i] = static_cast<T>(read(2 * i));
    t.im()[i] = static_cast<T>(read(2 * i + 1));
  }
  return t;
}

template <class T>
ComplexTensor<T> read_npy_complex(const std::filesystem::path &path) {
  try {
    return decode_npy_complex<T>(read_file_bytes(path));
  } catch (const std::exception &e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

} // namespace rfn
