#pragma once

// Model checkpoint file (little endian):
//   "RFNC" | u32 version | u32 meta_len | meta JSON (model spec + extras)
//   u32 tensor_count, then per tensor:
//     u32 name_len | name | u32 flags (bit0 complex, bit1 trainable)
//     u32 rank | u32 extents[rank] | f32 re plane | f32 im plane if complex

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rfn/io.hpp"
#include "rfn/model.hpp"

namespace rfn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T> struct Checkpoint {
  Model<T> model;
  nlohmann::json extra; // classes, preprocessing and split settings
};

template <class T>
std::vector<std::uint8_t> encode_checkpoint(const Model<T> &model,
                                            const nlohmann::json &extra) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'R', 'F', 'N', 'C'});
  le::put_u32(out, kCheckpointVersion);
  const nlohmann::json meta = {{"model", model_spec_to_json(model.spec)},
                               {"extra", extra}};
  const std::string meta_s = meta.dump();
  le::put_u32(out, static_cast<std::uint32_t>(meta_s.size()));
  out.insert(out.end(), meta_s.begin(), meta_s.end());
  le::put_u32(out, static_cast<std::uint32_t>(model.params.size()));
  for (const auto &e : model.params) {
    le::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    const bool cx = is_complex(e.value);
    le::put_u32(out, (cx ? 1u : 0u) | (e.trainable ? 2u : 0u));
    const Shape &s = shape_of(e.value);
    le::put_u32(out, static_cast<std::uint32_t>(s.rank()));
    for (auto d : s.dims())
      le::put_u32(out, static_cast<std::uint32_t>(d));
    if (cx) {
      const auto &c = std::get<ComplexTensor<T>>(e.value);
      for (T v : c.re())
        le::put_f32(out, static_cast<float>(v));
      for (T v : c.im())
        le::put_f32(out, static_cast<float>(v));
    } else {
      for (T v : std::get<RealTensor<T>>(e.value).data())
        le::put_f32(out, static_cast<float>(v));
    }
  }
  return out;
}

template <class T>
Checkpoint<T> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  le::Reader r(bytes);
  if (r.str(4) != "RFNC")
    throw std::runtime_error("not a checkpoint (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " +
                             std::to_string(version));
  const auto meta = nlohmann::json::parse(r.str(r.u32()));
  Checkpoint<T> ck;
  ck.extra = meta.value("extra", nlohmann::json::object());
  ck.model = make_model<T>(model_spec_from_json(meta.at("model")), 0);
  auto &store = ck.model.params;
  const std::size_t count = r.u32();
  if (count != store.size())
    throw std::runtime_error("checkpoint holds " + std::to_string(count) +
                             " tensors, model expects " +
                             std::to_string(store.size()));
  for (std::size_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u32());
    const auto flags = r.u32();
    const std::size_t rank = r.u32();
    std::vector<std::size_t> dims(rank);
    for (auto &d : dims)
      d = r.u32();
    const Shape shape(dims);
    auto &e = store[i];
    if (e.name != name)
      throw std::runtime_error("checkpoint tensor " + std::to_string(i) +
                               " is '" + name + "', expected '" + e.name + "'");
    const bool cx = (flags & 1u) != 0;
    if (cx != is_complex(e.value) || !(shape == shape_of(e.value)))
      throw std::runtime_error("checkpoint tensor '" + name + "' has shape " +
                               shape.str() + ", expected " +
                               shape_of(e.value).str());
    e.trainable = (flags & 2u) != 0;
    const std::size_t n = shape.numel();
    std::vector<T> re(n);
    for (auto &v : re)
      v = static_cast<T>(r.f32());
    if (cx) {
      std::vector<T> im(n);
      for (auto &v : im)
        v = static_cast<T>(r.f32());
      e.value = ComplexTensor<T>(shape, std::move(re), std::move(im));
    } else {
      e.value = RealTensor<T>(shape, std::move(re));
    }
  }
  if (r.remaining() != 0)
    throw std::runtime_error("trailing bytes after checkpoint payload");
  return ck;
}

template <class T>
void save_checkpoint(const std::filesystem::path &path, const Model<T> &model,
                     const nlohmann::json &extra = nlohmann::json::object()) {
  write_file_bytes(path, encode_checkpoint(model, extra));
}

template <class T>
Checkpoint<T> load_checkpoint(const std::filesystem::path &path) {
  try {
    return decode_checkpoint<T>(read_file_bytes(path));
  } catch (const std::exception &e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

} // namespace rfn
