#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include "cante/nn/layers.hpp"

namespace cante::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

/// Named tensor table stored as: "CKPT", u32 version, u32 count, then per
/// entry u32 name length, name, u8 dtype (0 float32, 1 float64), u32 rank,
/// i64 dims, raw values.
using TensorTable = std::map<std::string, Tensor<double>>;

namespace detail {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError("checkpoint truncated");
  return v;
}

}  // namespace detail

inline void save_tensor_table(const std::string& path, const TensorTable& table, bool as_float32) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path);
  os.write("CKPT", 4);
  detail::put<std::uint32_t>(os, 1);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(table.size()));
  for (const auto& [name, t] : table) {
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put<std::uint8_t>(os, as_float32 ? 0 : 1);
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.ndim()));
    for (Index d : t.shape()) detail::put<std::int64_t>(os, d);
    for (Index i = 0; i < t.size(); ++i) {
      if (as_float32) {
        detail::put<float>(os, static_cast<float>(t[i]));
      } else {
        detail::put<double>(os, t[i]);
      }
    }
  }
  if (!os) throw IoError("failed writing checkpoint " + path);
}

inline TensorTable load_tensor_table(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "CKPT", 4) != 0) {
    throw FormatError(path + " is not a checkpoint");
  }
  if (detail::get<std::uint32_t>(is) != 1) throw FormatError("unsupported checkpoint version");
  const auto count = detail::get<std::uint32_t>(is);
  TensorTable table;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto len = detail::get<std::uint32_t>(is);
    if (len > 4096) throw FormatError("checkpoint entry name too long");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw FormatError("checkpoint truncated");
    const auto dtype = detail::get<std::uint8_t>(is);
    if (dtype > 1) throw FormatError("unknown checkpoint dtype");
    const auto rank = detail::get<std::uint32_t>(is);
    if (rank > 8) throw FormatError("checkpoint tensor rank too large");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = detail::get<std::int64_t>(is);
      if (dim < 0) throw FormatError("negative checkpoint dimension");
      shape.push_back(dim);
    }
    Tensor<double> t(shape);
    for (Index i = 0; i < t.size(); ++i) {
      t[i] = dtype == 0 ? static_cast<double>(detail::get<float>(is)) : detail::get<double>(is);
    }
    table.emplace(std::move(name), std::move(t));
  }
  return table;
}

/// Parameters and buffers of a module, keyed by their dotted names.
template <typename Scalar>
TensorTable state_of(const Module<Scalar>& module) {
  TensorTable table;
  for (const auto& [name, v] : module.named_parameters()) table[name] = v.value().template cast<double>();
  for (const auto& [name, b] : module.named_buffers()) table[name] = b->template cast<double>();
  return table;
}

/// Copies a table into a module. Every entry must match by name and shape.
template <typename Scalar>
void load_state(Module<Scalar>& module, const TensorTable& table) {
  std::size_t used = 0;
  auto fetch = [&](const std::string& name, const Shape& shape) -> const Tensor<double>& {
    auto it = table.find(name);
    if (it == table.end()) throw FormatError("checkpoint lacks tensor " + name);
    if (it->second.shape() != shape) {
      throw FormatError("checkpoint tensor " + name + " has shape " +
                        shape_string(it->second.shape()) + ", expected " + shape_string(shape));
    }
    ++used;
    return it->second;
  };
  for (auto& [name, v] : module.named_parameters()) {
    Var<Scalar> handle = v;
    handle.mutable_value() = fetch(name, v.shape()).template cast<Scalar>();
  }
  for (auto& [name, b] : module.named_buffers()) *b = fetch(name, b->shape()).template cast<Scalar>();
  if (used != table.size()) throw FormatError("checkpoint has tensors the model does not");
}

}  // namespace cante::nn
