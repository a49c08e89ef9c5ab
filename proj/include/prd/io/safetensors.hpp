#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "prd/errors.hpp"

// Reader/writer for the safetensors container: an 8-byte little-endian
// header length, a JSON header mapping tensor names to dtype, shape and byte
// range (plus an optional "__metadata__" string map), then raw little-endian
// tensor bytes.

namespace prd::io {

enum class DType { kF32, kF64, kI64 };

inline std::string dtype_name(DType d) {
  switch (d) {
    case DType::kF32: return "F32";
    case DType::kF64: return "F64";
    case DType::kI64: return "I64";
  }
  return "?";
}

inline std::size_t dtype_size(DType d) { return d == DType::kF32 ? 4 : 8; }

struct TensorBlob {
  DType dtype = DType::kF32;
  std::vector<std::int64_t> shape;
  std::vector<std::uint8_t> bytes;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : shape) n *= static_cast<std::size_t>(d);
    return n;
  }

  template <typename T>
  static TensorBlob from(std::vector<std::int64_t> shape, const T* data, std::size_t count) {
    TensorBlob b;
    if constexpr (std::is_same_v<T, float>)
      b.dtype = DType::kF32;
    else if constexpr (std::is_same_v<T, double>)
      b.dtype = DType::kF64;
    else
      b.dtype = DType::kI64;
    b.shape = std::move(shape);
    b.bytes.resize(count * sizeof(T));
    std::memcpy(b.bytes.data(), data, b.bytes.size());
    return b;
  }

  /// Converts to T, accepting F32 or F64 storage for floating T.
  template <typename T>
  std::vector<T> as() const {
    const std::size_t n = element_count();
    std::vector<T> out(n);
    if (dtype == DType::kF32) {
      const auto* p = reinterpret_cast<const float*>(bytes.data());
      for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<T>(p[i]);
    } else if (dtype == DType::kF64) {
      const auto* p = reinterpret_cast<const double*>(bytes.data());
      for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<T>(p[i]);
    } else {
      const auto* p = reinterpret_cast<const std::int64_t*>(bytes.data());
      for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<T>(p[i]);
    }
    return out;
  }
};

struct TensorFile {
  std::map<std::string, std::string> metadata;
  std::map<std::string, TensorBlob> tensors;
};

inline void write_safetensors(const std::filesystem::path& path, const TensorFile& file) {
  nlohmann::json header = nlohmann::json::object();
  if (!file.metadata.empty()) header["__metadata__"] = file.metadata;
  std::size_t offset = 0;
  for (const auto& [name, t] : file.tensors) {
    header[name] = {{"dtype", dtype_name(t.dtype)},
                    {"shape", t.shape},
                    {"data_offsets", {offset, offset + t.bytes.size()}}};
    offset += t.bytes.size();
  }
  std::string text = header.dump();
  while ((text.size() + 8) % 8 != 0) text.push_back(' ');
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  std::uint64_t len = text.size();
  unsigned char le[8];
  for (int i = 0; i < 8; ++i) le[i] = static_cast<unsigned char>(len >> (8 * i));
  out.write(reinterpret_cast<const char*>(le), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : file.tensors) {
    out.write(reinterpret_cast<const char*>(t.bytes.data()), static_cast<std::streamsize>(t.bytes.size()));
  }
  if (!out) throw FormatError("short write to " + path.string());
}

inline TensorFile read_safetensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  unsigned char le[8];
  if (!in.read(reinterpret_cast<char*>(le), 8)) throw FormatError(path.string() + ": truncated header");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(le[i]) << (8 * i);
  if (len > (1u << 30)) throw FormatError(path.string() + ": implausible header length");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError(path.string() + ": truncated header");
  std::vector<std::uint8_t> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad header: " + e.what());
  }
  TensorFile file;
  for (auto it = header.begin(); it != header.end(); ++it) {
    if (it.key() == "__metadata__") {
      for (auto m = it->begin(); m != it->end(); ++m) file.metadata[m.key()] = m->get<std::string>();
      continue;
    }
    const auto& spec = *it;
    TensorBlob t;
    const std::string dt = spec.at("dtype").get<std::string>();
    if (dt == "F32")
      t.dtype = DType::kF32;
    else if (dt == "F64")
      t.dtype = DType::kF64;
    else if (dt == "I64")
      t.dtype = DType::kI64;
    else
      throw FormatError(path.string() + ": tensor " + it.key() + " has unsupported dtype " + dt);
    t.shape = spec.at("shape").get<std::vector<std::int64_t>>();
    const auto off = spec.at("data_offsets").get<std::vector<std::size_t>>();
    if (off.size() != 2 || off[1] < off[0] || off[1] > payload.size() ||
        off[1] - off[0] != t.element_count() * dtype_size(t.dtype)) {
      throw FormatError(path.string() + ": tensor " + it.key() + " has inconsistent byte range");
    }
    t.bytes.assign(payload.begin() + static_cast<std::ptrdiff_t>(off[0]),
                   payload.begin() + static_cast<std::ptrdiff_t>(off[1]));
    file.tensors.emplace(it.key(), std::move(t));
  }
  return file;
}

}  // namespace prd::io
