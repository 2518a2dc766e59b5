/*
 * Copyright (c) 2026 The SSU Lab Authors
 *
 * Licensed under the Apache License, Version 2.0;
 * You may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an 'AS IS' BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Tensor container shared by checkpoints, score files and mask files.
//
// Layout: one line of UTF-8 JSON terminated by '\n', then the raw blobs in
// manifest order. The header is
//   {"format_version": 1, "kind": "checkpoint"|"scores"|"mask", ...metadata,
//    "manifest": {name: {"kind", "dtype", "shape", "offset", "nbytes"}}}
// where offsets are relative to the first byte after the newline. Numeric
// blobs are little-endian IEEE-754 (f32/f64) or unsigned bytes (u8).

#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <fstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssu/tensor.hpp"

namespace ssu {

using json = nlohmann::ordered_json;

inline constexpr int kFormatVersion = 1;

/// I/O or format failure while reading/writing an artifact.
class ArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<T, float>) return "f32";
  else if constexpr (std::is_same_v<T, double>) return "f64";
  else if constexpr (std::is_same_v<T, std::uint8_t>) return "u8";
  else static_assert(sizeof(T) == 0, "unsupported blob dtype");
}

inline std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f32") return 4;
  if (dtype == "f64") return 8;
  if (dtype == "u8") return 1;
  throw ArtifactError("unknown dtype '" + dtype + "'");
}

/// Serializes values as little-endian bytes regardless of host order.
template <typename T>
void append_le(std::vector<std::uint8_t>& out, std::span<const T> values) {
  const std::size_t start = out.size();
  out.resize(start + values.size() * sizeof(T));
  if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
    std::memcpy(out.data() + start, values.data(), values.size() * sizeof(T));
  } else {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const U bits = std::bit_cast<U>(values[i]);
      for (std::size_t b = 0; b < sizeof(T); ++b) out[start + i * sizeof(T) + b] = static_cast<std::uint8_t>(bits >> (8 * b));
    }
  }
}

template <typename T>
std::vector<T> decode_le(const std::uint8_t* bytes, std::size_t count) {
  std::vector<T> out(count);
  if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
    std::memcpy(out.data(), bytes, count * sizeof(T));
  } else {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    for (std::size_t i = 0; i < count; ++i) {
      U bits = 0;
      for (std::size_t b = 0; b < sizeof(T); ++b) bits |= static_cast<U>(bytes[i * sizeof(T) + b]) << (8 * b);
      out[i] = std::bit_cast<T>(bits);
    }
  }
  return out;
}

struct Blob {
  std::string name;
  std::string kind;  // parameter kind of the tensor this blob describes
  std::string dtype;
  Shape shape;
  std::vector<std::uint8_t> bytes;

  template <typename T>
  static Blob from_tensor(std::string name, std::string kind, const Tensor<T>& t) {
    Blob b{std::move(name), std::move(kind), dtype_name<T>(), t.shape(), {}};
    append_le<T>(b.bytes, t.data());
    return b;
  }

  template <typename T>
  Tensor<T> to_tensor() const {
    if (dtype != dtype_name<T>()) {
      throw ArtifactError("blob '" + name + "' has dtype " + dtype + ", expected " + dtype_name<T>());
    }
    const std::size_t n = shape_numel(shape);
    if (bytes.size() != n * sizeof(T)) throw ArtifactError("blob '" + name + "' has inconsistent size");
    return Tensor<T>(shape, decode_le<T>(bytes.data(), n));
  }
};

struct Container {
  std::string kind;  // checkpoint | scores | mask
  json meta = json::object();
  std::vector<Blob> blobs;

  const Blob& blob(const std::string& name) const {
    for (const auto& b : blobs) {
      if (b.name == name) return b;
    }
    throw ArtifactError("container has no entry '" + name + "'");
  }
};

inline std::vector<std::uint8_t> encode_container(const Container& c) {
  json header;
  header["format_version"] = kFormatVersion;
  header["kind"] = c.kind;
  for (auto it = c.meta.begin(); it != c.meta.end(); ++it) {
    if (it.key() == "manifest" || it.key() == "kind" || it.key() == "format_version") {
      throw ArtifactError("metadata key '" + it.key() + "' is reserved");
    }
    header[it.key()] = it.value();
  }
  json manifest = json::object();
  std::size_t offset = 0;
  for (const auto& b : c.blobs) {
    if (manifest.contains(b.name)) throw ArtifactError("duplicate container entry '" + b.name + "'");
    manifest[b.name] = {{"kind", b.kind}, {"dtype", b.dtype}, {"shape", b.shape}, {"offset", offset},
                        {"nbytes", b.bytes.size()}};
    offset += b.bytes.size();
  }
  header["manifest"] = std::move(manifest);
  const std::string text = header.dump() + "\n";
  std::vector<std::uint8_t> out(text.begin(), text.end());
  out.reserve(out.size() + offset);
  for (const auto& b : c.blobs) out.insert(out.end(), b.bytes.begin(), b.bytes.end());
  return out;
}

inline Container decode_container(const std::vector<std::uint8_t>& bytes) {
  const auto nl = std::find(bytes.begin(), bytes.end(), std::uint8_t{'\n'});
  if (nl == bytes.end()) throw ArtifactError("container header is not newline-terminated");
  json header;
  try {
    header = json::parse(bytes.begin(), nl);
  } catch (const json::parse_error& e) {
    throw ArtifactError(std::string("container header is not valid JSON: ") + e.what());
  }
  if (header.value("format_version", 0) != kFormatVersion) throw ArtifactError("unsupported container format_version");
  Container c;
  c.kind = header.at("kind").get<std::string>();
  const std::size_t base = static_cast<std::size_t>(nl - bytes.begin()) + 1;
  for (const auto& [name, entry] : header.at("manifest").items()) {
    Blob b;
    b.name = name;
    b.kind = entry.at("kind").get<std::string>();
    b.dtype = entry.at("dtype").get<std::string>();
    b.shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto nbytes = entry.at("nbytes").get<std::size_t>();
    if (nbytes != shape_numel(b.shape) * dtype_size(b.dtype)) throw ArtifactError("entry '" + name + "' size mismatch");
    if (base + offset + nbytes > bytes.size()) throw ArtifactError("container truncated at entry '" + name + "'");
    b.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(base + offset),
                   bytes.begin() + static_cast<std::ptrdiff_t>(base + offset + nbytes));
    c.blobs.push_back(std::move(b));
  }
  for (auto it = header.begin(); it != header.end(); ++it) {
    if (it.key() != "format_version" && it.key() != "kind" && it.key() != "manifest") c.meta[it.key()] = it.value();
  }
  return c;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open '" + path.string() + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArtifactError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ArtifactError("write to '" + path.string() + "' failed");
}

inline void write_container(const std::filesystem::path& path, const Container& c) {
  write_file_bytes(path, encode_container(c));
}

inline Container read_container(const std::filesystem::path& path, const std::string& expected_kind) {
  Container c = decode_container(read_file_bytes(path));
  if (c.kind != expected_kind) {
    throw ArtifactError("'" + path.string() + "' is a " + c.kind + " file, expected " + expected_kind);
  }
  return c;
}

}  // namespace ssu
