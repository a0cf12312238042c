#pragma once

// Reader and writer for the safetensors-compatible tensor container:
//
//   u64 LE header length H | H bytes of UTF-8 JSON | raw tensor data
//
// The JSON maps tensor names to {"dtype", "shape", "data_offsets"} with
// offsets relative to the start of the data section, plus an optional
// "__metadata__" object of string values.

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sparsekit/byte_source.hpp"
#include "sparsekit/dtype.hpp"
#include "sparsekit/error.hpp"
#include "sparsekit/filter.hpp"

namespace sparsekit {

using Shape = std::vector<std::uint64_t>;
using Metadata = std::map<std::string, std::string>;

inline constexpr std::string_view kMetadataKey = "__metadata__";

inline std::uint64_t element_count(const Shape& shape) {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

struct TensorMeta {
  std::string name;
  DType dtype = DType::f32;
  Shape shape;
  std::uint64_t begin = 0;  // half-open byte range within the data section
  std::uint64_t end = 0;

  std::uint64_t numel() const { return element_count(shape); }
  std::size_t rank() const { return shape.size(); }

  friend bool operator==(const TensorMeta&, const TensorMeta&) = default;
};

/// An opened container. Immutable; safe to read from many threads.
class TensorContainer {
 public:
  TensorContainer(std::shared_ptr<const ByteSource> source, std::uint64_t data_offset,
                  std::map<std::string, TensorMeta> metas, std::optional<Metadata> metadata)
      : source_(std::move(source)),
        data_offset_(data_offset),
        metas_(std::move(metas)),
        metadata_(std::move(metadata)) {}

  /// Metas keyed (and therefore ordered) by tensor name.
  const std::map<std::string, TensorMeta>& metas() const noexcept { return metas_; }
  const std::optional<Metadata>& metadata() const noexcept { return metadata_; }
  const ByteSource& source() const noexcept { return *source_; }
  /// Absolute offset of the data section (8 + header length).
  std::uint64_t data_offset() const noexcept { return data_offset_; }

  const TensorMeta& meta(const std::string& name) const {
    auto it = metas_.find(name);
    if (it == metas_.end()) fail(ErrorKind::data, "unknown tensor '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return metas_.count(name) != 0; }

  /// Raw little-endian payload of one tensor; touches no other tensor's bytes.
  std::vector<std::byte> read_raw(const std::string& name) const {
    const TensorMeta& m = meta(name);
    std::vector<std::byte> bytes(m.end - m.begin);
    source_->read(data_offset_ + m.begin, bytes);
    return bytes;
  }

  /// Values widened to double in row-major order. Rejects NaN and infinities.
  std::vector<double> read_values(const std::string& name) const {
    const TensorMeta& m = meta(name);
    const auto raw = read_raw(name);
    std::vector<double> values(m.numel());
    decode_values(m.dtype, raw, values);
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!std::isfinite(values[i])) {
        fail(ErrorKind::data, "non-finite weight in tensor '" + name + "' at index " +
                                  std::to_string(i));
      }
    }
    return values;
  }

  /// Metas passing `filter`, sorted by name.
  std::vector<TensorMeta> list(const NameFilter& filter) const {
    filter.validate();
    std::vector<TensorMeta> out;
    for (const auto& [name, m] : metas_) {
      if (filter.matches(name, m.rank())) out.push_back(m);
    }
    return out;
  }

 private:
  std::shared_ptr<const ByteSource> source_;
  std::uint64_t data_offset_;
  std::map<std::string, TensorMeta> metas_;
  std::optional<Metadata> metadata_;
};

inline std::vector<TensorMeta> list_tensors(const TensorContainer& c, const NameFilter& filter) {
  return c.list(filter);
}

inline std::vector<double> read_values(const TensorContainer& c, const std::string& name) {
  return c.read_values(name);
}

namespace detail {

[[noreturn]] inline void parse_fail(const std::string& what) { fail(ErrorKind::format, what); }

inline TensorMeta parse_meta(const std::string& name, const nlohmann::json& entry) {
  const std::string who = "tensor '" + name + "': ";
  if (name.empty()) parse_fail("empty tensor name");
  if (!entry.is_object()) parse_fail(who + "entry is not an object");
  auto field = [&](const char* key) -> const nlohmann::json& {
    auto it = entry.find(key);
    if (it == entry.end()) parse_fail(who + "missing field \"" + key + "\"");
    return *it;
  };

  TensorMeta m;
  m.name = name;
  const auto& dtype = field("dtype");
  if (!dtype.is_string()) parse_fail(who + "dtype is not a string");
  const auto parsed = parse_dtype(dtype.get<std::string>());
  if (!parsed) parse_fail(who + "unknown dtype '" + dtype.get<std::string>() + "'");
  m.dtype = *parsed;

  const auto& shape = field("shape");
  if (!shape.is_array()) parse_fail(who + "shape is not an array");
  std::uint64_t numel = 1;
  for (const auto& d : shape) {
    if (!d.is_number_unsigned() || d.get<std::uint64_t>() == 0) {
      parse_fail(who + "invalid shape (dimensions must be positive integers)");
    }
    const auto dim = d.get<std::uint64_t>();
    if (numel > UINT64_MAX / dim) parse_fail(who + "shape overflows");
    numel *= dim;
    m.shape.push_back(dim);
  }

  const auto& offsets = field("data_offsets");
  if (!offsets.is_array() || offsets.size() != 2 || !offsets[0].is_number_unsigned() ||
      !offsets[1].is_number_unsigned()) {
    parse_fail(who + "data_offsets must be two non-negative integers");
  }
  m.begin = offsets[0].get<std::uint64_t>();
  m.end = offsets[1].get<std::uint64_t>();
  if (m.end < m.begin) parse_fail(who + "invalid range (end before begin)");

  const std::uint64_t width = byte_width(m.dtype);
  if (numel > UINT64_MAX / width || numel * width != m.end - m.begin) {
    parse_fail(who + "size mismatch (shape " + shape_string(m.shape) + " " +
               std::string(dtype_tag(m.dtype)) + " needs " +
               (numel > UINT64_MAX / width ? std::string("too many")
                                           : std::to_string(numel * width)) +
               " bytes, range holds " + std::to_string(m.end - m.begin) + ")");
  }
  return m;
}

}  // namespace detail

inline TensorContainer open_container(std::shared_ptr<const ByteSource> source) {
  const std::uint64_t total = source->size();
  if (total < 8) detail::parse_fail("malformed header length: file shorter than 8 bytes");
  std::array<std::byte, 8> len_bytes{};
  source->read(0, len_bytes);
  const auto header_len = detail::load_le<std::uint64_t>(len_bytes.data());
  if (header_len > total - 8) {
    detail::parse_fail("malformed header length: " + std::to_string(header_len) +
                       " exceeds file size " + std::to_string(total));
  }

  std::string header(header_len, '\0');
  source->read(8, std::as_writable_bytes(std::span<char>(header)));

  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(header);
  } catch (const nlohmann::json::parse_error& e) {
    detail::parse_fail(std::string("invalid UTF-8/JSON header: ") + e.what());
  }
  if (!doc.is_object()) detail::parse_fail("invalid UTF-8/JSON header: not a JSON object");

  std::optional<Metadata> metadata;
  std::map<std::string, TensorMeta> metas;
  for (const auto& [key, value] : doc.items()) {
    if (key == kMetadataKey) {
      if (!value.is_object()) detail::parse_fail("__metadata__ is not an object");
      Metadata md;
      for (const auto& [k, v] : value.items()) {
        if (!v.is_string()) detail::parse_fail("__metadata__ value for '" + k + "' is not a string");
        md.emplace(k, v.get<std::string>());
      }
      metadata = std::move(md);
      continue;
    }
    metas.emplace(key, detail::parse_meta(key, value));
  }

  // Ranges sorted by begin must tile [0, data_size) exactly.
  const std::uint64_t data_size = total - 8 - header_len;
  std::vector<const TensorMeta*> by_offset;
  by_offset.reserve(metas.size());
  for (const auto& [name, m] : metas) by_offset.push_back(&m);
  std::sort(by_offset.begin(), by_offset.end(), [](const TensorMeta* a, const TensorMeta* b) {
    return a->begin != b->begin ? a->begin < b->begin : a->name < b->name;
  });
  std::uint64_t cursor = 0;
  const TensorMeta* prev = nullptr;
  for (const TensorMeta* m : by_offset) {
    if (m->end > data_size) {
      detail::parse_fail("tensor '" + m->name + "': out-of-bounds range [" +
                         std::to_string(m->begin) + ", " + std::to_string(m->end) +
                         ") exceeds data section of " + std::to_string(data_size) + " bytes");
    }
    if (m->begin < cursor) {
      detail::parse_fail("tensors '" + prev->name + "' and '" + m->name + "': overlapping ranges");
    }
    if (m->begin > cursor) {
      detail::parse_fail("tensor '" + m->name + "': non-contiguous ranges (gap before offset " +
                         std::to_string(m->begin) + ")");
    }
    cursor = m->end;
    prev = m;
  }
  if (cursor != data_size) {
    detail::parse_fail("data section holds " + std::to_string(data_size - cursor) +
                       " bytes not covered by any tensor");
  }

  return TensorContainer(std::move(source), 8 + header_len, std::move(metas), std::move(metadata));
}

inline TensorContainer open_container(const std::string& path) {
  return open_container(std::make_shared<FileSource>(path));
}

/// One tensor to be written: encoded little-endian payload plus its shape.
struct TensorPayload {
  std::string name;
  DType dtype = DType::f32;
  Shape shape;
  std::vector<std::byte> bytes;
};

inline TensorPayload make_payload(std::string name, DType dtype, Shape shape,
                                  std::span<const double> values) {
  if (element_count(shape) != values.size()) {
    fail(ErrorKind::data, "tensor '" + name + "': shape " + shape_string(shape) + " holds " +
                              std::to_string(element_count(shape)) + " values, got " +
                              std::to_string(values.size()));
  }
  return TensorPayload{std::move(name), dtype, std::move(shape), encode_values(dtype, values)};
}

/// Serializes tensors in lexicographic name order; equal inputs give equal bytes.
inline std::vector<std::byte> serialize_container(std::vector<TensorPayload> tensors,
                                                  const std::optional<Metadata>& metadata = {}) {
  std::sort(tensors.begin(), tensors.end(),
            [](const TensorPayload& a, const TensorPayload& b) { return a.name < b.name; });

  nlohmann::json header = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = tensors[i];
    if (t.name.empty()) fail(ErrorKind::data, "empty tensor name");
    if (t.name == kMetadataKey) fail(ErrorKind::data, "tensor name '__metadata__' is reserved");
    if (i > 0 && tensors[i - 1].name == t.name) {
      fail(ErrorKind::data, "duplicate tensor name '" + t.name + "'");
    }
    for (auto d : t.shape) {
      if (d == 0) fail(ErrorKind::data, "tensor '" + t.name + "': zero-sized dimension");
    }
    const std::uint64_t expected = element_count(t.shape) * byte_width(t.dtype);
    if (expected != t.bytes.size()) {
      fail(ErrorKind::data, "tensor '" + t.name + "': shape " + shape_string(t.shape) + " " +
                                std::string(dtype_tag(t.dtype)) + " needs " +
                                std::to_string(expected) + " bytes, got " +
                                std::to_string(t.bytes.size()));
    }
    header[t.name] = {{"dtype", std::string(dtype_tag(t.dtype))},
                      {"shape", t.shape},
                      {"data_offsets", {offset, offset + expected}}};
    offset += expected;
  }
  if (metadata) header[std::string(kMetadataKey)] = *metadata;

  std::string text = header.dump();
  text.append((8 - text.size() % 8) % 8, ' ');

  std::vector<std::byte> out(8 + text.size() + offset);
  detail::store_le<std::uint64_t>(out.data(), text.size());
  std::memcpy(out.data() + 8, text.data(), text.size());
  std::byte* cursor = out.data() + 8 + text.size();
  for (const auto& t : tensors) {
    std::memcpy(cursor, t.bytes.data(), t.bytes.size());
    cursor += t.bytes.size();
  }
  return out;
}

inline void write_bytes(const std::string& path, std::span<const std::byte> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) fail(ErrorKind::io, "write failed on '" + path + "'");
}

inline void write_container(const std::string& path, std::vector<TensorPayload> tensors,
                            const std::optional<Metadata>& metadata = {}) {
  write_bytes(path, serialize_container(std::move(tensors), metadata));
}

/// Opens a container held entirely in memory.
inline TensorContainer container_from_bytes(std::vector<std::byte> bytes) {
  return open_container(std::make_shared<MemorySource>(std::move(bytes)));
}

/// All tensors of `c` as payloads, in name order.
inline std::vector<TensorPayload> payloads_of(const TensorContainer& c) {
  std::vector<TensorPayload> out;
  for (const auto& [name, m] : c.metas()) out.push_back({name, m.dtype, m.shape, c.read_raw(name)});
  return out;
}

/// Hex SHA-256 of the container's full byte image, streamed in 1 MiB chunks.
inline std::string container_digest(const TensorContainer& c) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    fail(ErrorKind::io, "sha256 initialisation failed");
  }
  const ByteSource& src = c.source();
  std::vector<std::byte> chunk(1 << 20);
  for (std::uint64_t off = 0; off < src.size();) {
    const auto n = static_cast<std::size_t>(std::min<std::uint64_t>(chunk.size(), src.size() - off));
    src.read(off, std::span(chunk).first(n));
    EVP_DigestUpdate(ctx.get(), chunk.data(), n);
    off += n;
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned i = 0; i < len; ++i) {
    hex += kHex[md[i] >> 4];
    hex += kHex[md[i] & 15];
  }
  return hex;
}

}  // namespace sparsekit
