#pragma once

// Mask file layout:
//
//   "ESMK" | u32 LE version (1) | u64 LE header length H | H bytes JSON | bitstream
//
// JSON: {"provenance": {...}, "<tensor>": {"shape", "nnz", "bit_offset"}, ...}.
// Each tensor's bits are packed LSB-first and padded to a byte boundary, in
// name order, so bit_offset is always a multiple of 8.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparsekit/container.hpp"
#include "sparsekit/error.hpp"
#include "sparsekit/mask.hpp"

namespace sparsekit {

inline constexpr char kMaskMagic[4] = {'E', 'S', 'M', 'K'};
inline constexpr std::uint32_t kMaskVersion = 1;

namespace detail {

inline nlohmann::json provenance_to_json(const Provenance& p) {
  return {{"method", p.method},
          {"target_sparsity", p.target_sparsity},
          {"source_digest", p.source_digest},
          {"prunable_filter",
           {{"include", p.prunable_filter.include},
            {"exclude", p.prunable_filter.exclude},
            {"min_rank", p.prunable_filter.min_rank}}}};
}

inline Provenance provenance_from_json(const nlohmann::json& j) {
  try {
    Provenance p;
    p.method = j.at("method").get<std::string>();
    p.target_sparsity = j.at("target_sparsity").get<double>();
    p.source_digest = j.at("source_digest").get<std::string>();
    const auto& f = j.at("prunable_filter");
    p.prunable_filter.include = f.at("include").get<std::vector<std::string>>();
    p.prunable_filter.exclude = f.at("exclude").get<std::vector<std::string>>();
    p.prunable_filter.min_rank = f.at("min_rank").get<std::size_t>();
    return p;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("invalid mask provenance: ") + e.what());
  }
}

}  // namespace detail

inline std::vector<std::byte> serialize_mask(const MaskSet& set) {
  nlohmann::json header = nlohmann::json::object();
  header["provenance"] = detail::provenance_to_json(set.provenance);
  std::uint64_t bit_offset = 0;
  for (const auto& [name, m] : set.masks) {
    if (name == "provenance") fail(ErrorKind::data, "tensor name 'provenance' is reserved in mask files");
    header[name] = {{"shape", m.shape()}, {"nnz", m.nnz()}, {"bit_offset", bit_offset}};
    bit_offset += 8 * ((m.size() + 7) / 8);
  }
  const std::string text = header.dump();

  std::vector<std::byte> out(4 + 4 + 8 + text.size() + bit_offset / 8);
  std::memcpy(out.data(), kMaskMagic, 4);
  detail::store_le<std::uint32_t>(out.data() + 4, kMaskVersion);
  detail::store_le<std::uint64_t>(out.data() + 8, text.size());
  std::memcpy(out.data() + 16, text.data(), text.size());
  std::byte* cursor = out.data() + 16 + text.size();
  for (const auto& [name, m] : set.masks) {
    const auto packed = m.packed();
    std::memcpy(cursor, packed.data(), packed.size());
    cursor += packed.size();
  }
  return out;
}

inline MaskSet parse_mask(std::span<const std::byte> bytes) {
  auto bad = [](const std::string& what) { fail(ErrorKind::format, "mask file: " + what); };
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMaskMagic, 4) != 0) bad("bad magic");
  const auto version = detail::load_le<std::uint32_t>(bytes.data() + 4);
  if (version != kMaskVersion) bad("version mismatch (got " + std::to_string(version) + ", expected 1)");
  const auto header_len = detail::load_le<std::uint64_t>(bytes.data() + 8);
  if (header_len > bytes.size() - 16) bad("malformed header length");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(reinterpret_cast<const char*>(bytes.data() + 16),
                                   reinterpret_cast<const char*>(bytes.data() + 16 + header_len));
  } catch (const nlohmann::json::parse_error& e) {
    bad(std::string("invalid header JSON: ") + e.what());
  }
  if (!header.is_object() || !header.contains("provenance")) bad("header lacks provenance");

  MaskSet set;
  set.provenance = detail::provenance_from_json(header["provenance"]);
  const std::span<const std::byte> stream = bytes.subspan(16 + header_len);
  std::uint64_t expected_offset = 0;
  for (const auto& [name, entry] : header.items()) {
    if (name == "provenance") continue;
    const std::string who = "tensor '" + name + "': ";
    Shape shape;
    std::uint64_t nnz = 0;
    std::uint64_t bit_offset = 0;
    try {
      for (const auto& d : entry.at("shape")) {
        if (!d.is_number_unsigned() || d.get<std::uint64_t>() == 0) bad(who + "invalid shape");
        shape.push_back(d.get<std::uint64_t>());
      }
      nnz = entry.at("nnz").get<std::uint64_t>();
      bit_offset = entry.at("bit_offset").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      bad(who + e.what());
    }
    if (bit_offset != expected_offset) bad(who + "bit_offset " + std::to_string(bit_offset) +
                                           ", expected " + std::to_string(expected_offset));
    const std::uint64_t nbytes = (element_count(shape) + 7) / 8;
    if (bit_offset / 8 + nbytes > stream.size()) bad(who + "bitstream truncated");
    TensorMask m = TensorMask::from_packed(shape, stream.subspan(bit_offset / 8, nbytes));
    if (m.nnz() != nnz) {
      bad(who + "nnz " + std::to_string(nnz) + " disagrees with popcount " + std::to_string(m.nnz()));
    }
    set.masks.emplace(name, std::move(m));
    expected_offset += 8 * nbytes;
  }
  if (expected_offset / 8 != stream.size()) bad("trailing bytes after bitstream");
  return set;
}

inline void write_mask(const std::string& path, const MaskSet& set) {
  write_bytes(path, serialize_mask(set));
}

inline std::vector<std::byte> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open '" + path + "'");
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> out(raw.size());
  std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

inline MaskSet read_mask(const std::string& path) { return parse_mask(read_file_bytes(path)); }

}  // namespace sparsekit
