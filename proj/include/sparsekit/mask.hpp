#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sparsekit/container.hpp"
#include "sparsekit/error.hpp"
#include "sparsekit/filter.hpp"
#include "sparsekit/parallel.hpp"

namespace sparsekit {

/// Binary keep-mask over one tensor, bit i = element i in row-major order,
/// 1 = kept. Bits live in 64-bit words, LSB first, so the little-endian byte
/// image of the words is the canonical packed form. Bits past numel() are 0.
class TensorMask {
 public:
  TensorMask() = default;

  static TensorMask ones(Shape shape) { return TensorMask(std::move(shape), true); }
  static TensorMask zeros(Shape shape) { return TensorMask(std::move(shape), false); }

  static TensorMask from_bools(Shape shape, const std::vector<bool>& bits) {
    TensorMask m = zeros(std::move(shape));
    if (bits.size() != m.size_) fail(ErrorKind::data, "mask bit count does not match shape");
    for (std::size_t i = 0; i < bits.size(); ++i) {
      if (bits[i]) m.set(i);
    }
    return m;
  }

  /// Builds from packed LSB-first bytes; rejects set padding bits.
  static TensorMask from_packed(Shape shape, std::span<const std::byte> packed) {
    TensorMask m = zeros(std::move(shape));
    if (packed.size() != (m.size_ + 7) / 8) fail(ErrorKind::format, "packed mask length mismatch");
    std::memcpy(m.words_.data(), packed.data(), packed.size());
    if (m.size_ % 64 != 0 && !m.words_.empty()) {
      const std::uint64_t tail = m.words_.back() >> (m.size_ % 64);
      if (tail != 0) fail(ErrorKind::format, "mask padding bits are set");
    }
    m.nnz_ = m.popcount();
    return m;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::uint64_t size() const noexcept { return size_; }
  std::uint64_t nnz() const noexcept { return nnz_; }
  const std::vector<std::uint64_t>& words() const noexcept { return words_; }

  bool test(std::uint64_t i) const noexcept { return (words_[i >> 6] >> (i & 63)) & 1u; }

  void set(std::uint64_t i) noexcept {
    const std::uint64_t bit = std::uint64_t{1} << (i & 63);
    if (!(words_[i >> 6] & bit)) {
      words_[i >> 6] |= bit;
      ++nnz_;
    }
  }

  void clear(std::uint64_t i) noexcept {
    const std::uint64_t bit = std::uint64_t{1} << (i & 63);
    if (words_[i >> 6] & bit) {
      words_[i >> 6] &= ~bit;
      --nnz_;
    }
  }

  std::uint64_t popcount() const noexcept {
    std::uint64_t n = 0;
    for (auto w : words_) n += static_cast<std::uint64_t>(std::popcount(w));
    return n;
  }

  /// Packed LSB-first bytes, ceil(size / 8) of them.
  std::vector<std::byte> packed() const {
    std::vector<std::byte> out((size_ + 7) / 8);
    std::memcpy(out.data(), words_.data(), out.size());
    return out;
  }

  friend bool operator==(const TensorMask& a, const TensorMask& b) {
    return a.shape_ == b.shape_ && a.words_ == b.words_;
  }

 private:
  TensorMask(Shape shape, bool fill)
      : shape_(std::move(shape)), size_(element_count(shape_)), words_((size_ + 63) / 64, 0) {
    if (fill) {
      std::fill(words_.begin(), words_.end(), ~std::uint64_t{0});
      if (size_ % 64 != 0) words_.back() = (std::uint64_t{1} << (size_ % 64)) - 1;
      nnz_ = size_;
    }
  }

  Shape shape_;
  std::uint64_t size_ = 0;
  std::vector<std::uint64_t> words_;
  std::uint64_t nnz_ = 0;
};

struct Provenance {
  std::string method;
  double target_sparsity = 0.0;
  std::string source_digest;  // hex SHA-256 of the source container
  NameFilter prunable_filter;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

/// Masks for the prunable tensors of one container. Non-prunable tensors
/// are absent, not covered by all-ones masks.
struct MaskSet {
  std::map<std::string, TensorMask> masks;
  Provenance provenance;

  std::uint64_t nnz() const {
    std::uint64_t n = 0;
    for (const auto& [_, m] : masks) n += m.nnz();
    return n;
  }

  std::uint64_t numel() const {
    std::uint64_t n = 0;
    for (const auto& [_, m] : masks) n += m.size();
    return n;
  }

  friend bool operator==(const MaskSet&, const MaskSet&) = default;
};

inline double sparsity(const TensorMask& m) {
  return static_cast<double>(m.size() - m.nnz()) / static_cast<double>(m.size());
}

/// Pruned / total over the tensors present in the set.
inline double sparsity(const MaskSet& set) {
  if (set.masks.empty()) fail(ErrorKind::data, "sparsity of an empty mask set is undefined");
  return static_cast<double>(set.numel() - set.nnz()) / static_cast<double>(set.numel());
}

namespace detail {

inline void require_compatible(const TensorMask& a, const TensorMask& b, const std::string& name) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::data, "mask shape mismatch for tensor '" + name + "': " +
                              shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

inline void require_compatible(const MaskSet& a, const MaskSet& b) {
  auto ia = a.masks.begin();
  auto ib = b.masks.begin();
  for (; ia != a.masks.end() && ib != b.masks.end(); ++ia, ++ib) {
    if (ia->first != ib->first) {
      fail(ErrorKind::data, "mask sets cover different tensors ('" + ia->first + "' vs '" +
                                ib->first + "')");
    }
    require_compatible(ia->second, ib->second, ia->first);
  }
  if (ia != a.masks.end() || ib != b.masks.end()) {
    const auto& name = ia != a.masks.end() ? ia->first : ib->first;
    fail(ErrorKind::data, "mask sets cover different tensors ('" + name + "' missing)");
  }
}

inline std::uint64_t intersection(const TensorMask& a, const TensorMask& b) {
  std::uint64_t n = 0;
  const auto& wa = a.words();
  const auto& wb = b.words();
  for (std::size_t i = 0; i < wa.size(); ++i) n += static_cast<std::uint64_t>(std::popcount(wa[i] & wb[i]));
  return n;
}

inline double cosine_from_counts(std::uint64_t both, std::uint64_t nnz_a, std::uint64_t nnz_b) {
  if (nnz_a == 0 || nnz_b == 0) {
    fail(ErrorKind::data, "cosine similarity is undefined for an all-zero mask");
  }
  if (nnz_a == nnz_b) return static_cast<double>(both) / static_cast<double>(nnz_a);
  return static_cast<double>(both) /
         std::sqrt(static_cast<double>(nnz_a) * static_cast<double>(nnz_b));
}

}  // namespace detail

/// |a AND b| / sqrt(nnz(a) * nnz(b)).
inline double cosine_similarity(const TensorMask& a, const TensorMask& b) {
  detail::require_compatible(a, b, "<mask>");
  return detail::cosine_from_counts(detail::intersection(a, b), a.nnz(), b.nnz());
}

/// Whole-model similarity: all masks concatenated into one flat vector.
inline double cosine_similarity(const MaskSet& a, const MaskSet& b) {
  detail::require_compatible(a, b);
  std::uint64_t both = 0;
  for (auto ia = a.masks.begin(), ib = b.masks.begin(); ia != a.masks.end(); ++ia, ++ib) {
    both += detail::intersection(ia->second, ib->second);
  }
  return detail::cosine_from_counts(both, a.nnz(), b.nnz());
}

/// Per-tensor similarity; empty where either tensor's mask is all-zero.
inline std::map<std::string, std::optional<double>> cosine_by_tensor(const MaskSet& a,
                                                                      const MaskSet& b) {
  detail::require_compatible(a, b);
  std::map<std::string, std::optional<double>> out;
  for (auto ia = a.masks.begin(), ib = b.masks.begin(); ia != a.masks.end(); ++ia, ++ib) {
    const auto& ma = ia->second;
    const auto& mb = ib->second;
    if (ma.nnz() == 0 || mb.nnz() == 0) {
      out.emplace(ia->first, std::nullopt);
    } else {
      out.emplace(ia->first, detail::cosine_from_counts(detail::intersection(ma, mb), ma.nnz(), mb.nnz()));
    }
  }
  return out;
}

using SimilarityMatrix = std::vector<std::vector<double>>;

inline SimilarityMatrix similarity_matrix(const std::vector<MaskSet>& sets, ExecPolicy policy = {}) {
  if (sets.size() < 2) fail(ErrorKind::usage, "similarity matrix needs at least two mask sets");
  for (std::size_t i = 1; i < sets.size(); ++i) detail::require_compatible(sets[0], sets[i]);

  const std::size_t n = sets.size();
  SimilarityMatrix out(n, std::vector<double>(n, 1.0));
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  }
  for (const auto& s : sets) {
    if (s.nnz() == 0) fail(ErrorKind::data, "cosine similarity is undefined for an all-zero mask");
  }
  parallel_for(pairs.size(), policy, [&](std::size_t k) {
    const auto [i, j] = pairs[k];
    out[i][j] = cosine_similarity(sets[i], sets[j]);
  });
  for (const auto& [i, j] : pairs) out[j][i] = out[i][j];
  return out;
}

/// True when every bit kept by `high` is also kept by `low`.
inline bool is_nested(const MaskSet& high, const MaskSet& low) {
  detail::require_compatible(high, low);
  for (auto ih = high.masks.begin(), il = low.masks.begin(); ih != high.masks.end(); ++ih, ++il) {
    const auto& wh = ih->second.words();
    const auto& wl = il->second.words();
    for (std::size_t i = 0; i < wh.size(); ++i) {
      if (wh[i] & ~wl[i]) return false;
    }
  }
  return true;
}

/// Zeroes masked-out elements (all-zero bytes, i.e. +0.0 in every dtype).
/// Tensors without a mask pass through byte-for-byte. The set's recorded
/// source digest must match the container unless `ignore_digest` is set.
inline TensorContainer apply(const MaskSet& set, const TensorContainer& container,
                             bool ignore_digest = false, ExecPolicy policy = {}) {
  if (!ignore_digest) {
    const std::string digest = container_digest(container);
    if (set.provenance.source_digest != digest) {
      fail(ErrorKind::data, "digest mismatch: mask was built from " +
                                (set.provenance.source_digest.empty()
                                     ? std::string("an unrecorded source")
                                     : set.provenance.source_digest) +
                                ", container is " + digest);
    }
  }
  for (const auto& [name, mask] : set.masks) {
    if (!container.contains(name)) fail(ErrorKind::data, "mask tensor '" + name + "' not in container");
    const auto& meta = container.meta(name);
    if (meta.shape != mask.shape()) {
      fail(ErrorKind::data, "shape mismatch for tensor '" + name + "': mask " +
                                shape_string(mask.shape()) + ", container " + shape_string(meta.shape));
    }
  }

  // Copy the whole byte image so header formatting and unmasked payloads
  // survive untouched, then zero masked-out elements in place.
  const ByteSource& src = container.source();
  std::vector<std::byte> image(src.size());
  src.read(0, image);
  std::vector<const std::pair<const std::string, TensorMask>*> entries;
  for (const auto& entry : set.masks) entries.push_back(&entry);
  parallel_for(entries.size(), policy, [&](std::size_t k) {
    const auto& [name, mask] = *entries[k];
    const auto& meta = container.meta(name);
    const std::size_t w = byte_width(meta.dtype);
    std::byte* base = image.data() + container.data_offset() + meta.begin;
    for (std::uint64_t i = 0; i < mask.size(); ++i) {
      if (!mask.test(i)) std::memset(base + i * w, 0, w);
    }
  });
  return container_from_bytes(std::move(image));
}

}  // namespace sparsekit
