#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "sparsekit/container.hpp"
#include "sparsekit/error.hpp"
#include "sparsekit/filter.hpp"
#include "sparsekit/mask.hpp"
#include "sparsekit/parallel.hpp"

namespace sparsekit {

enum class PruneScope { global, per_tensor };

/// Ties at the threshold magnitude are pruned in (tensor name, flat index)
/// ascending order. The only rule, kept explicit so provenance can name it.
enum class TieBreak { by_name_then_index };

struct NmPattern {
  unsigned n = 2;
  unsigned m = 4;
};

struct PruneSpec {
  PruneScope scope = PruneScope::global;
  double target_sparsity = 0.0;
  NameFilter prunable_filter = default_prunable_filter();
  TieBreak tie_break = TieBreak::by_name_then_index;
  std::optional<NmPattern> nm;
  int nm_axis = -1;  // grouping axis for N:M; negative counts from the end

  void validate() const {
    if (!(target_sparsity >= 0.0 && target_sparsity <= 1.0)) {
      fail(ErrorKind::usage, "target sparsity must lie in [0, 1]");
    }
    if (nm) {
      if (nm->m == 0) fail(ErrorKind::usage, "N:M pattern needs M > 0");
      if (nm->n == 0) fail(ErrorKind::usage, "N:M pattern needs N > 0");
      if (nm->n > nm->m) fail(ErrorKind::usage, "N:M pattern needs N <= M");
    }
    prunable_filter.validate();
  }
};

/// Exact selection of the prune boundary. `threshold` is the smallest kept
/// magnitude (the largest magnitude when everything is pruned); every weight
/// below it is pruned along with the first `ties_pruned` weights equal to it.
struct ThresholdResult {
  double threshold = 0.0;
  std::uint64_t below_count = 0;
  std::uint64_t at_count = 0;
  std::uint64_t ties_pruned = 0;
  std::uint64_t prunable_count = 0;

  std::uint64_t pruned_count() const { return below_count + ties_pruned; }
  friend bool operator==(const ThresholdResult&, const ThresholdResult&) = default;
};

/// round(target * count), halves to even.
inline std::uint64_t target_prune_count(double target, std::uint64_t count) {
  return static_cast<std::uint64_t>(std::nearbyint(target * static_cast<double>(count)));
}

/// Order-preserving integer key for a magnitude: for non-negative finite
/// doubles the IEEE-754 bit pattern sorts like the value. Maps -0.0 to 0.
inline std::uint64_t magnitude_key(double v) noexcept { return std::bit_cast<std::uint64_t>(std::fabs(v)); }

namespace detail {

inline constexpr int kBucketShift = 48;  // top 16 bits of the key
inline constexpr std::size_t kBucketCount = std::size_t{1} << 16;

inline std::vector<std::string> prunable_names(const TensorContainer& c, const NameFilter& filter) {
  std::vector<std::string> names;
  for (const auto& m : c.list(filter)) names.push_back(m.name);
  if (names.empty()) fail(ErrorKind::data, "empty prunable set: no tensor matches the prunable filter");
  return names;
}

struct KeyThreshold {
  std::uint64_t key = 0;
  ThresholdResult result;
};

// Two bounded passes: a 65536-bucket histogram over key prefixes, then an
// exact rank inside the one bucket that holds the boundary.
inline KeyThreshold select_threshold(const TensorContainer& c, const std::vector<std::string>& names,
                                     double target, ExecPolicy policy) {
  std::vector<std::uint64_t> histogram(kBucketCount, 0);
  std::mutex merge_mutex;
  std::uint64_t total = 0;
  parallel_for(names.size(), policy, [&](std::size_t t) {
    const auto values = c.read_values(names[t]);
    std::vector<std::uint64_t> local(kBucketCount, 0);
    for (double v : values) ++local[magnitude_key(v) >> kBucketShift];
    std::lock_guard lock(merge_mutex);
    for (std::size_t b = 0; b < kBucketCount; ++b) histogram[b] += local[b];
    total += values.size();
  });

  const std::uint64_t k = target_prune_count(target, total);
  const std::uint64_t rank = std::min(k, total - 1);  // 0-based rank of the threshold
  std::uint64_t before = 0;
  std::size_t bucket = 0;
  while (before + histogram[bucket] <= rank) before += histogram[bucket++];

  std::vector<std::vector<std::uint64_t>> per_tensor(names.size());
  parallel_for(names.size(), policy, [&](std::size_t t) {
    for (double v : c.read_values(names[t])) {
      const auto key = magnitude_key(v);
      if ((key >> kBucketShift) == bucket) per_tensor[t].push_back(key);
    }
  });
  std::vector<std::uint64_t> boundary;
  boundary.reserve(histogram[bucket]);
  for (auto& keys : per_tensor) boundary.insert(boundary.end(), keys.begin(), keys.end());
  per_tensor.clear();

  const auto nth = boundary.begin() + static_cast<std::ptrdiff_t>(rank - before);
  std::nth_element(boundary.begin(), nth, boundary.end());
  const std::uint64_t key = *nth;

  KeyThreshold out;
  out.key = key;
  out.result.threshold = std::bit_cast<double>(key);
  out.result.prunable_count = total;
  out.result.below_count = before;
  for (auto b : boundary) {
    if (b < key) ++out.result.below_count;
    if (b == key) ++out.result.at_count;
  }
  out.result.ties_pruned = k - out.result.below_count;
  return out;
}

// Keeps weights above the threshold key; of those equal to it, prunes the
// first `ties_to_prune` in flat index order.
inline TensorMask threshold_mask(const TensorMeta& meta, const std::vector<double>& values,
                                 std::uint64_t key, std::uint64_t ties_to_prune) {
  TensorMask mask = TensorMask::zeros(meta.shape);
  for (std::uint64_t i = 0; i < values.size(); ++i) {
    const auto k = magnitude_key(values[i]);
    if (k > key) {
      mask.set(i);
    } else if (k == key) {
      if (ties_to_prune > 0) {
        --ties_to_prune;
      } else {
        mask.set(i);
      }
    }
  }
  return mask;
}

inline std::uint64_t count_key(const std::vector<double>& values, std::uint64_t key) {
  return static_cast<std::uint64_t>(std::count_if(
      values.begin(), values.end(), [key](double v) { return magnitude_key(v) == key; }));
}

inline Provenance make_provenance(const TensorContainer& c, const PruneSpec& spec, std::string method) {
  return Provenance{std::move(method), spec.target_sparsity, container_digest(c), spec.prunable_filter};
}

}  // namespace detail

/// Global magnitude threshold over every prunable weight. Equivalent to
/// sorting all prunable magnitudes, without holding them in memory.
inline ThresholdResult select_global_threshold(const TensorContainer& c, const PruneSpec& spec,
                                               ExecPolicy policy = {}) {
  spec.validate();
  const auto names = detail::prunable_names(c, spec.prunable_filter);
  return detail::select_threshold(c, names, spec.target_sparsity, policy).result;
}

/// One-shot magnitude pruning with a single threshold across all prunable
/// tensors. Clears exactly round(target * prunable_count) bits.
inline MaskSet omp_global(const TensorContainer& c, const PruneSpec& spec, ExecPolicy policy = {}) {
  spec.validate();
  const auto names = detail::prunable_names(c, spec.prunable_filter);
  const auto sel = detail::select_threshold(c, names, spec.target_sparsity, policy);

  // Count ties per tensor, then hand out the tie budget in name order.
  std::vector<std::uint64_t> ties(names.size(), 0);
  if (sel.result.ties_pruned > 0) {
    parallel_for(names.size(), policy, [&](std::size_t t) {
      ties[t] = detail::count_key(c.read_values(names[t]), sel.key);
    });
  }
  std::vector<std::uint64_t> budget(names.size(), 0);
  std::uint64_t remaining = sel.result.ties_pruned;
  for (std::size_t t = 0; t < names.size(); ++t) {
    budget[t] = std::min(ties[t], remaining);
    remaining -= budget[t];
  }

  std::vector<TensorMask> masks(names.size());
  parallel_for(names.size(), policy, [&](std::size_t t) {
    masks[t] = detail::threshold_mask(c.meta(names[t]), c.read_values(names[t]), sel.key, budget[t]);
  });

  MaskSet set;
  for (std::size_t t = 0; t < names.size(); ++t) set.masks.emplace(names[t], std::move(masks[t]));
  set.provenance = detail::make_provenance(c, spec, "omp-global");
  return set;
}

/// Each prunable tensor pruned independently to round(target * numel).
inline MaskSet omp_per_tensor(const TensorContainer& c, const PruneSpec& spec, ExecPolicy policy = {}) {
  spec.validate();
  const auto names = detail::prunable_names(c, spec.prunable_filter);
  std::vector<TensorMask> masks(names.size());
  parallel_for(names.size(), policy, [&](std::size_t t) {
    const std::vector<std::string> one{names[t]};
    const auto sel = detail::select_threshold(c, one, spec.target_sparsity, ExecPolicy{1});
    masks[t] = detail::threshold_mask(c.meta(names[t]), c.read_values(names[t]), sel.key,
                                      sel.result.ties_pruned);
  });

  MaskSet set;
  for (std::size_t t = 0; t < names.size(); ++t) set.masks.emplace(names[t], std::move(masks[t]));
  set.provenance = detail::make_provenance(c, spec, "omp-per-tensor");
  return set;
}

inline MaskSet omp(const TensorContainer& c, const PruneSpec& spec, ExecPolicy policy = {}) {
  return spec.scope == PruneScope::global ? omp_global(c, spec, policy) : omp_per_tensor(c, spec, policy);
}

/// Builds an N:M mask for one tensor. Groups of M run along `axis`; each
/// full group keeps its N largest magnitudes (lower index first on ties), a
/// trailing partial group of length L keeps min(N, L).
inline TensorMask nm_mask(const Shape& shape, const std::vector<double>& values, NmPattern nm, int axis = -1) {
  const auto rank = static_cast<int>(shape.size());
  std::uint64_t outer = 1, length = 1, inner = 1;
  if (rank > 0) {
    const int a = axis < 0 ? rank + axis : axis;
    if (a < 0 || a >= rank) fail(ErrorKind::usage, "N:M axis out of range for rank " + std::to_string(rank));
    for (int d = 0; d < a; ++d) outer *= shape[d];
    length = shape[a];
    for (int d = a + 1; d < rank; ++d) inner *= shape[d];
  }

  TensorMask mask = TensorMask::zeros(shape);
  std::vector<std::uint64_t> group;
  group.reserve(nm.m);
  for (std::uint64_t o = 0; o < outer; ++o) {
    for (std::uint64_t i = 0; i < inner; ++i) {
      for (std::uint64_t start = 0; start < length; start += nm.m) {
        const std::uint64_t len = std::min<std::uint64_t>(nm.m, length - start);
        group.clear();
        for (std::uint64_t j = start; j < start + len; ++j) group.push_back((o * length + j) * inner + i);
        const auto keep = std::min<std::uint64_t>(nm.n, len);
        // group is ascending in flat index, so a stable sort keeps lower indices first on ties.
        std::stable_sort(group.begin(), group.end(), [&](std::uint64_t x, std::uint64_t y) {
          return magnitude_key(values[x]) > magnitude_key(values[y]);
        });
        for (std::uint64_t g = 0; g < keep; ++g) mask.set(group[g]);
      }
    }
  }
  return mask;
}

/// N:M structured pruning of every prunable tensor.
inline MaskSet nm_prune(const TensorContainer& c, const PruneSpec& spec, ExecPolicy policy = {}) {
  if (!spec.nm) fail(ErrorKind::usage, "nm_prune needs an N:M pattern");
  spec.validate();
  const NmPattern nm = *spec.nm;
  const auto names = detail::prunable_names(c, spec.prunable_filter);
  std::vector<TensorMask> masks(names.size());
  parallel_for(names.size(), policy, [&](std::size_t t) {
    masks[t] = nm_mask(c.meta(names[t]).shape, c.read_values(names[t]), nm, spec.nm_axis);
  });

  MaskSet set;
  for (std::size_t t = 0; t < names.size(); ++t) set.masks.emplace(names[t], std::move(masks[t]));
  PruneSpec recorded = spec;
  recorded.target_sparsity = static_cast<double>(nm.m - nm.n) / static_cast<double>(nm.m);
  set.provenance = detail::make_provenance(
      c, recorded, "nm-" + std::to_string(nm.n) + ":" + std::to_string(nm.m));
  return set;
}

/// Cumulative sparsity after each round of iterative magnitude pruning that
/// removes `per_round_fraction` of the surviving weights: 1 - (1 - f)^k.
inline std::vector<double> imp_schedule(unsigned rounds, double per_round_fraction) {
  if (rounds == 0) fail(ErrorKind::usage, "imp_schedule needs at least one round");
  if (!(per_round_fraction > 0.0 && per_round_fraction < 1.0)) {
    fail(ErrorKind::usage, "per-round fraction must lie in (0, 1)");
  }
  std::vector<double> out;
  out.reserve(rounds);
  for (unsigned k = 1; k <= rounds; ++k) {
    out.push_back(1.0 - std::pow(1.0 - per_round_fraction, static_cast<double>(k)));
  }
  return out;
}

}  // namespace sparsekit
