#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sparsekit/container.hpp"
#include "sparsekit/error.hpp"
#include "sparsekit/filter.hpp"
#include "sparsekit/parallel.hpp"

namespace sparsekit {

struct SeriesEntry {
  std::uint64_t iteration = 0;
  std::string path;
};

/// Pre-training checkpoints ordered by strictly increasing iteration.
struct CheckpointSeries {
  std::vector<SeriesEntry> entries;

  void validate() const {
    if (entries.empty()) fail(ErrorKind::data, "checkpoint series is empty");
    for (std::size_t i = 1; i < entries.size(); ++i) {
      if (entries[i].iteration <= entries[i - 1].iteration) {
        fail(ErrorKind::data, "series iterations must be strictly increasing (entry " + std::to_string(i) + ")");
      }
    }
  }
};

/// Count of weights with |w| <= tolerance over the filtered tensors.
struct ZeroCensus {
  double tolerance = 0.0;
  std::map<std::string, std::uint64_t> per_tensor;
  std::uint64_t total = 0;
  std::uint64_t prunable_total = 0;

  double fraction() const {
    if (prunable_total == 0) fail(ErrorKind::data, "zero fraction of an empty tensor set is undefined");
    return static_cast<double>(total) / static_cast<double>(prunable_total);
  }
};

inline ZeroCensus zero_census(const TensorContainer& c, const NameFilter& filter, double tolerance,
                              ExecPolicy policy = {}) {
  if (!(tolerance >= 0.0) || !std::isfinite(tolerance)) {
    fail(ErrorKind::usage, "zero tolerance must be a finite non-negative number");
  }
  const auto metas = c.list(filter);
  std::vector<std::uint64_t> counts(metas.size(), 0);
  parallel_for(metas.size(), policy, [&](std::size_t t) {
    std::uint64_t n = 0;
    for (double v : c.read_values(metas[t].name)) n += std::fabs(v) <= tolerance;
    counts[t] = n;
  });

  ZeroCensus census;
  census.tolerance = tolerance;
  for (std::size_t t = 0; t < metas.size(); ++t) {
    census.per_tensor.emplace(metas[t].name, counts[t]);
    census.total += counts[t];
    census.prunable_total += metas[t].numel();
  }
  return census;
}

struct CensusPoint {
  std::uint64_t iteration = 0;
  double zero_fraction = 0.0;
};

/// Zero fraction of every checkpoint, in iteration order. Checkpoints are
/// processed concurrently; a failure names the offending entry.
inline std::vector<CensusPoint> census_series(const CheckpointSeries& series, const NameFilter& filter,
                                              double tolerance, ExecPolicy policy = {}) {
  series.validate();
  filter.validate();
  std::vector<CensusPoint> out(series.entries.size());
  parallel_for(series.entries.size(), policy, [&](std::size_t i) {
    const auto& e = series.entries[i];
    try {
      const auto census = zero_census(open_container(e.path), filter, tolerance);
      out[i] = {e.iteration, census.fraction()};
    } catch (const Error& err) {
      throw Error(err.kind(), "series entry " + std::to_string(i) + " (iteration " +
                                  std::to_string(e.iteration) + ", '" + e.path + "'): " + err.what());
    }
  });
  return out;
}

/// Iteration that ends the largest single-step rise in zero fraction, if
/// that rise is at least `min_jump`. Equal rises resolve to the earliest.
inline std::optional<std::uint64_t> detect_abrupt(const std::vector<CensusPoint>& points,
                                                  double min_jump = 0.05) {
  if (points.size() < 2) fail(ErrorKind::data, "abrupt-sparsification detection needs at least two entries");
  std::size_t best = 0;
  double best_jump = -INFINITY;
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    const double jump = points[i + 1].zero_fraction - points[i].zero_fraction;
    if (jump > best_jump) {
      best_jump = jump;
      best = i;
    }
  }
  if (best_jump >= min_jump) return points[best + 1].iteration;
  return std::nullopt;
}

/// {"entries": [{"iteration": n, "path": "..."}]}. Relative paths resolve
/// against `base_dir`.
inline CheckpointSeries parse_series_manifest(const std::string& text,
                                              const std::filesystem::path& base_dir = {}) {
  CheckpointSeries series;
  try {
    const auto doc = nlohmann::json::parse(text);
    for (const auto& e : doc.at("entries")) {
      std::filesystem::path p = e.at("path").get<std::string>();
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      series.entries.push_back({e.at("iteration").get<std::uint64_t>(), p.string()});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("invalid series manifest: ") + e.what());
  }
  return series;
}

}  // namespace sparsekit
