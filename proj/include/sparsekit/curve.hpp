#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sparsekit/error.hpp"

namespace sparsekit {

struct CurvePoint {
  double sparsity = 0.0;
  double metric = 0.0;  // higher is better
};

/// Sampled performance against sparsity, plus the dense (unpruned) metric.
struct SparsityCurve {
  std::vector<CurvePoint> points;
  double dense_metric = 0.0;

  void validate() const {
    if (points.size() < 2) fail(ErrorKind::data, "curve needs at least two points");
    if (!std::isfinite(dense_metric)) fail(ErrorKind::data, "dense metric must be finite");
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto& p = points[i];
      if (!(p.sparsity >= 0.0 && p.sparsity <= 1.0)) {
        fail(ErrorKind::data, "curve sparsity outside [0, 1] at point " + std::to_string(i));
      }
      if (!std::isfinite(p.metric)) fail(ErrorKind::data, "non-finite metric at point " + std::to_string(i));
      if (i > 0 && !(p.sparsity > points[i - 1].sparsity)) {
        fail(ErrorKind::data, "curve sparsities must be strictly increasing (point " + std::to_string(i) + ")");
      }
    }
  }
};

enum class DetectMode {
  first_crossing,  // first sample that stays at/above threshold while its successor falls below
  sustained,       // additionally, every later sample must stay below threshold
};

struct EssentialSparsityResult {
  std::optional<double> essential_sparsity;
  double threshold = 0.0;  // dense_metric - eps
  DetectMode mode = DetectMode::first_crossing;
  bool no_crossing = false;            // no qualifying drop below threshold
  bool dense_below_threshold = false;  // the first sample already violates the threshold
};

/// Largest sampled sparsity whose metric is within eps of dense while the
/// next grid step falls below dense - eps.
inline EssentialSparsityResult detect_essential(const SparsityCurve& curve, double eps = 0.01,
                                                DetectMode mode = DetectMode::first_crossing) {
  curve.validate();
  if (!std::isfinite(eps) || eps < 0.0) fail(ErrorKind::usage, "eps must be a finite non-negative number");

  EssentialSparsityResult r;
  r.threshold = curve.dense_metric - eps;
  r.mode = mode;
  const auto& pts = curve.points;
  const double t = r.threshold;

  if (pts.front().metric < t) {
    r.dense_below_threshold = true;
    return r;
  }

  if (mode == DetectMode::first_crossing) {
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
      if (pts[i].metric >= t && pts[i + 1].metric < t) {
        r.essential_sparsity = pts[i].sparsity;
        return r;
      }
    }
  } else {
    // The suffix after index i must lie entirely below threshold.
    std::size_t tail = pts.size();
    while (tail > 0 && pts[tail - 1].metric < t) --tail;
    if (tail < pts.size() && tail > 0) {
      r.essential_sparsity = pts[tail - 1].sparsity;
      return r;
    }
  }
  r.no_crossing = true;
  return r;
}

/// metric - dense at every sample (negative when performance degrades).
inline std::vector<std::pair<double, double>> drop_curve(const SparsityCurve& curve) {
  curve.validate();
  std::vector<std::pair<double, double>> out;
  out.reserve(curve.points.size());
  for (const auto& p : curve.points) out.emplace_back(p.sparsity, p.metric - curve.dense_metric);
  return out;
}

namespace detail {

inline double parse_real(const std::string& text, const std::string& what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    fail(ErrorKind::format, "cannot parse " + what + " '" + text + "'");
  }
  while (used < text.size() && std::isspace(static_cast<unsigned char>(text[used]))) ++used;
  if (used != text.size()) fail(ErrorKind::format, "cannot parse " + what + " '" + text + "'");
  return v;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace detail

/// CSV: a "# dense=<value>" comment line, a "sparsity,metric" header, then rows.
inline SparsityCurve parse_curve_csv(const std::string& text) {
  SparsityCurve curve;
  bool have_dense = false;
  bool have_header = false;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto body = detail::trim(line.substr(1));
      if (body.rfind("dense=", 0) == 0) {
        curve.dense_metric = detail::parse_real(detail::trim(body.substr(6)), "dense value");
        have_dense = true;
      }
      continue;
    }
    if (!have_header) {
      if (line != "sparsity,metric") fail(ErrorKind::format, "curve CSV header must be 'sparsity,metric'");
      have_header = true;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
      fail(ErrorKind::format, "curve CSV line " + std::to_string(line_no) + ": expected two columns");
    }
    curve.points.push_back({detail::parse_real(detail::trim(line.substr(0, comma)), "sparsity"),
                            detail::parse_real(detail::trim(line.substr(comma + 1)), "metric")});
  }
  if (!have_dense) fail(ErrorKind::format, "curve CSV lacks a '# dense=<value>' line");
  if (!have_header) fail(ErrorKind::format, "curve CSV lacks the 'sparsity,metric' header");
  return curve;
}

/// JSON: {"dense": x, "points": [[s, m], ...]}.
inline SparsityCurve parse_curve_json(const std::string& text) {
  try {
    const auto doc = nlohmann::json::parse(text);
    SparsityCurve curve;
    curve.dense_metric = doc.at("dense").get<double>();
    for (const auto& p : doc.at("points")) {
      if (!p.is_array() || p.size() != 2) fail(ErrorKind::format, "curve point must be [sparsity, metric]");
      curve.points.push_back({p[0].get<double>(), p[1].get<double>()});
    }
    return curve;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("invalid curve JSON: ") + e.what());
  }
}

/// Picks the parser by content: a leading '{' means JSON.
inline SparsityCurve parse_curve(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') return parse_curve_json(text);
  return parse_curve_csv(text);
}

}  // namespace sparsekit
