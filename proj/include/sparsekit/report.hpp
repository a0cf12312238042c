#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparsekit/container.hpp"
#include "sparsekit/error.hpp"
#include "sparsekit/filter.hpp"
#include "sparsekit/mask.hpp"
#include "sparsekit/parallel.hpp"
#include "sparsekit/text.hpp"

namespace sparsekit {

enum class Normalization { none, standardize };

struct TensorHistogram {
  std::vector<double> edges;           // bins + 1 uniform edges
  std::vector<std::uint64_t> counts;   // bins entries
};

struct HistogramReport {
  std::map<std::string, TensorHistogram> per_tensor;
  Normalization normalization = Normalization::none;
};

/// Subtract the mean, divide by the population standard deviation.
inline void standardize(std::vector<double>& values, const std::string& name) {
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  if (!(var > 0.0)) fail(ErrorKind::data, "tensor '" + name + "' has zero variance; cannot standardize");
  const double sd = std::sqrt(var);
  for (double& v : values) v = (v - mean) / sd;
}

/// Uniform bins over [min, max]; the maximum lands in the last bin. A
/// constant input is binned over [v - 0.5, v + 0.5].
inline TensorHistogram histogram(const std::vector<double>& values, std::size_t bins) {
  if (bins == 0) fail(ErrorKind::usage, "histogram needs at least one bin");
  auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  double lo = *lo_it;
  double hi = *hi_it;
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  TensorHistogram h;
  h.edges.resize(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) {
    h.edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
  }
  h.edges.back() = hi;
  h.counts.assign(bins, 0);
  const double scale = static_cast<double>(bins) / (hi - lo);
  for (double v : values) {
    auto idx = static_cast<std::int64_t>(std::floor((v - lo) * scale));
    idx = std::clamp<std::int64_t>(idx, 0, static_cast<std::int64_t>(bins) - 1);
    ++h.counts[static_cast<std::size_t>(idx)];
  }
  return h;
}

inline HistogramReport weight_histogram(const TensorContainer& c, const NameFilter& filter, std::size_t bins,
                                        Normalization normalization = Normalization::none,
                                        ExecPolicy policy = {}) {
  if (bins == 0) fail(ErrorKind::usage, "histogram needs at least one bin");
  const auto metas = c.list(filter);
  std::vector<TensorHistogram> hists(metas.size());
  parallel_for(metas.size(), policy, [&](std::size_t t) {
    auto values = c.read_values(metas[t].name);
    if (normalization == Normalization::standardize) standardize(values, metas[t].name);
    hists[t] = histogram(values, bins);
  });
  HistogramReport report;
  report.normalization = normalization;
  for (std::size_t t = 0; t < metas.size(); ++t) report.per_tensor.emplace(metas[t].name, std::move(hists[t]));
  return report;
}

struct ComponentRule {
  std::string label;
  std::string pattern;
};

struct ComponentRow {
  std::string label;
  std::uint64_t elements = 0;
  std::uint64_t pruned = 0;
  double sparsity = 0.0;
};

struct ComponentReport {
  std::vector<ComponentRule> rules;
  std::vector<ComponentRow> rows;  // labels in order of first rule appearance
  ComponentRow overall;
  std::map<std::string, std::string> assignment;  // tensor -> label
};

/// Transformer block grouping by name substring. Attention output comes
/// before the generic output dense rule so it wins the first match.
inline std::vector<ComponentRule> default_component_rules() {
  return {{"query", "*query*"},
          {"key", "*key*"},
          {"value", "*value*"},
          {"attention-output", "*attention.output*"},
          {"intermediate-dense", "*intermediate.dense*"},
          {"output-dense", "*output.dense*"},
          {"other", "*"}};
}

/// One rule per line: "<label> <pattern>". Blank lines and '#' comments are skipped.
inline std::vector<ComponentRule> parse_component_rules(const std::string& text) {
  std::vector<ComponentRule> rules;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream fields(line);
    ComponentRule r;
    if (!(fields >> r.label)) continue;
    std::string extra;
    if (!(fields >> r.pattern) || (fields >> extra)) {
      fail(ErrorKind::format, "rules line " + std::to_string(line_no) + ": expected '<label> <pattern>'");
    }
    validate_glob(r.pattern);
    rules.push_back(std::move(r));
  }
  if (rules.empty()) fail(ErrorKind::format, "rules file defines no rules");
  return rules;
}

/// Per-component pruned share of a mask set; first matching rule wins.
inline ComponentReport component_report(const MaskSet& set, const std::vector<ComponentRule>& rules) {
  for (const auto& r : rules) validate_glob(r.pattern);
  ComponentReport report;
  report.rules = rules;

  std::map<std::string, std::size_t> row_of;
  for (const auto& r : rules) {
    if (row_of.emplace(r.label, report.rows.size()).second) report.rows.push_back({r.label, 0, 0, 0.0});
  }
  for (const auto& [name, mask] : set.masks) {
    auto rule = std::find_if(rules.begin(), rules.end(),
                             [&](const ComponentRule& r) { return glob_match(r.pattern, name); });
    if (rule == rules.end()) {
      fail(ErrorKind::data, "tensor '" + name + "' matches no component rule (add a catch-all '*' rule)");
    }
    auto& row = report.rows[row_of[rule->label]];
    row.elements += mask.size();
    row.pruned += mask.size() - mask.nnz();
    report.assignment.emplace(name, rule->label);
  }
  std::erase_if(report.rows, [](const ComponentRow& r) { return r.elements == 0; });

  report.overall.label = "overall";
  for (auto& row : report.rows) {
    row.sparsity = static_cast<double>(row.pruned) / static_cast<double>(row.elements);
    report.overall.elements += row.elements;
    report.overall.pruned += row.pruned;
  }
  report.overall.sparsity = sparsity(set);
  return report;
}

inline std::string histogram_csv(const HistogramReport& report) {
  std::string out = "tensor,bin_lo,bin_hi,count\n";
  for (const auto& [name, h] : report.per_tensor) {
    for (std::size_t b = 0; b < h.counts.size(); ++b) {
      out += csv_field(name) + "," + format_double(h.edges[b]) + "," + format_double(h.edges[b + 1]) + "," +
             std::to_string(h.counts[b]) + "\n";
    }
  }
  return out;
}

inline std::string histogram_json(const HistogramReport& report) {
  nlohmann::json doc;
  doc["normalization"] = report.normalization == Normalization::standardize ? "standardize" : "none";
  doc["tensors"] = nlohmann::json::object();
  for (const auto& [name, h] : report.per_tensor) {
    doc["tensors"][name] = {{"bin_edges", h.edges}, {"counts", h.counts}};
  }
  return doc.dump(2) + "\n";
}

inline std::string component_csv(const ComponentReport& report) {
  std::string out = "component,elements,pruned,sparsity\n";
  auto row = [&](const ComponentRow& r) {
    out += csv_field(r.label) + "," + std::to_string(r.elements) + "," + std::to_string(r.pruned) + "," +
           format_double(r.sparsity) + "\n";
  };
  for (const auto& r : report.rows) row(r);
  row(report.overall);
  return out;
}

inline std::string component_json(const ComponentReport& report) {
  auto row = [](const ComponentRow& r) {
    return nlohmann::json{{"component", r.label}, {"elements", r.elements}, {"pruned", r.pruned},
                          {"sparsity", r.sparsity}};
  };
  nlohmann::json doc;
  doc["components"] = nlohmann::json::array();
  for (const auto& r : report.rows) doc["components"].push_back(row(r));
  doc["overall"] = row(report.overall);
  doc["assignment"] = report.assignment;
  return doc.dump(2) + "\n";
}

}  // namespace sparsekit
