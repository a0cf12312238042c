#pragma once

// Command-line front end. Every subcommand parses and validates its flags,
// then makes one library call and serializes the result.
//
// Exit codes: 0 success, 1 usage error, 2 data/format/io error.

#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sparsekit/sparsekit.hpp"

namespace sparsekit::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

namespace detail {

struct FilterFlags {
  std::vector<std::string> include;
  std::vector<std::string> exclude;
  std::optional<std::size_t> min_rank;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--include", include, "Glob selecting tensors (repeatable)");
    cmd->add_option("--exclude", exclude, "Glob rejecting tensors (repeatable)");
    cmd->add_option("--min-rank", min_rank, "Minimum tensor rank");
  }

  // Without any flag the default prunable filter applies; any flag replaces
  // only the parts it names.
  NameFilter resolve(const NameFilter& fallback) const {
    NameFilter f = fallback;
    if (!include.empty()) f.include = include;
    if (!exclude.empty()) f.exclude = exclude;
    if (min_rank) f.min_rank = *min_rank;
    f.validate();
    return f;
  }
};

inline NmPattern parse_nm(const std::string& text) {
  const auto colon = text.find(':');
  auto number = [&](const std::string& s) -> unsigned {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
      fail(ErrorKind::usage, "invalid N:M pattern '" + text + "'");
    }
    return static_cast<unsigned>(std::stoul(s));
  };
  if (colon == std::string::npos) fail(ErrorKind::usage, "invalid N:M pattern '" + text + "'");
  NmPattern nm{number(text.substr(0, colon)), number(text.substr(colon + 1))};
  if (nm.m == 0) fail(ErrorKind::usage, "N:M pattern needs M > 0");
  if (nm.n == 0) fail(ErrorKind::usage, "N:M pattern needs N > 0");
  if (nm.n > nm.m) fail(ErrorKind::usage, "N:M pattern needs N <= M");
  return nm;
}

inline void emit(const std::string& text, const std::string& out_path, std::ostream& out) {
  if (out_path.empty()) {
    out << text;
  } else {
    write_text_file(out_path, text);
  }
}

inline nlohmann::json mask_summary(const MaskSet& set) {
  return {{"method", set.provenance.method},
          {"target_sparsity", set.provenance.target_sparsity},
          {"sparsity", sparsity(set)},
          {"pruned", set.numel() - set.nnz()},
          {"prunable", set.numel()},
          {"tensors", set.masks.size()}};
}

}  // namespace detail

/// Runs one CLI invocation. `args` excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Magnitude-sparsity analysis for transformer checkpoints", "sparsekit"};
  app.require_subcommand(1);
  app.fallthrough();
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--threads", threads, "Worker thread cap")->check(CLI::Range(1u, 4096u));

  std::function<void()> action;
  std::string in_path, out_path, format;

  // inspect
  auto* inspect = app.add_subcommand("inspect", "List tensors and parameter counts");
  detail::FilterFlags inspect_filter;
  inspect->add_option("--in", in_path, "Container file")->required();
  inspect->add_option("--format", format, "json|csv")->check(CLI::IsMember({"json", "csv"}));
  inspect_filter.add_to(inspect);
  inspect->callback([&] {
    const auto filter = inspect_filter.resolve(match_all_filter());
    const auto prunable = default_prunable_filter();
    action = [&, filter, prunable] {
      const auto c = open_container(in_path);
      const auto metas = c.list(filter);
      std::uint64_t total = 0, prunable_total = 0;
      if (format == "csv") {
        std::string text = "tensor,dtype,shape,numel,prunable\n";
        for (const auto& m : metas) {
          const bool p = prunable.matches(m.name, m.rank());
          text += csv_field(m.name) + "," + std::string(dtype_tag(m.dtype)) + "," +
                  csv_field(shape_string(m.shape)) + "," + std::to_string(m.numel()) + "," +
                  (p ? "1" : "0") + "\n";
        }
        out << text;
        return;
      }
      nlohmann::json doc;
      doc["tensors"] = nlohmann::json::array();
      for (const auto& m : metas) {
        const bool p = prunable.matches(m.name, m.rank());
        total += m.numel();
        if (p) prunable_total += m.numel();
        doc["tensors"].push_back({{"name", m.name},
                                  {"dtype", std::string(dtype_tag(m.dtype))},
                                  {"shape", m.shape},
                                  {"numel", m.numel()},
                                  {"prunable", p}});
      }
      doc["total_params"] = total;
      doc["prunable_params"] = prunable_total;
      if (c.metadata()) doc["metadata"] = *c.metadata();
      out << doc.dump(2) << "\n";
    };
  });

  // prune
  auto* prune = app.add_subcommand("prune", "One-shot magnitude pruning mask");
  detail::FilterFlags prune_filter;
  double target = 0.0;
  std::string scope = "global";
  prune->add_option("--in", in_path, "Container file")->required();
  prune->add_option("--out", out_path, "Mask file to write")->required();
  prune->add_option("--sparsity", target, "Fraction of prunable weights to remove")
      ->required()
      ->check(CLI::Range(0.0, 1.0));
  prune->add_option("--scope", scope, "global|per-tensor")->check(CLI::IsMember({"global", "per-tensor"}));
  prune_filter.add_to(prune);
  prune->callback([&] {
    PruneSpec spec;
    spec.scope = scope == "global" ? PruneScope::global : PruneScope::per_tensor;
    spec.target_sparsity = target;
    spec.prunable_filter = prune_filter.resolve(default_prunable_filter());
    spec.validate();
    action = [&, spec] {
      const auto c = open_container(in_path);
      const auto set = omp(c, spec, ExecPolicy{threads});
      write_mask(out_path, set);
      out << detail::mask_summary(set).dump() << "\n";
    };
  });

  // nm-prune
  auto* nmp = app.add_subcommand("nm-prune", "N:M structured pruning mask");
  detail::FilterFlags nm_filter;
  std::string nm_text;
  int axis = -1;
  nmp->add_option("--in", in_path, "Container file")->required();
  nmp->add_option("--out", out_path, "Mask file to write")->required();
  nmp->add_option("--nm", nm_text, "Pattern N:M, e.g. 2:4")->required();
  nmp->add_option("--axis", axis, "Grouping axis (negative counts from the end)");
  nm_filter.add_to(nmp);
  nmp->callback([&] {
    PruneSpec spec;
    spec.nm = detail::parse_nm(nm_text);
    spec.nm_axis = axis;
    spec.prunable_filter = nm_filter.resolve(default_prunable_filter());
    spec.validate();
    action = [&, spec] {
      const auto c = open_container(in_path);
      const auto set = nm_prune(c, spec, ExecPolicy{threads});
      write_mask(out_path, set);
      out << detail::mask_summary(set).dump() << "\n";
    };
  });

  // apply
  auto* app_apply = app.add_subcommand("apply", "Zero masked-out weights");
  std::string mask_path;
  bool force = false;
  app_apply->add_option("--in", in_path, "Container file")->required();
  app_apply->add_option("--mask", mask_path, "Mask file")->required();
  app_apply->add_option("--out", out_path, "Container file to write")->required();
  app_apply->add_flag("--force", force, "Skip the source digest check");
  app_apply->callback([&] {
    action = [&] {
      const auto set = read_mask(mask_path);
      const auto c = open_container(in_path);
      const auto pruned = apply(set, c, force, ExecPolicy{threads});
      std::vector<std::byte> image(pruned.source().size());
      pruned.source().read(0, image);
      write_bytes(out_path, image);
    };
  });

  // similarity
  auto* sim = app.add_subcommand("similarity", "Cosine similarity between mask files");
  std::vector<std::string> mask_paths;
  bool per_tensor = false;
  sim->add_option("masks", mask_paths, "Two or more mask files")->required()->expected(2, -1);
  sim->add_flag("--per-tensor", per_tensor, "Per-tensor breakdown (exactly two masks)");
  sim->add_option("--format", format, "json|csv")->check(CLI::IsMember({"json", "csv"}));
  sim->add_option("--out", out_path, "Write output here instead of stdout");
  sim->callback([&] {
    if (per_tensor && mask_paths.size() != 2) fail(ErrorKind::usage, "--per-tensor takes exactly two masks");
    action = [&] {
      std::vector<MaskSet> sets;
      for (const auto& p : mask_paths) sets.push_back(read_mask(p));
      if (per_tensor) {
        const auto by = cosine_by_tensor(sets[0], sets[1]);
        if (format == "json") {
          nlohmann::json doc = nlohmann::json::object();
          for (const auto& [name, v] : by) doc[name] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
          detail::emit(doc.dump(2) + "\n", out_path, out);
        } else {
          std::string text = "tensor,cosine\n";
          for (const auto& [name, v] : by) text += csv_field(name) + "," + (v ? format_double(*v) : "") + "\n";
          detail::emit(text, out_path, out);
        }
        return;
      }
      if (sets.size() == 2 && format.empty()) {
        detail::emit(format_double(cosine_similarity(sets[0], sets[1])) + "\n", out_path, out);
        return;
      }
      const auto matrix = similarity_matrix(sets, ExecPolicy{threads});
      if (format == "json") {
        detail::emit(nlohmann::json{{"masks", mask_paths}, {"matrix", matrix}}.dump(2) + "\n", out_path, out);
      } else {
        std::string text;
        for (const auto& row : matrix) {
          for (std::size_t j = 0; j < row.size(); ++j) text += (j ? "," : "") + format_double(row[j]);
          text += "\n";
        }
        detail::emit(text, out_path, out);
      }
    };
  });

  // essential
  auto* ess = app.add_subcommand("essential", "Essential-sparsity turning point of a curve");
  std::string curve_path, mode = "first";
  double eps = 0.01;
  bool drops = false;
  ess->add_option("--curve", curve_path, "Curve file (CSV or JSON)")->required();
  ess->add_option("--eps", eps, "Allowed drop below dense, in metric units")->check(CLI::NonNegativeNumber);
  ess->add_option("--mode", mode, "first|sustained")->check(CLI::IsMember({"first", "sustained"}));
  ess->add_flag("--drop", drops, "Print the drop curve instead");
  ess->callback([&] {
    const auto detect_mode = mode == "first" ? DetectMode::first_crossing : DetectMode::sustained;
    action = [&, detect_mode] {
      const auto curve = parse_curve(read_text_file(curve_path));
      if (drops) {
        std::string text = "sparsity,drop\n";
        for (const auto& [s, d] : drop_curve(curve)) text += format_double(s) + "," + format_double(d) + "\n";
        out << text;
        return;
      }
      const auto r = detect_essential(curve, eps, detect_mode);
      out << (r.essential_sparsity ? format_double(*r.essential_sparsity) : std::string("none")) << "\n";
      if (r.dense_below_threshold) err << "note: first sample is already below dense - eps\n";
    };
  });

  // census
  auto* cen = app.add_subcommand("census", "Zero-weight census of a checkpoint or series");
  detail::FilterFlags census_filter;
  std::string manifest_path;
  double tol = 0.0, min_jump = 0.05;
  auto* cen_in = cen->add_option("--in", in_path, "Single container file");
  auto* cen_manifest = cen->add_option("--manifest", manifest_path, "Series manifest JSON");
  cen_in->excludes(cen_manifest);
  cen->add_option("--tol", tol, "Count |w| <= tol as zero")->check(CLI::NonNegativeNumber);
  cen->add_option("--min-jump", min_jump, "Smallest rise reported as abrupt")->check(CLI::NonNegativeNumber);
  cen->add_option("--out", out_path, "Write output here instead of stdout");
  census_filter.add_to(cen);
  cen->callback([&] {
    if (in_path.empty() && manifest_path.empty()) fail(ErrorKind::usage, "census needs --in or --manifest");
    const auto filter = census_filter.resolve(default_prunable_filter());
    action = [&, filter] {
      if (!in_path.empty()) {
        const auto census = zero_census(open_container(in_path), filter, tol, ExecPolicy{threads});
        nlohmann::json doc{{"tolerance", census.tolerance},
                           {"total", census.total},
                           {"prunable_total", census.prunable_total},
                           {"zero_fraction", census.fraction()},
                           {"per_tensor", census.per_tensor}};
        detail::emit(doc.dump(2) + "\n", out_path, out);
        return;
      }
      const auto base = std::filesystem::path(manifest_path).parent_path();
      const auto series = parse_series_manifest(read_text_file(manifest_path), base);
      const auto points = census_series(series, filter, tol, ExecPolicy{threads});
      std::string text = "iteration,zero_fraction\n";
      for (const auto& p : points) text += std::to_string(p.iteration) + "," + format_double(p.zero_fraction) + "\n";
      if (points.size() >= 2) {
        const auto abrupt = detect_abrupt(points, min_jump);
        text += "# abrupt_iteration=" + (abrupt ? std::to_string(*abrupt) : std::string("none")) + "\n";
      }
      detail::emit(text, out_path, out);
    };
  });

  // report
  auto* rep = app.add_subcommand("report", "Weight histograms or per-component sparsity");
  detail::FilterFlags report_filter;
  std::string kind, rules_path, normalize = "none";
  std::size_t bins = 50;
  rep->add_option("--kind", kind, "histogram|components")
      ->required()
      ->check(CLI::IsMember({"histogram", "components"}));
  rep->add_option("--in", in_path, "Container file (histogram)");
  rep->add_option("--mask", mask_path, "Mask file (components)");
  rep->add_option("--bins", bins, "Histogram bin count")->check(CLI::PositiveNumber);
  rep->add_option("--normalize", normalize, "none|standardize")->check(CLI::IsMember({"none", "standardize"}));
  rep->add_option("--rules", rules_path, "Component rules file");
  rep->add_option("--format", format, "json|csv")->check(CLI::IsMember({"json", "csv"}));
  rep->add_option("--out", out_path, "Write output here instead of stdout");
  report_filter.add_to(rep);
  rep->callback([&] {
    if (kind == "histogram" && in_path.empty()) fail(ErrorKind::usage, "histogram report needs --in");
    if (kind == "components" && mask_path.empty()) fail(ErrorKind::usage, "components report needs --mask");
    const auto filter = report_filter.resolve(default_prunable_filter());
    action = [&, filter] {
      if (kind == "histogram") {
        const auto norm = normalize == "standardize" ? Normalization::standardize : Normalization::none;
        const auto report = weight_histogram(open_container(in_path), filter, bins, norm, ExecPolicy{threads});
        detail::emit(format == "json" ? histogram_json(report) : histogram_csv(report), out_path, out);
        return;
      }
      const auto rules = rules_path.empty() ? default_component_rules()
                                            : parse_component_rules(read_text_file(rules_path));
      const auto report = component_report(read_mask(mask_path), rules);
      detail::emit(format == "json" ? component_json(report) : component_csv(report), out_path, out);
    };
  });

  // synth
  auto* syn = app.add_subcommand("synth", "Write a seeded synthetic container");
  std::string dist = "normal";
  std::vector<std::string> tensor_specs;
  std::uint64_t seed = 0;
  syn->add_option("--out", out_path, "Container file to write")->required();
  syn->add_option("--dist", dist, "normal | uniform | spike:<p>, optional @<scale>");
  syn->add_option("--tensor", tensor_specs, "<name>=<d0>x<d1>[:dtype] (repeatable)")->required();
  syn->add_option("--seed", seed, "RNG seed");
  syn->callback([&] {
    SynthSpec spec;
    spec.distribution = parse_distribution(dist);
    for (const auto& t : tensor_specs) spec.tensors.push_back(parse_synth_tensor(t));
    spec.seed = seed;
    action = [&, spec] { synth(spec, out_path); };
  });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::usage ? kExitUsage : kExitData;
  }

  try {
    action();
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::usage ? kExitUsage : kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

}  // namespace sparsekit::cli
