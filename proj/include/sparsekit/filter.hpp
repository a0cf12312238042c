#pragma once

#include <fnmatch.h>

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "sparsekit/error.hpp"

namespace sparsekit {

/// Throws a usage error for patterns fnmatch(3) would silently misread:
/// an unterminated bracket expression or a dangling escape.
inline void validate_glob(std::string_view pattern) {
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    const char c = pattern[i];
    if (c == '\\') {
      if (i + 1 == pattern.size()) {
        fail(ErrorKind::usage, "invalid pattern '" + std::string(pattern) + "': trailing escape");
      }
      ++i;
    } else if (c == '[') {
      std::size_t j = i + 1;
      if (j < pattern.size() && (pattern[j] == '!' || pattern[j] == '^')) ++j;
      if (j < pattern.size() && pattern[j] == ']') ++j;
      while (j < pattern.size() && pattern[j] != ']') ++j;
      if (j >= pattern.size()) {
        fail(ErrorKind::usage, "invalid pattern '" + std::string(pattern) + "': unclosed '['");
      }
      i = j;
    }
  }
}

inline bool glob_match(const std::string& pattern, const std::string& name) {
  return ::fnmatch(pattern.c_str(), name.c_str(), 0) == 0;
}

/// Selects tensors by name and rank. A tensor passes when its name matches
/// any include pattern (an empty include list matches everything), no
/// exclude pattern, and it has at least `min_rank` dimensions.
struct NameFilter {
  std::vector<std::string> include;
  std::vector<std::string> exclude;
  std::size_t min_rank = 0;

  void validate() const {
    for (const auto& p : include) validate_glob(p);
    for (const auto& p : exclude) validate_glob(p);
  }

  bool matches(const std::string& name, std::size_t rank) const {
    if (rank < min_rank) return false;
    bool included = include.empty();
    for (const auto& p : include) {
      if (glob_match(p, name)) {
        included = true;
        break;
      }
    }
    if (!included) return false;
    for (const auto& p : exclude) {
      if (glob_match(p, name)) return false;
    }
    return true;
  }

  friend bool operator==(const NameFilter&, const NameFilter&) = default;
};

/// Matrix-shaped weights, skipping embeddings, norms and biases.
inline NameFilter default_prunable_filter() {
  return NameFilter{{"*weight*"}, {"*embed*", "*norm*", "*bias*"}, 2};
}

inline NameFilter match_all_filter() { return NameFilter{{"*"}, {}, 0}; }

}  // namespace sparsekit
