#pragma once

#include <string_view>
#include <vector>

#include "scribe/common.hpp"

namespace scribe {

/// Unit-cost edit distance (insert/delete/substitute), two-row DP.
inline int edit_distance(std::string_view a, std::string_view b) {
  const size_t n = b.size();
  std::vector<int> prev(n + 1), cur(n + 1);
  for (size_t j = 0; j <= n; ++j) prev[j] = static_cast<int>(j);
  for (size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= n; ++j) {
      int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[n];
}

/// Character error rate: edit distance normalized by reference length.
/// Can exceed 1.0 when the hypothesis has many insertions.
inline double cer(std::string_view hyp, std::string_view ref) {
  if (ref.empty()) throw DomainError("cer: reference must be non-empty");
  return static_cast<double>(edit_distance(hyp, ref)) / static_cast<double>(ref.size());
}

}  // namespace scribe
