#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "him/core_model.hpp"

namespace him {

enum class TextMatch { kExact, kCaseFoldTrim };

struct MatchConfig {
  double click_tolerance = 0.14;  // Euclidean, normalized screen units
  TextMatch text_match = TextMatch::kCaseFoldTrim;
  double partial_type_credit = 0.5;

  bool operator==(const MatchConfig&) const = default;
};

void validate(const MatchConfig& cfg);

// 1 for a full match, partial_type_credit for same kind with differing
// parameters, 0 for different kinds.
double action_match(const ActionStep& a, const ActionStep& b, const MatchConfig& cfg);

struct DtwResult {
  double cost = 0.0;
  std::vector<std::pair<std::size_t, std::size_t>> path;
};

// Step set {(1,0),(0,1),(1,1)}, cell cost 1 - action_match. Backtracking
// prefers the diagonal, then the vertical (i-1, j) move.
DtwResult dtw_distance(std::span<const ActionStep> a, std::span<const ActionStep> b, const MatchConfig& cfg);

// 1 - cost / max(|a|, |b|), clamped to [0,1].
double s_action(std::span<const ActionStep> a, std::span<const ActionStep> b, const MatchConfig& cfg);

}  // namespace him
