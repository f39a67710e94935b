#include "him/trajectory_similarity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "him/error.hpp"
#include "him/text_similarity.hpp"

namespace him {

namespace {

bool text_equal(const std::string& a, const std::string& b, TextMatch mode) {
  if (mode == TextMatch::kExact) return a == b;
  return case_fold(decode_utf8(trimmed(a))) == case_fold(decode_utf8(trimmed(b)));
}

bool params_match(const ActionStep& a, const ActionStep& b, const MatchConfig& cfg) {
  switch (a.kind) {
    case ActionKind::kClick:
    case ActionKind::kLongPress: {
      if (!a.point || !b.point) return false;
      return std::hypot(a.point->x - b.point->x, a.point->y - b.point->y) <= cfg.click_tolerance;
    }
    case ActionKind::kType:
    case ActionKind::kOpenApp:
      if (!a.text || !b.text) return false;
      return text_equal(*a.text, *b.text, cfg.text_match);
    case ActionKind::kScroll:
      return a.direction == b.direction;
    default:
      return true;
  }
}

}  // namespace

void validate(const MatchConfig& cfg) {
  if (!(cfg.click_tolerance > 0.0 && cfg.click_tolerance < 1.0)) {
    throw Error(ErrorCode::kBadConfig, "click_tolerance must lie in (0,1)");
  }
  if (!(cfg.partial_type_credit >= 0.0 && cfg.partial_type_credit < 1.0)) {
    throw Error(ErrorCode::kBadConfig, "partial_type_credit must lie in [0,1)");
  }
}

double action_match(const ActionStep& a, const ActionStep& b, const MatchConfig& cfg) {
  if (a.kind != b.kind) return 0.0;
  return params_match(a, b, cfg) ? 1.0 : cfg.partial_type_credit;
}

DtwResult dtw_distance(std::span<const ActionStep> a, std::span<const ActionStep> b, const MatchConfig& cfg) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::kEmptyTrajectory, "DTW needs two non-empty trajectories");
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  // acc[i][j]: minimal cumulative cost of a path from (0,0) to (i,j).
  std::vector<double> acc(n * m);
  const auto at = [&](std::size_t i, std::size_t j) -> double& { return acc[i * m + j]; };

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double cell = 1.0 - action_match(a[i], b[j], cfg);
      if (i == 0 && j == 0) {
        at(i, j) = cell;
        continue;
      }
      double best = std::numeric_limits<double>::infinity();
      if (i > 0 && j > 0) best = std::min(best, at(i - 1, j - 1));
      if (i > 0) best = std::min(best, at(i - 1, j));
      if (j > 0) best = std::min(best, at(i, j - 1));
      at(i, j) = best + cell;
    }
  }

  DtwResult result;
  result.cost = at(n - 1, m - 1);
  std::size_t i = n - 1;
  std::size_t j = m - 1;
  result.path.emplace_back(i, j);
  while (i > 0 || j > 0) {
    if (i == 0) {
      --j;
    } else if (j == 0) {
      --i;
    } else {
      const double diag = at(i - 1, j - 1);
      const double vert = at(i - 1, j);
      const double horz = at(i, j - 1);
      if (diag <= vert && diag <= horz) {
        --i;
        --j;
      } else if (vert <= horz) {
        --i;
      } else {
        --j;
      }
    }
    result.path.emplace_back(i, j);
  }
  std::reverse(result.path.begin(), result.path.end());
  return result;
}

double s_action(std::span<const ActionStep> a, std::span<const ActionStep> b, const MatchConfig& cfg) {
  const auto dtw = dtw_distance(a, b, cfg);
  const double longest = static_cast<double>(std::max(a.size(), b.size()));
  return std::clamp(1.0 - dtw.cost / longest, 0.0, 1.0);
}

}  // namespace him
