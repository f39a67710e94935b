#pragma once

// Shared generators and reference implementations for the test binaries.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "him/core_model.hpp"
#include "him/trajectory_similarity.hpp"

namespace him::testing {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  int range(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  double unit() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }
  bool coin(double p = 0.5) { return unit() < p; }

  template <typename T>
  const T& pick(const std::vector<T>& v) {
    return v[static_cast<std::size_t>(range(0, static_cast<int>(v.size()) - 1))];
  }

  // Small parameter alphabets so full matches, partial matches and
  // mismatches all show up often.
  ActionStep step(bool allow_finished = false) {
    const int k = range(0, allow_finished ? 7 : 6);
    switch (k) {
      case 0:
        return ActionStep::click(0.1 * range(0, 10), 0.1 * range(0, 10));
      case 1:
        return ActionStep::long_press(0.5, 0.1 * range(0, 10));
      case 2:
        return ActionStep::scroll(static_cast<Direction>(range(0, 3)));
      case 3:
        return ActionStep::type(pick(std::vector<std::string>{"coffee", "Coffee ", "tea"}));
      case 4:
        return ActionStep::open_app(pick(std::vector<std::string>{"Maps", "Mail"}));
      case 5:
        return ActionStep::bare(ActionKind::kBack);
      case 6:
        return ActionStep::bare(ActionKind::kWait);
      default:
        return ActionStep::bare(ActionKind::kFinished);
    }
  }

  Trajectory trajectory(int min_len, int max_len) {
    Trajectory t;
    const int n = range(min_len, max_len);
    for (int i = 0; i < n; ++i) t.push_back(step());
    return t;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

// Minimum over every monotone path from (0,0) to (n-1,m-1), enumerated
// explicitly with steps (1,0), (0,1), (1,1).
inline double brute_force_dtw(const Trajectory& a, const Trajectory& b, const MatchConfig& cfg) {
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  double best = std::numeric_limits<double>::infinity();
  std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t i, std::size_t j, double cost) {
    cost += 1.0 - action_match(a[i], b[j], cfg);
    if (i == n - 1 && j == m - 1) {
      best = std::min(best, cost);
      return;
    }
    if (i + 1 < n && j + 1 < m) walk(i + 1, j + 1, cost);
    if (i + 1 < n) walk(i + 1, j, cost);
    if (j + 1 < m) walk(i, j + 1, cost);
  };
  walk(0, 0, 0.0);
  return best;
}

// -sum p log2 p / log2(bins) straight from a sample.
template <typename T>
double direct_entropy(const std::vector<T>& sample, std::size_t bins) {
  std::map<T, std::size_t> counts;
  for (const auto& s : sample) ++counts[s];
  double h = 0.0;
  for (const auto& [value, c] : counts) {
    const double p = static_cast<double>(c) / static_cast<double>(sample.size());
    h -= p * std::log2(p);
  }
  return h / std::log2(static_cast<double>(bins));
}

inline InteractionRecord make_record(std::string user, std::string id, std::string instruction, std::int64_t ts,
                                     std::string scenario, Trajectory actions) {
  InteractionRecord r;
  r.user_id = std::move(user);
  r.record_id = std::move(id);
  r.instruction = std::move(instruction);
  r.timestamp = ts;
  r.scenario = std::move(scenario);
  r.actions = std::move(actions);
  return r;
}

}  // namespace him::testing
