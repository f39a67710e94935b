#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace him {

enum class ActionKind { kClick, kLongPress, kScroll, kType, kOpenApp, kBack, kHome, kWait, kFinished };
enum class Direction { kUp, kDown, kLeft, kRight };
enum class IntentLabel { kMoment, kPreference, kRoutine };

std::string_view to_string(ActionKind kind);
std::string_view to_string(Direction direction);
std::string_view to_string(IntentLabel label);
std::optional<ActionKind> parse_action_kind(std::string_view name);
std::optional<Direction> parse_direction(std::string_view name);
std::optional<IntentLabel> parse_intent_label(std::string_view name);

// Screen-normalized coordinates, both in [0,1].
struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

struct ActionStep {
  ActionKind kind = ActionKind::kWait;
  std::optional<Point> point;          // Click, LongPress
  std::optional<Direction> direction;  // Scroll
  std::optional<std::string> text;     // Type, OpenApp

  static ActionStep click(double x, double y) { return {ActionKind::kClick, Point{x, y}, {}, {}}; }
  static ActionStep long_press(double x, double y) { return {ActionKind::kLongPress, Point{x, y}, {}, {}}; }
  static ActionStep scroll(Direction d) { return {ActionKind::kScroll, {}, d, {}}; }
  static ActionStep type(std::string t) { return {ActionKind::kType, {}, {}, std::move(t)}; }
  static ActionStep open_app(std::string app) { return {ActionKind::kOpenApp, {}, {}, std::move(app)}; }
  static ActionStep bare(ActionKind k) { return {k, {}, {}, {}}; }

  bool operator==(const ActionStep&) const = default;
};

using Trajectory = std::vector<ActionStep>;

struct InteractionRecord {
  std::string user_id;
  std::string record_id;
  std::string instruction;
  std::int64_t timestamp = 0;  // epoch seconds, UTC
  std::string scenario;
  Trajectory actions;
  std::vector<std::string> observations;  // opaque paths, never interpreted
  std::optional<IntentLabel> label;
  std::optional<std::string> vague_instruction;

  bool operator==(const InteractionRecord&) const = default;
};

struct UserHistory {
  std::string user_id;
  std::vector<InteractionRecord> historical;
  std::vector<InteractionRecord> executing;
};

// floor(ts / 3600) mod 24, correct for negative timestamps.
int hour_of_day(std::int64_t timestamp);
// UTC calendar day index: floor(ts / 86400).
std::int64_t day_index(std::int64_t timestamp);

// Checks every per-record invariant and returns the record unchanged.
InteractionRecord validate_record(InteractionRecord candidate);
// Parses one JSONL object (schema field names are fixed) and validates it.
InteractionRecord validate_record(const nlohmann::json& raw);

nlohmann::json to_json(const ActionStep& step);
ActionStep action_from_json(const nlohmann::json& raw);
nlohmann::json to_json(const InteractionRecord& record);
nlohmann::json to_json(std::span<const ActionStep> trajectory);
Trajectory trajectory_from_json(const nlohmann::json& raw);

// Chronological split: floor(n * ratio) historical records, clamped to [1, n-1].
UserHistory split_history(std::span<const InteractionRecord> records, double ratio);

}  // namespace him
