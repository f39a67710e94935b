#include "him/core_model.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "him/error.hpp"

namespace him {

namespace {

constexpr std::array<std::string_view, 9> kKindNames = {
    "Click", "LongPress", "Scroll", "Type", "OpenApp", "Back", "Home", "Wait", "Finished"};
constexpr std::array<std::string_view, 4> kDirectionNames = {"Up", "Down", "Left", "Right"};
constexpr std::array<std::string_view, 3> kLabelNames = {"Moment", "Preference", "Routine"};

bool needs_point(ActionKind k) { return k == ActionKind::kClick || k == ActionKind::kLongPress; }
bool needs_direction(ActionKind k) { return k == ActionKind::kScroll; }
bool needs_text(ActionKind k) { return k == ActionKind::kType || k == ActionKind::kOpenApp; }

bool is_blank(std::string_view s) {
  return s.find_first_not_of(" \t\r\n") == std::string_view::npos;
}

void validate_step(const ActionStep& step, std::size_t index, std::size_t count) {
  const auto where = "action " + std::to_string(index) + " (" + std::string(to_string(step.kind)) + ")";
  if (needs_point(step.kind) != step.point.has_value()) {
    throw Error(ErrorCode::kKindFieldMismatch, where + ": point present iff Click/LongPress");
  }
  if (needs_direction(step.kind) != step.direction.has_value()) {
    throw Error(ErrorCode::kKindFieldMismatch, where + ": direction present iff Scroll");
  }
  if (needs_text(step.kind) != step.text.has_value()) {
    throw Error(ErrorCode::kKindFieldMismatch, where + ": text present iff Type/OpenApp");
  }
  if (step.point) {
    const auto in_unit = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
    if (!in_unit(step.point->x) || !in_unit(step.point->y)) {
      throw Error(ErrorCode::kBadCoordinate, where + ": coordinates must lie in [0,1]");
    }
  }
  if (step.kind == ActionKind::kFinished && index + 1 != count) {
    throw Error(ErrorCode::kKindFieldMismatch, where + ": Finished must be the final step");
  }
}

const nlohmann::json& require(const nlohmann::json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) {
    throw Error(ErrorCode::kMissingField, std::string("missing field '") + key + "'");
  }
  return *it;
}

std::string require_string(const nlohmann::json& obj, const char* key) {
  const auto& v = require(obj, key);
  if (!v.is_string()) {
    throw Error(ErrorCode::kMissingField, std::string("field '") + key + "' must be a string");
  }
  return v.get<std::string>();
}

std::optional<std::string> optional_string(const nlohmann::json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) {
    throw Error(ErrorCode::kMissingField, std::string("field '") + key + "' must be a string");
  }
  return it->get<std::string>();
}

}  // namespace

std::string_view to_string(ActionKind kind) { return kKindNames[static_cast<std::size_t>(kind)]; }
std::string_view to_string(Direction direction) { return kDirectionNames[static_cast<std::size_t>(direction)]; }
std::string_view to_string(IntentLabel label) { return kLabelNames[static_cast<std::size_t>(label)]; }

std::optional<ActionKind> parse_action_kind(std::string_view name) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i) {
    if (kKindNames[i] == name) return static_cast<ActionKind>(i);
  }
  return std::nullopt;
}

std::optional<Direction> parse_direction(std::string_view name) {
  for (std::size_t i = 0; i < kDirectionNames.size(); ++i) {
    if (kDirectionNames[i] == name) return static_cast<Direction>(i);
  }
  return std::nullopt;
}

std::optional<IntentLabel> parse_intent_label(std::string_view name) {
  for (std::size_t i = 0; i < kLabelNames.size(); ++i) {
    if (kLabelNames[i] == name) return static_cast<IntentLabel>(i);
  }
  return std::nullopt;
}

int hour_of_day(std::int64_t timestamp) {
  std::int64_t hours = timestamp / 3600;
  if (timestamp % 3600 < 0) --hours;
  auto h = hours % 24;
  if (h < 0) h += 24;
  return static_cast<int>(h);
}

std::int64_t day_index(std::int64_t timestamp) {
  std::int64_t day = timestamp / 86400;
  if (timestamp % 86400 < 0) --day;
  return day;
}

InteractionRecord validate_record(InteractionRecord candidate) {
  if (candidate.user_id.empty()) throw Error(ErrorCode::kMissingField, "user_id is empty");
  if (candidate.record_id.empty()) throw Error(ErrorCode::kMissingField, "record_id is empty");
  if (is_blank(candidate.instruction)) throw Error(ErrorCode::kMissingField, "instruction is empty");
  if (candidate.actions.empty()) {
    throw Error(ErrorCode::kEmptyTrajectory, "record " + candidate.record_id + " has no actions");
  }
  for (std::size_t i = 0; i < candidate.actions.size(); ++i) {
    validate_step(candidate.actions[i], i, candidate.actions.size());
  }
  if (candidate.vague_instruction && candidate.label != IntentLabel::kPreference) {
    throw Error(ErrorCode::kBadLabel, "vague_instruction is only allowed on Preference records");
  }
  return candidate;
}

ActionStep action_from_json(const nlohmann::json& raw) {
  if (!raw.is_object()) throw Error(ErrorCode::kMissingField, "action must be an object");
  const auto kind_name = require_string(raw, "kind");
  const auto kind = parse_action_kind(kind_name);
  if (!kind) throw Error(ErrorCode::kUnknownKind, "unknown action kind '" + kind_name + "'");

  ActionStep step;
  step.kind = *kind;
  if (auto it = raw.find("point"); it != raw.end() && !it->is_null()) {
    if (!it->is_array() || it->size() != 2 || !(*it)[0].is_number() || !(*it)[1].is_number()) {
      throw Error(ErrorCode::kBadCoordinate, "point must be [x, y]");
    }
    step.point = Point{(*it)[0].get<double>(), (*it)[1].get<double>()};
  }
  if (auto dir = optional_string(raw, "direction")) {
    auto parsed = parse_direction(*dir);
    if (!parsed) throw Error(ErrorCode::kKindFieldMismatch, "unknown scroll direction '" + *dir + "'");
    step.direction = *parsed;
  }
  step.text = optional_string(raw, "text");
  return step;
}

Trajectory trajectory_from_json(const nlohmann::json& raw) {
  if (!raw.is_array()) throw Error(ErrorCode::kMissingField, "actions must be an array");
  Trajectory out;
  out.reserve(raw.size());
  for (const auto& a : raw) out.push_back(action_from_json(a));
  return out;
}

InteractionRecord validate_record(const nlohmann::json& raw) {
  if (!raw.is_object()) throw Error(ErrorCode::kMissingField, "record must be a JSON object");
  InteractionRecord r;
  r.user_id = require_string(raw, "user_id");
  r.record_id = require_string(raw, "record_id");
  r.instruction = require_string(raw, "instruction");
  const auto& ts = require(raw, "timestamp");
  if (!ts.is_number_integer()) throw Error(ErrorCode::kMissingField, "timestamp must be an integer");
  r.timestamp = ts.get<std::int64_t>();
  r.scenario = require_string(raw, "scenario");
  r.actions = trajectory_from_json(require(raw, "actions"));
  if (auto it = raw.find("observations"); it != raw.end() && !it->is_null()) {
    if (!it->is_array()) throw Error(ErrorCode::kMissingField, "observations must be an array");
    for (const auto& o : *it) {
      if (!o.is_string()) throw Error(ErrorCode::kMissingField, "observations must be strings");
      r.observations.push_back(o.get<std::string>());
    }
  }
  if (auto label = optional_string(raw, "label")) {
    auto parsed = parse_intent_label(*label);
    if (!parsed) throw Error(ErrorCode::kBadLabel, "unknown label '" + *label + "'");
    r.label = *parsed;
  }
  r.vague_instruction = optional_string(raw, "vague_instruction");
  return validate_record(std::move(r));
}

nlohmann::json to_json(const ActionStep& step) {
  nlohmann::json j;
  j["kind"] = to_string(step.kind);
  if (step.point) j["point"] = {step.point->x, step.point->y};
  if (step.direction) j["direction"] = to_string(*step.direction);
  if (step.text) j["text"] = *step.text;
  return j;
}

nlohmann::json to_json(std::span<const ActionStep> trajectory) {
  auto j = nlohmann::json::array();
  for (const auto& s : trajectory) j.push_back(to_json(s));
  return j;
}

nlohmann::json to_json(const InteractionRecord& record) {
  nlohmann::json j;
  j["user_id"] = record.user_id;
  j["record_id"] = record.record_id;
  j["instruction"] = record.instruction;
  j["timestamp"] = record.timestamp;
  j["scenario"] = record.scenario;
  j["actions"] = to_json(std::span<const ActionStep>(record.actions));
  if (!record.observations.empty()) j["observations"] = record.observations;
  if (record.label) j["label"] = to_string(*record.label);
  if (record.vague_instruction) j["vague_instruction"] = *record.vague_instruction;
  return j;
}

UserHistory split_history(std::span<const InteractionRecord> records, double ratio) {
  if (records.size() < 2) {
    throw Error(ErrorCode::kTooFewRecords, "need at least 2 records, got " + std::to_string(records.size()));
  }
  if (!(ratio > 0.0 && ratio < 1.0)) throw Error(ErrorCode::kBadConfig, "split ratio must lie in (0,1)");
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].timestamp < records[i - 1].timestamp) {
      throw Error(ErrorCode::kUnsortedInput, "records are not sorted by timestamp at index " + std::to_string(i));
    }
  }
  const auto n = records.size();
  auto cut = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratio));
  cut = std::clamp<std::size_t>(cut, 1, n - 1);

  UserHistory h;
  h.user_id = records.front().user_id;
  h.historical.assign(records.begin(), records.begin() + static_cast<std::ptrdiff_t>(cut));
  h.executing.assign(records.begin() + static_cast<std::ptrdiff_t>(cut), records.end());
  return h;
}

}  // namespace him
