#include "him/memory_engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "him/error.hpp"
#include "him/intent_scoring.hpp"

namespace him {

namespace {

struct Distinct {
  std::size_t first_member = 0;  // earliest member holding the value
  std::size_t count = 0;
};

// Picks the member value with minimal mean distance to all other members.
// Values are deduplicated; `same(i, j)` and `dist(i, j)` take member indexes.
template <typename Same, typename Dist>
std::size_t medoid(std::size_t n, Same same, Dist dist) {
  std::vector<Distinct> groups;
  for (std::size_t i = 0; i < n; ++i) {
    auto it = std::find_if(groups.begin(), groups.end(), [&](const Distinct& g) { return same(g.first_member, i); });
    if (it == groups.end()) {
      groups.push_back({i, 1});
    } else {
      ++it->count;
    }
  }
  if (groups.size() == 1 || n == 1) return groups.front().first_member;

  std::size_t best = groups.front().first_member;
  double best_mean = std::numeric_limits<double>::infinity();
  for (const auto& g : groups) {
    double total = 0.0;
    for (const auto& h : groups) {
      const double d = dist(g.first_member, h.first_member);
      total += static_cast<double>(h.count) * d;
      if (&g == &h) total -= d;  // exclude the member itself
    }
    const double mean = total / static_cast<double>(n - 1);
    if (mean < best_mean) {
      best_mean = mean;
      best = g.first_member;
    }
  }
  return best;
}

std::vector<std::size_t> counts_of(const std::vector<int>& hours) {
  std::vector<std::size_t> counts(24, 0);
  for (int h : hours) ++counts[static_cast<std::size_t>(h)];
  return counts;
}

std::vector<std::size_t> counts_of(const std::vector<std::string>& scenes) {
  std::map<std::string_view, std::size_t> by;
  for (const auto& s : scenes) ++by[s];
  std::vector<std::size_t> counts;
  for (const auto& [_, c] : by) counts.push_back(c);
  return counts;
}

template <typename T>
T most_frequent(const std::vector<T>& values) {
  T best = values.front();
  std::size_t best_count = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    // first occurrence only, so ties resolve to the earliest seen value
    if (std::find(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(i), values[i]) !=
        values.begin() + static_cast<std::ptrdiff_t>(i)) {
      continue;
    }
    const auto c = static_cast<std::size_t>(std::count(values.begin(), values.end(), values[i]));
    if (c > best_count) {
      best_count = c;
      best = values[i];
    }
  }
  return best;
}

void add_scenario(HierarchicalMemory& memory, const std::string& scenario) {
  auto& vocab = memory.scenario_vocabulary;
  auto it = std::lower_bound(vocab.begin(), vocab.end(), scenario);
  if (it == vocab.end() || *it != scenario) vocab.insert(it, scenario);
}

RecordPrototype* find_mut(HierarchicalMemory& memory, std::uint64_t id) {
  for (auto& p : memory.prototypes) {
    if (p.prototype_id == id) return &p;
  }
  return nullptr;
}

}  // namespace

void validate(const MemoryConfig& cfg) {
  if (!(cfg.theta > 0.0 && cfg.theta < 1.0)) throw Error(ErrorCode::kBadConfig, "theta must lie in (0,1)");
  if (!(cfg.proactive_boundary > 0.0 && cfg.proactive_boundary < 1.0)) {
    throw Error(ErrorCode::kBadConfig, "proactive_boundary must lie in (0,1)");
  }
  if (cfg.l_cap < 1) throw Error(ErrorCode::kBadConfig, "l_cap must be at least 1");
  if (cfg.hour_window < 0 || cfg.hour_window > 12) throw Error(ErrorCode::kBadConfig, "hour_window must lie in [0,12]");
  if (!(cfg.scene_entropy_wildcard >= 0.0 && cfg.scene_entropy_wildcard <= 1.0)) {
    throw Error(ErrorCode::kBadConfig, "scene_entropy_wildcard must lie in [0,1]");
  }
}

const RecordPrototype* HierarchicalMemory::find(std::uint64_t id) const {
  for (const auto& p : prototypes) {
    if (p.prototype_id == id) return &p;
  }
  return nullptr;
}

const TextFeatures& FeatureCache::get(const std::string& text) const {
  {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(text); it != cache_.end()) return it->second;
  }
  auto features = text_features(provider_, text);
  std::lock_guard lock(mutex_);
  return cache_.try_emplace(text, std::move(features)).first->second;
}

double s_consist(const InteractionRecord& record, const RecordPrototype& proto, const EmbeddingProvider& provider,
                 const MatchConfig& match_cfg) {
  if (record.user_id != proto.user_id) {
    throw Error(ErrorCode::kUserMismatch, "record user " + record.user_id + " vs prototype user " + proto.user_id);
  }
  const double sim = s_sim(record.instruction, proto.center_intent, provider);
  const double act = s_action(record.actions, proto.center_action, match_cfg);
  return (sim + act) / 2.0;
}

RecordPrototype elect_centers(RecordPrototype proto, std::span<const InteractionRecord> members,
                              const FeatureCache& features, const MatchConfig& match_cfg) {
  if (proto.member_ids.empty()) throw Error(ErrorCode::kEmptyPrototype, "prototype has no members");
  std::vector<const InteractionRecord*> ordered;
  ordered.reserve(proto.member_ids.size());
  for (const auto& id : proto.member_ids) {
    auto it = std::find_if(members.begin(), members.end(), [&](const InteractionRecord& r) { return r.record_id == id; });
    if (it == members.end()) throw Error(ErrorCode::kMissingMemberData, "no record data for member " + id);
    ordered.push_back(&*it);
  }
  // Ties go to the earliest timestamp, so scan members chronologically.
  std::stable_sort(ordered.begin(), ordered.end(), [](const InteractionRecord* a, const InteractionRecord* b) {
    if (a->timestamp != b->timestamp) return a->timestamp < b->timestamp;
    return a->record_id < b->record_id;
  });
  const auto n = ordered.size();

  const auto intent = medoid(
      n, [&](std::size_t i, std::size_t j) { return ordered[i]->instruction == ordered[j]->instruction; },
      [&](std::size_t i, std::size_t j) {
        return 1.0 - s_sim(features.get(ordered[i]->instruction), features.get(ordered[j]->instruction));
      });
  const auto action = medoid(
      n, [&](std::size_t i, std::size_t j) { return ordered[i]->actions == ordered[j]->actions; },
      [&](std::size_t i, std::size_t j) { return 1.0 - s_action(ordered[i]->actions, ordered[j]->actions, match_cfg); });

  proto.center_intent = ordered[intent]->instruction;
  proto.center_action = ordered[action]->actions;
  return proto;
}

RecordPrototype elect_centers(RecordPrototype proto, std::span<const InteractionRecord> members,
                              const EmbeddingProvider& provider, const MatchConfig& match_cfg) {
  const FeatureCache features(provider);
  return elect_centers(std::move(proto), members, features, match_cfg);
}

void refresh_modal_state(RecordPrototype& proto) {
  if (proto.member_hours.empty()) throw Error(ErrorCode::kEmptyPrototype, "prototype has no members");
  proto.modal_hour = most_frequent(proto.member_hours);
  proto.modal_scenario = most_frequent(proto.member_scenarios);
}

UpdateReport ingest_day(HierarchicalMemory& memory, std::span<const InteractionRecord> day_batch,
                        const FeatureCache& features, const MemoryConfig& cfg, const MatchConfig& match_cfg) {
  UpdateReport report;
  if (day_batch.empty()) return report;

  const auto& user = day_batch.front().user_id;
  const auto day = day_index(day_batch.front().timestamp);
  for (const auto& r : day_batch) {
    if (r.user_id != user) throw Error(ErrorCode::kMixedUsers, "batch mixes users " + user + " and " + r.user_id);
    if (day_index(r.timestamp) != day) throw Error(ErrorCode::kOutOfOrderDay, "batch spans more than one UTC day");
    if (memory.records.count(r.record_id) != 0) {
      throw Error(ErrorCode::kDuplicateRecord, "record " + r.record_id + " already ingested");
    }
  }
  if (!memory.user_id.empty() && memory.user_id != user) {
    throw Error(ErrorCode::kMixedUsers, "memory belongs to " + memory.user_id + ", batch to " + user);
  }
  if (memory.day_cursor && day <= *memory.day_cursor) {
    throw Error(ErrorCode::kOutOfOrderDay,
                "day " + std::to_string(day) + " is not after cursor " + std::to_string(*memory.day_cursor));
  }
  memory.user_id = user;
  report.day = day;

  std::vector<const InteractionRecord*> ordered;
  for (const auto& r : day_batch) ordered.push_back(&r);
  std::stable_sort(ordered.begin(), ordered.end(), [](const InteractionRecord* a, const InteractionRecord* b) {
    if (a->timestamp != b->timestamp) return a->timestamp < b->timestamp;
    return a->record_id < b->record_id;
  });

  std::vector<std::uint64_t> touched;
  for (const auto* r : ordered) {
    const auto& rf = features.get(r->instruction);
    RecordPrototype* best = nullptr;
    double best_score = -std::numeric_limits<double>::infinity();
    for (auto& p : memory.prototypes) {
      const double sim = s_sim(rf, features.get(p.center_intent));
      if ((sim + 1.0) / 2.0 < cfg.theta) continue;  // cannot reach theta even with a perfect trajectory
      const double score = (sim + s_action(r->actions, p.center_action, match_cfg)) / 2.0;
      if (score > best_score) {
        best_score = score;
        best = &p;
      }
    }

    RecordPrototype* target = nullptr;
    double weight = 1.0;
    if (best != nullptr && best_score >= cfg.theta) {
      target = best;
      weight = best_score;
    } else {
      RecordPrototype fresh;
      fresh.prototype_id = memory.next_prototype_id++;
      fresh.user_id = user;
      fresh.center_intent = r->instruction;
      fresh.center_action = r->actions;
      fresh.created_day = day;
      memory.prototypes.push_back(std::move(fresh));
      target = &memory.prototypes.back();
      report.created.push_back(target->prototype_id);
    }
    target->member_ids.push_back(r->record_id);
    target->member_hours.push_back(hour_of_day(r->timestamp));
    target->member_scenarios.push_back(r->scenario);
    target->consist_weights.push_back(weight);
    target->updated_day = day;
    report.assignments.push_back({r->record_id, target->prototype_id, weight});
    if (std::find(touched.begin(), touched.end(), target->prototype_id) == touched.end()) {
      touched.push_back(target->prototype_id);
    }
    memory.records.emplace(r->record_id, *r);
    add_scenario(memory, r->scenario);
  }

  std::vector<InteractionRecord> members;
  for (auto id : touched) {
    auto* p = find_mut(memory, id);
    members.clear();
    for (const auto& m : p->member_ids) members.push_back(memory.records.at(m));
    *p = elect_centers(std::move(*p), members, features, match_cfg);
    refresh_modal_state(*p);
  }
  memory.day_cursor = day;
  return report;
}

double scenario_entropy(const RecordPrototype& proto, std::size_t scene_bins) {
  const auto counts = counts_of(proto.member_scenarios);
  return normalized_entropy(counts, scene_bins);
}

RoutineConfidence routine_confidence(const RecordPrototype& proto, const MemoryConfig& cfg, std::size_t scene_bins) {
  if (proto.member_ids.empty() || proto.consist_weights.empty() || proto.member_hours.empty()) {
    throw Error(ErrorCode::kEmptyPrototype, "prototype has no members");
  }
  RoutineConfidence rc;
  const auto hour_counts = counts_of(proto.member_hours);
  const double h_hour = normalized_entropy(hour_counts, 24);
  const double h_scene = scenario_entropy(proto, scene_bins);
  rc.h_state = 1.0 - (h_hour + h_scene) / 2.0;
  rc.l_record = std::min(1.0, static_cast<double>(proto.member_ids.size()) / static_cast<double>(cfg.l_cap));
  double sum = 0.0;
  for (double w : proto.consist_weights) sum += w;
  rc.r_consist = std::clamp(sum / static_cast<double>(proto.consist_weights.size()), 0.0, 1.0);
  if (cfg.aggregation == PhiAggregation::kArithmeticMean) {
    rc.phi = (rc.h_state + rc.l_record + rc.r_consist) / 3.0;
  } else {
    rc.phi = std::cbrt(rc.h_state * rc.l_record * rc.r_consist);
  }
  return rc;
}

RoutineConfidence routine_confidence(const RecordPrototype& proto, const HierarchicalMemory& memory,
                                     const MemoryConfig& cfg) {
  return routine_confidence(proto, cfg, memory.scenario_vocabulary.size());
}

void refresh_memories(HierarchicalMemory& memory, const MemoryConfig& cfg) {
  memory.preference_memory.clear();
  memory.routine_memory.clear();
  for (const auto& p : memory.prototypes) {
    memory.preference_memory.push_back(p.prototype_id);
    if (routine_confidence(p, memory, cfg).phi > cfg.proactive_boundary) {
      memory.routine_memory.push_back(p.prototype_id);
    }
  }
}

std::optional<PreferenceHit> query_preference(const HierarchicalMemory& memory, std::string_view vague_instruction,
                                              const FeatureCache& features, const MemoryConfig& cfg) {
  require_text(vague_instruction);
  const auto& qf = features.get(std::string(vague_instruction));
  const RecordPrototype* best = nullptr;
  double best_score = -std::numeric_limits<double>::infinity();
  for (auto id : memory.preference_memory) {
    const auto* p = memory.find(id);
    if (p == nullptr) continue;
    const double score = s_sim(qf, features.get(p->center_intent));
    if (score > best_score) {
      best_score = score;
      best = p;
    }
  }
  if (best == nullptr || best_score < cfg.theta) return std::nullopt;
  return PreferenceHit{best->prototype_id, best->center_intent, best->center_action, best_score};
}

int hour_distance(int a, int b) {
  const int d = std::abs(a - b) % 24;
  return std::min(d, 24 - d);
}

std::optional<RoutineHit> query_routine(const HierarchicalMemory& memory, std::int64_t now_ts,
                                        std::string_view now_scenario, const MemoryConfig& cfg) {
  const int hour = hour_of_day(now_ts);
  const auto scene_bins = memory.scenario_vocabulary.size();
  std::optional<RoutineHit> hit;
  for (auto id : memory.routine_memory) {
    const auto* p = memory.find(id);
    if (p == nullptr) continue;
    if (hour_distance(hour, p->modal_hour) > cfg.hour_window) continue;
    const bool scene_ok =
        p->modal_scenario == now_scenario || scenario_entropy(*p, scene_bins) > cfg.scene_entropy_wildcard;
    if (!scene_ok) continue;
    const double phi = routine_confidence(*p, cfg, scene_bins).phi;
    if (!hit || phi > hit->phi) hit = RoutineHit{p->prototype_id, p->center_intent, phi};
  }
  return hit;
}

std::vector<std::span<const InteractionRecord>> group_by_day(std::span<const InteractionRecord> records) {
  std::vector<std::span<const InteractionRecord>> days;
  std::size_t begin = 0;
  for (std::size_t i = 1; i <= records.size(); ++i) {
    if (i == records.size() || day_index(records[i].timestamp) != day_index(records[begin].timestamp)) {
      days.push_back(records.subspan(begin, i - begin));
      begin = i;
    }
  }
  return days;
}

void ingest_records(HierarchicalMemory& memory, std::span<const InteractionRecord> records,
                    const FeatureCache& features, const MemoryConfig& cfg, const MatchConfig& match_cfg) {
  validate(cfg);
  for (auto batch : group_by_day(records)) {
    if (memory.day_cursor && day_index(batch.front().timestamp) <= *memory.day_cursor) continue;
    ingest_day(memory, batch, features, cfg, match_cfg);
    refresh_memories(memory, cfg);
  }
}

std::map<std::string, HierarchicalMemory> build_memories(std::span<const InteractionRecord> records,
                                                         const FeatureCache& features, const MemoryConfig& cfg,
                                                         const MatchConfig& match_cfg) {
  std::map<std::string, HierarchicalMemory> out;
  std::size_t begin = 0;
  for (std::size_t i = 1; i <= records.size(); ++i) {
    if (i == records.size() || records[i].user_id != records[begin].user_id) {
      auto& memory = out[records[begin].user_id];
      ingest_records(memory, records.subspan(begin, i - begin), features, cfg, match_cfg);
      begin = i;
    }
  }
  return out;
}

}  // namespace him
