#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "him/core_model.hpp"
#include "him/text_similarity.hpp"
#include "him/trajectory_similarity.hpp"

namespace him {

// How the three routine-confidence terms combine into phi.
enum class PhiAggregation {
  kGeometricMean,   // cube root of the product; every term must be high
  kArithmeticMean,  // plain average
};

struct MemoryConfig {
  double theta = 0.6;               // assignment threshold on s_consist
  double proactive_boundary = 0.6;  // phi must exceed this for routine memory
  std::size_t l_cap = 10;           // member count at which l_record saturates
  int hour_window = 1;              // +/- hours for a proactive state match
  double scene_entropy_wildcard = 0.8;
  PhiAggregation aggregation = PhiAggregation::kGeometricMean;

  bool operator==(const MemoryConfig&) const = default;
};

void validate(const MemoryConfig& cfg);

struct RecordPrototype {
  std::uint64_t prototype_id = 0;
  std::string user_id;
  std::vector<std::string> member_ids;  // assignment order
  std::vector<int> member_hours;
  std::vector<std::string> member_scenarios;
  std::vector<double> consist_weights;  // s_consist of each member when it joined
  std::string center_intent;
  Trajectory center_action;
  int modal_hour = 0;
  std::string modal_scenario;
  std::int64_t created_day = 0;
  std::int64_t updated_day = 0;

  bool operator==(const RecordPrototype&) const = default;
};

struct RoutineConfidence {
  double h_state = 0.0;
  double l_record = 0.0;
  double r_consist = 0.0;
  double phi = 0.0;
};

struct HierarchicalMemory {
  std::string user_id;
  std::vector<RecordPrototype> prototypes;  // creation order, ids ascending
  std::vector<std::uint64_t> preference_memory;
  std::vector<std::uint64_t> routine_memory;
  std::optional<std::int64_t> day_cursor;
  std::uint64_t next_prototype_id = 1;
  std::vector<std::string> scenario_vocabulary;           // sorted
  std::map<std::string, InteractionRecord> records;       // member data by record_id

  const RecordPrototype* find(std::uint64_t id) const;
  bool operator==(const HierarchicalMemory&) const = default;
};

// Memoizes instruction features; safe for concurrent readers.
class FeatureCache {
 public:
  explicit FeatureCache(const EmbeddingProvider& provider) : provider_(provider) {}
  const TextFeatures& get(const std::string& text) const;
  const EmbeddingProvider& provider() const { return provider_; }

 private:
  const EmbeddingProvider& provider_;
  mutable std::mutex mutex_;
  mutable std::unordered_map<std::string, TextFeatures> cache_;
};

double s_consist(const InteractionRecord& record, const RecordPrototype& proto, const EmbeddingProvider& provider,
                 const MatchConfig& match_cfg);

struct Assignment {
  std::string record_id;
  std::uint64_t prototype_id = 0;
  double score = 0.0;
};

struct UpdateReport {
  std::int64_t day = 0;
  std::vector<Assignment> assignments;
  std::vector<std::uint64_t> created;
};

// Medoid election over members, instruction and trajectory independently.
// `members` must hold a record for every member id.
RecordPrototype elect_centers(RecordPrototype proto, std::span<const InteractionRecord> members,
                              const FeatureCache& features, const MatchConfig& match_cfg);
RecordPrototype elect_centers(RecordPrototype proto, std::span<const InteractionRecord> members,
                              const EmbeddingProvider& provider, const MatchConfig& match_cfg);

// Recomputes modal hour/scenario (most frequent, ties to the earliest seen).
void refresh_modal_state(RecordPrototype& proto);

UpdateReport ingest_day(HierarchicalMemory& memory, std::span<const InteractionRecord> day_batch,
                        const FeatureCache& features, const MemoryConfig& cfg, const MatchConfig& match_cfg);

double scenario_entropy(const RecordPrototype& proto, std::size_t scene_bins);
RoutineConfidence routine_confidence(const RecordPrototype& proto, const MemoryConfig& cfg, std::size_t scene_bins);
RoutineConfidence routine_confidence(const RecordPrototype& proto, const HierarchicalMemory& memory,
                                     const MemoryConfig& cfg);

void refresh_memories(HierarchicalMemory& memory, const MemoryConfig& cfg);

struct PreferenceHit {
  std::uint64_t prototype_id = 0;
  std::string center_intent;
  Trajectory center_action;
  double score = 0.0;
};

struct RoutineHit {
  std::uint64_t prototype_id = 0;
  std::string suggestion;
  double phi = 0.0;
};

std::optional<PreferenceHit> query_preference(const HierarchicalMemory& memory, std::string_view vague_instruction,
                                              const FeatureCache& features, const MemoryConfig& cfg);
std::optional<RoutineHit> query_routine(const HierarchicalMemory& memory, std::int64_t now_ts,
                                        std::string_view now_scenario, const MemoryConfig& cfg);

// Circular distance between two hours of day.
int hour_distance(int a, int b);

// Splits timestamp-sorted records of one user into UTC-day batches.
std::vector<std::span<const InteractionRecord>> group_by_day(std::span<const InteractionRecord> records);

// Streams one user's sorted records day by day, refreshing after each day.
void ingest_records(HierarchicalMemory& memory, std::span<const InteractionRecord> records,
                    const FeatureCache& features, const MemoryConfig& cfg, const MatchConfig& match_cfg);

// One memory per user. Records must be sorted by (user_id, timestamp).
std::map<std::string, HierarchicalMemory> build_memories(std::span<const InteractionRecord> records,
                                                         const FeatureCache& features, const MemoryConfig& cfg,
                                                         const MatchConfig& match_cfg);

}  // namespace him
