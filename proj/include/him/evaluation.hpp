#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "him/core_model.hpp"
#include "him/memory_engine.hpp"
#include "him/text_similarity.hpp"
#include "him/trajectory_similarity.hpp"
#include "json.hpp"

namespace him {

struct ExecEvalCase {
  std::string instruction_given;
  Trajectory gold_trajectory;  // user actions, treated as golden
  Trajectory predicted_trajectory;
};

struct ProactiveEvalCase {
  std::int64_t timestamp = 0;
  std::string scenario;
  bool is_positive = false;
  std::optional<std::string> gold_intent;  // present iff positive
  bool decision = false;
  std::optional<std::string> suggestion;  // present iff decision
};

struct ExecMetrics {
  double type_acc = 0.0;  // all in [0,100]
  double ssr = 0.0;
  double cer = 0.0;
};

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;
  bool operator==(const ConfusionCounts&) const = default;
};

struct IdentificationMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double false_alarm = 0.0;
  double f1 = 0.0;
  ConfusionCounts counts;
};

struct EvalReport {
  double type_acc = 0.0;
  double ssr = 0.0;
  double cer = 0.0;
  double semantic = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double false_alarm = 0.0;
  double f1 = 0.0;
  ConfusionCounts counts;
};

nlohmann::json to_json(const EvalReport& report);

// Full match only; partial credit is a failure.
bool step_success(const ActionStep& pred, const ActionStep& gold, const MatchConfig& match_cfg);

// Positional alignment against the gold trajectory. CER weights step j by
// gamma^j normalized over the gold length, so early steps count more.
ExecMetrics exec_metrics(const ExecEvalCase& c, const MatchConfig& match_cfg, double gamma);

// Mean of embedding cosine and edit similarity.
double proactive_semantic(std::string_view suggestion, std::string_view gold_intent,
                          const EmbeddingProvider& provider);

IdentificationMetrics identification_metrics(std::span<const ProactiveEvalCase> cases);

// Case-mean Type/SSR/CER; proactive fields stay zero.
EvalReport evaluate_exec(std::span<const ExecEvalCase> cases, const MatchConfig& match_cfg, double gamma);
// Identification metrics plus mean semantic score over triggered positives.
EvalReport evaluate_proactive(std::span<const ProactiveEvalCase> cases, const EmbeddingProvider& provider);

struct SynthConfig {
  std::size_t users = 1;
  std::size_t days = 60;
  std::size_t routines = 3;
  std::size_t preferences = 8;
  double noise_rate = 0.5;  // target fraction of one-off records per user
  std::uint64_t seed = 7;
  std::int64_t start_timestamp = 1704067200;  // 2024-01-01T00:00:00Z
};

struct RoutinePattern {
  std::string user_id;
  std::string instruction;
  int hour = 0;
  std::string scenario;
  Trajectory trajectory;
};

struct PreferencePattern {
  std::string user_id;
  std::string instruction;
  std::string vague_instruction;
  Trajectory trajectory;
};

struct SyntheticCorpus {
  std::vector<InteractionRecord> records;  // sorted by (user_id, timestamp), labels planted
  std::vector<RoutinePattern> routines;
  std::vector<PreferencePattern> preferences;
  std::vector<std::string> scenarios;
};

const std::vector<std::string>& synthetic_scenarios();

SyntheticCorpus generate_synthetic_history(const SynthConfig& cfg);

struct NegativeState {
  std::string user_id;
  std::int64_t timestamp = 0;
  std::string scenario;
};

// States that miss every planted routine of their user: off by more than
// `hour_window` hours or in a different scenario.
std::vector<NegativeState> generate_negative_states(const SyntheticCorpus& corpus, std::size_t count,
                                                    std::uint64_t seed, int hour_window);

// Stand-in agent that replays memory contents.
Trajectory replay_execution(const HierarchicalMemory& memory, std::string_view instruction,
                            const FeatureCache& features, const MemoryConfig& cfg);

struct ProactiveDecision {
  bool decision = false;
  std::optional<std::string> suggestion;
};

ProactiveDecision replay_proactive(const HierarchicalMemory& memory, std::int64_t timestamp,
                                   std::string_view scenario, const MemoryConfig& cfg);

}  // namespace him
