#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "him/core_model.hpp"
#include "him/text_similarity.hpp"
#include "json.hpp"

namespace him {

enum class EntropyDirection {
  kStabilityUp,  // q uses 1 - dH: stable states raise the score
  kRawEntropy,   // q adds dH directly
};

struct ScoringConfig {
  std::size_t k = 10;
  std::array<double, 3> weights = {1.0, 0.1, 0.1};  // S_cos, dH_t, dH_s
  EntropyDirection entropy_direction = EntropyDirection::kStabilityUp;
  double boundary_margin = 0.6;  // minimum posterior for a confident class
  std::size_t hour_bins = 24;
  std::size_t scene_bins = 2;  // set from the scenario vocabulary

  bool operator==(const ScoringConfig&) const = default;
};

void validate(const ScoringConfig& cfg);

struct IntentScore {
  std::string user_id;
  std::string record_id;
  double s_cos = 0.0;
  double dh_t = 0.0;
  double dh_s = 0.0;
  double q = 0.0;
  std::optional<IntentLabel> klass;
  std::array<double, 3> posterior = {0.0, 0.0, 0.0};
  bool boundary_candidate = false;
  std::vector<std::string> evidence_ids;  // top-k history records, rank order

  bool operator==(const IntentScore&) const = default;
};

struct Neighbor {
  const InteractionRecord* record = nullptr;
  double cosine = 0.0;
};

// Embeds a history once so many targets can be ranked against it.
class HistoryIndex {
 public:
  HistoryIndex(std::span<const InteractionRecord> history, const EmbeddingProvider& provider);

  std::size_t size() const { return history_.size(); }
  std::vector<Neighbor> topk(const EmbeddingVector& target, std::size_t k) const;

 private:
  std::span<const InteractionRecord> history_;
  std::vector<EmbeddingVector> embeddings_;
};

// Descending cosine; ties go to the earlier timestamp, then the smaller record_id.
std::vector<Neighbor> topk_similar(const InteractionRecord& target, std::span<const InteractionRecord> history,
                                   const EmbeddingProvider& provider, std::size_t k);

double s_cos_topk(std::span<const Neighbor> topk);

// Normalized Shannon entropy (base 2) of a categorical sample; 0 for one support.
double normalized_entropy(std::span<const std::size_t> counts, std::size_t bins);

double temporal_offset_entropy(const InteractionRecord& target, std::span<const Neighbor> topk,
                               std::size_t hour_bins);
double scenario_offset_entropy(const InteractionRecord& target, std::span<const Neighbor> topk,
                               std::size_t scene_bins);

// Weighted sum of the three components divided by the weight sum.
double combine_q(double s_cos, double dh_t, double dh_s, const ScoringConfig& cfg);

IntentScore q_score(const InteractionRecord& target, std::span<const InteractionRecord> history,
                    const EmbeddingProvider& provider, const ScoringConfig& cfg);
IntentScore q_score(const InteractionRecord& target, const HistoryIndex& index, const EmbeddingProvider& provider,
                    const ScoringConfig& cfg);

// Scores each executing record against the user's historical records.
std::vector<IntentScore> score_history(const UserHistory& history, const EmbeddingProvider& provider,
                                       const ScoringConfig& cfg);

// Rescales q across a corpus to [0,1]; a constant corpus maps to 0.
void minmax_rescale(std::span<IntentScore> scores);

struct GaussianComponent {
  double mean = 0.0;
  double variance = 1.0;
  double weight = 0.0;
  bool operator==(const GaussianComponent&) const = default;
};

struct GaussianMixture1D {
  std::vector<GaussianComponent> components;  // ascending mean once fitted
  std::vector<double> log_likelihood_trace;   // one entry per EM iteration
  std::size_t iterations = 0;

  bool fitted() const { return components.size() == 3; }
  double log_density(std::size_t component, double x) const;
  std::array<double, 3> posterior(double x) const;
};

struct FitOptions {
  std::size_t max_iterations = 500;
  double tolerance = 1e-8;
  double variance_floor = 1e-6;
};

// Three-component EM, initialized at the 1/6, 3/6, 5/6 quantiles with the
// pooled sample variance. Needs at least 30 scores and 3 distinct values.
GaussianMixture1D fit_trimodal(std::span<const double> scores, const FitOptions& options = {});

// Class order Moment < Preference < Routine follows the component means.
std::vector<IntentScore> classify_scores(std::vector<IntentScore> scores, const GaussianMixture1D& gmm,
                                         const ScoringConfig& cfg);

nlohmann::json to_json(const IntentScore& score);
IntentScore intent_score_from_json(const nlohmann::json& raw);

// Candidates are Preference/Routine records plus every boundary record.
bool is_candidate(const IntentScore& score);
std::size_t export_candidates(std::span<const IntentScore> scored, const std::filesystem::path& out_path);
std::size_t export_candidates(std::span<const IntentScore> scored, std::ostream& out);

}  // namespace him
