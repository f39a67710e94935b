#include "him/intent_scoring.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <ostream>

#include "him/error.hpp"

namespace him {

namespace {

bool neighbor_before(const Neighbor& a, const Neighbor& b) {
  if (a.cosine != b.cosine) return a.cosine > b.cosine;
  if (a.record->timestamp != b.record->timestamp) return a.record->timestamp < b.record->timestamp;
  return a.record->record_id < b.record->record_id;
}

void require_topk(std::span<const Neighbor> topk) {
  if (topk.empty()) throw Error(ErrorCode::kEmptyTopK, "top-k neighbor list is empty");
}

double quantile(const std::vector<double>& sorted, double p) {
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double log_sum_exp(const std::array<double, 3>& v) {
  const double top = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(top)) return top;
  double s = 0.0;
  for (double x : v) s += std::exp(x - top);
  return top + std::log(s);
}

}  // namespace

void validate(const ScoringConfig& cfg) {
  if (cfg.k < 1) throw Error(ErrorCode::kBadConfig, "k must be at least 1");
  double total = 0.0;
  for (double w : cfg.weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw Error(ErrorCode::kBadConfig, "weights must be non-negative");
    total += w;
  }
  if (!(total > 0.0)) throw Error(ErrorCode::kBadConfig, "weights must not all be zero");
  if (!(cfg.boundary_margin >= 1.0 / 3.0 && cfg.boundary_margin <= 1.0)) {
    throw Error(ErrorCode::kBadConfig, "boundary_margin must lie in [1/3, 1]");
  }
  if (cfg.hour_bins < 2 || cfg.hour_bins > 24) throw Error(ErrorCode::kBadConfig, "hour_bins must lie in [2, 24]");
  if (cfg.scene_bins < 2) throw Error(ErrorCode::kTooFewScenes, "scene_bins must be at least 2");
}

HistoryIndex::HistoryIndex(std::span<const InteractionRecord> history, const EmbeddingProvider& provider)
    : history_(history) {
  embeddings_.reserve(history.size());
  for (const auto& r : history) embeddings_.push_back(provider.embed(r.instruction));
}

std::vector<Neighbor> HistoryIndex::topk(const EmbeddingVector& target, std::size_t k) const {
  if (history_.empty()) throw Error(ErrorCode::kEmptyHistory, "history is empty");
  std::vector<Neighbor> all;
  all.reserve(history_.size());
  for (std::size_t i = 0; i < history_.size(); ++i) {
    all.push_back(Neighbor{&history_[i], cosine(target, embeddings_[i])});
  }
  const auto keep = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), neighbor_before);
  all.resize(keep);
  return all;
}

std::vector<Neighbor> topk_similar(const InteractionRecord& target, std::span<const InteractionRecord> history,
                                   const EmbeddingProvider& provider, std::size_t k) {
  if (history.empty()) throw Error(ErrorCode::kEmptyHistory, "history is empty");
  return HistoryIndex(history, provider).topk(provider.embed(target.instruction), k);
}

double s_cos_topk(std::span<const Neighbor> topk) {
  require_topk(topk);
  double sum = 0.0;
  for (const auto& n : topk) sum += n.cosine;
  return sum / static_cast<double>(topk.size());
}

double normalized_entropy(std::span<const std::size_t> counts, std::size_t bins) {
  if (bins < 2) return 0.0;
  std::size_t total = 0;
  std::size_t support = 0;
  std::size_t first = 0;
  bool equal = true;
  for (auto c : counts) {
    if (c == 0) continue;
    if (support == 0) first = c;
    equal = equal && c == first;
    total += c;
    ++support;
  }
  if (support <= 1) return 0.0;
  double h = 0.0;
  if (equal) {
    h = std::log2(static_cast<double>(support));
  } else {
    const double n = static_cast<double>(total);
    for (auto c : counts) {
      if (c == 0) continue;
      const double p = static_cast<double>(c) / n;
      h -= p * std::log2(p);
    }
  }
  return std::clamp(h / std::log2(static_cast<double>(bins)), 0.0, 1.0);
}

double temporal_offset_entropy(const InteractionRecord& target, std::span<const Neighbor> topk,
                               std::size_t hour_bins) {
  require_topk(topk);
  if (hour_bins < 2 || hour_bins > 24) throw Error(ErrorCode::kBadConfig, "hour_bins must lie in [2, 24]");
  std::vector<std::size_t> counts(hour_bins, 0);
  const int base = hour_of_day(target.timestamp);
  for (const auto& n : topk) {
    const int offset = ((hour_of_day(n.record->timestamp) - base) % 24 + 24) % 24;
    ++counts[static_cast<std::size_t>(offset) * hour_bins / 24];
  }
  return normalized_entropy(counts, hour_bins);
}

double scenario_offset_entropy(const InteractionRecord& target, std::span<const Neighbor> topk,
                               std::size_t scene_bins) {
  (void)target;  // categorical offsets: only the neighbors' own scenarios matter
  require_topk(topk);
  if (scene_bins < 2) throw Error(ErrorCode::kTooFewScenes, "scene_bins must be at least 2");
  std::map<std::string_view, std::size_t> by_scene;
  for (const auto& n : topk) ++by_scene[n.record->scenario];
  std::vector<std::size_t> counts;
  counts.reserve(by_scene.size());
  for (const auto& [scene, c] : by_scene) counts.push_back(c);
  return normalized_entropy(counts, scene_bins);
}

double combine_q(double s_cos, double dh_t, double dh_s, const ScoringConfig& cfg) {
  const auto& w = cfg.weights;
  double raw = w[0] * s_cos;
  if (cfg.entropy_direction == EntropyDirection::kStabilityUp) {
    raw += w[1] * (1.0 - dh_t) + w[2] * (1.0 - dh_s);
  } else {
    raw += w[1] * dh_t + w[2] * dh_s;
  }
  return raw / (w[0] + w[1] + w[2]);
}

IntentScore q_score(const InteractionRecord& target, const HistoryIndex& index, const EmbeddingProvider& provider,
                    const ScoringConfig& cfg) {
  if (index.size() == 0) throw Error(ErrorCode::kEmptyHistory, "history is empty");
  const auto topk = index.topk(provider.embed(target.instruction), cfg.k);
  IntentScore s;
  s.user_id = target.user_id;
  s.record_id = target.record_id;
  s.s_cos = s_cos_topk(topk);
  s.dh_t = temporal_offset_entropy(target, topk, cfg.hour_bins);
  s.dh_s = scenario_offset_entropy(target, topk, cfg.scene_bins);
  s.q = combine_q(s.s_cos, s.dh_t, s.dh_s, cfg);
  s.evidence_ids.reserve(topk.size());
  for (const auto& n : topk) s.evidence_ids.push_back(n.record->record_id);
  return s;
}

IntentScore q_score(const InteractionRecord& target, std::span<const InteractionRecord> history,
                    const EmbeddingProvider& provider, const ScoringConfig& cfg) {
  if (history.empty()) throw Error(ErrorCode::kEmptyHistory, "history is empty");
  return q_score(target, HistoryIndex(history, provider), provider, cfg);
}

std::vector<IntentScore> score_history(const UserHistory& history, const EmbeddingProvider& provider,
                                       const ScoringConfig& cfg) {
  validate(cfg);
  const HistoryIndex index(history.historical, provider);
  std::vector<IntentScore> out;
  out.reserve(history.executing.size());
  for (const auto& r : history.executing) out.push_back(q_score(r, index, provider, cfg));
  return out;
}

void minmax_rescale(std::span<IntentScore> scores) {
  if (scores.empty()) return;
  auto [lo, hi] = std::minmax_element(scores.begin(), scores.end(),
                                      [](const IntentScore& a, const IntentScore& b) { return a.q < b.q; });
  const double min = lo->q;
  const double range = hi->q - min;
  for (auto& s : scores) s.q = range > 0.0 ? (s.q - min) / range : 0.0;
}

double GaussianMixture1D::log_density(std::size_t component, double x) const {
  const auto& c = components.at(component);
  const double d = x - c.mean;
  return std::log(c.weight) - 0.5 * std::log(2.0 * std::numbers::pi * c.variance) - d * d / (2.0 * c.variance);
}

std::array<double, 3> GaussianMixture1D::posterior(double x) const {
  if (!fitted()) throw Error(ErrorCode::kUnfittedMixture, "mixture has not been fitted");
  std::array<double, 3> lp{};
  for (std::size_t k = 0; k < 3; ++k) lp[k] = log_density(k, x);
  const double norm = log_sum_exp(lp);
  std::array<double, 3> post{};
  double sum = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    post[k] = std::exp(lp[k] - norm);
    sum += post[k];
  }
  for (auto& p : post) p /= sum;
  return post;
}

GaussianMixture1D fit_trimodal(std::span<const double> scores, const FitOptions& options) {
  if (scores.size() < 30) {
    throw Error(ErrorCode::kTooFewScores, "need at least 30 scores, got " + std::to_string(scores.size()));
  }
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  const auto distinct =
      static_cast<std::size_t>(std::distance(sorted.begin(), std::unique(sorted.begin(), sorted.end())));
  if (distinct < 3) throw Error(ErrorCode::kDegenerateScores, "need at least 3 distinct score values");
  sorted.assign(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());

  const double n = static_cast<double>(scores.size());
  double mean = 0.0;
  for (double x : scores) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : scores) var += (x - mean) * (x - mean);
  var = std::max(var / n, options.variance_floor);

  GaussianMixture1D gmm;
  for (double p : {1.0 / 6.0, 3.0 / 6.0, 5.0 / 6.0}) {
    gmm.components.push_back({quantile(sorted, p), var, 1.0 / 3.0});
  }

  std::vector<std::array<double, 3>> resp(scores.size());
  const auto e_step = [&] {
    double ll = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      std::array<double, 3> lp{};
      for (std::size_t k = 0; k < 3; ++k) lp[k] = gmm.log_density(k, scores[i]);
      const double norm = log_sum_exp(lp);
      ll += norm;
      for (std::size_t k = 0; k < 3; ++k) resp[i][k] = std::exp(lp[k] - norm);
    }
    return ll;
  };

  double ll = e_step();
  gmm.log_likelihood_trace.push_back(ll);
  for (std::size_t iter = 0; iter < options.max_iterations; ++iter) {
    // M-step
    double weight_sum = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      double nk = 0.0;
      double sx = 0.0;
      for (std::size_t i = 0; i < scores.size(); ++i) {
        nk += resp[i][k];
        sx += resp[i][k] * scores[i];
      }
      auto& c = gmm.components[k];
      if (nk > 1e-12) {
        c.mean = sx / nk;
        double sv = 0.0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
          const double d = scores[i] - c.mean;
          sv += resp[i][k] * d * d;
        }
        c.variance = std::max(sv / nk, options.variance_floor);
        c.weight = nk / n;
      }
      weight_sum += c.weight;
    }
    for (auto& c : gmm.components) c.weight /= weight_sum;

    const double next = e_step();
    gmm.log_likelihood_trace.push_back(next);
    gmm.iterations = iter + 1;
    const bool converged = next - ll < options.tolerance;
    ll = next;
    if (converged) break;
  }

  std::sort(gmm.components.begin(), gmm.components.end(),
            [](const GaussianComponent& a, const GaussianComponent& b) { return a.mean < b.mean; });
  return gmm;
}

std::vector<IntentScore> classify_scores(std::vector<IntentScore> scores, const GaussianMixture1D& gmm,
                                         const ScoringConfig& cfg) {
  if (!gmm.fitted()) throw Error(ErrorCode::kUnfittedMixture, "mixture has not been fitted");
  for (auto& s : scores) {
    s.posterior = gmm.posterior(s.q);
    std::size_t best = 0;
    for (std::size_t k = 1; k < 3; ++k) {
      if (s.posterior[k] > s.posterior[best]) best = k;
    }
    s.klass = static_cast<IntentLabel>(best);
    s.boundary_candidate = s.posterior[best] < cfg.boundary_margin;
  }
  return scores;
}

nlohmann::json to_json(const IntentScore& score) {
  nlohmann::json j;
  j["user_id"] = score.user_id;
  j["record_id"] = score.record_id;
  j["klass"] = score.klass ? nlohmann::json(to_string(*score.klass)) : nlohmann::json(nullptr);
  j["q"] = score.q;
  j["s_cos"] = score.s_cos;
  j["dh_t"] = score.dh_t;
  j["dh_s"] = score.dh_s;
  j["posterior"] = score.posterior;
  j["boundary_candidate"] = score.boundary_candidate;
  j["evidence_ids"] = score.evidence_ids;
  return j;
}

IntentScore intent_score_from_json(const nlohmann::json& raw) {
  try {
    IntentScore s;
    s.user_id = raw.value("user_id", std::string());
    s.record_id = raw.at("record_id").get<std::string>();
    if (auto it = raw.find("klass"); it != raw.end() && !it->is_null()) {
      auto label = parse_intent_label(it->get<std::string>());
      if (!label) throw Error(ErrorCode::kBadLabel, "unknown klass " + it->dump());
      s.klass = *label;
    }
    s.q = raw.at("q").get<double>();
    s.s_cos = raw.at("s_cos").get<double>();
    s.dh_t = raw.at("dh_t").get<double>();
    s.dh_s = raw.at("dh_s").get<double>();
    if (auto it = raw.find("posterior"); it != raw.end()) s.posterior = it->get<std::array<double, 3>>();
    s.boundary_candidate = raw.value("boundary_candidate", false);
    if (auto it = raw.find("evidence_ids"); it != raw.end()) {
      s.evidence_ids = it->get<std::vector<std::string>>();
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kMissingField, e.what());
  }
}

bool is_candidate(const IntentScore& score) {
  return score.boundary_candidate ||
         (score.klass && (*score.klass == IntentLabel::kPreference || *score.klass == IntentLabel::kRoutine));
}

std::size_t export_candidates(std::span<const IntentScore> scored, std::ostream& out) {
  std::size_t n = 0;
  for (const auto& s : scored) {
    if (!is_candidate(s)) continue;
    out << to_json(s).dump() << '\n';
    ++n;
  }
  if (!out) throw Error(ErrorCode::kIoFailure, "failed writing candidates");
  return n;
}

std::size_t export_candidates(std::span<const IntentScore> scored, const std::filesystem::path& out_path) {
  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot open " + out_path.string());
  return export_candidates(scored, out);
}

}  // namespace him
