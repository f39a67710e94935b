#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "doctest.h"
#include "him/error.hpp"
#include "him/intent_scoring.hpp"
#include "support.hpp"

using namespace him;
using him::testing::make_record;

namespace {

const HashedNgramProvider kFallback;

InteractionRecord at_hour(int hour, std::string scenario = "home", std::string id = "r") {
  return make_record("u", std::move(id), "x", static_cast<std::int64_t>(hour) * 3600 + 100, std::move(scenario),
                     {ActionStep::bare(ActionKind::kFinished)});
}

std::vector<Neighbor> as_neighbors(const std::vector<InteractionRecord>& rs) {
  std::vector<Neighbor> out;
  for (const auto& r : rs) out.push_back({&r, 1.0});
  return out;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::kBadConfig;
}

double gaussian(std::mt19937_64& rng, double mean, double sd) {
  return std::normal_distribution<double>(mean, sd)(rng);
}

}  // namespace

TEST_CASE("scoring config defaults") {
  const ScoringConfig cfg;
  CHECK(cfg.k == 10);
  CHECK(cfg.weights == std::array<double, 3>{1.0, 0.1, 0.1});
  CHECK(cfg.entropy_direction == EntropyDirection::kStabilityUp);
  CHECK(cfg.boundary_margin == 0.6);
  CHECK(cfg.hour_bins == 24);
  CHECK_NOTHROW(validate(cfg));
  ScoringConfig bad = cfg;
  bad.weights = {0, 0, 0};
  CHECK(code_of([&] { validate(bad); }) == ErrorCode::kBadConfig);
  bad = cfg;
  bad.boundary_margin = 0.2;
  CHECK(code_of([&] { validate(bad); }) == ErrorCode::kBadConfig);
  bad = cfg;
  bad.scene_bins = 1;
  CHECK(code_of([&] { validate(bad); }) == ErrorCode::kTooFewScenes);
}

TEST_CASE("top-k basics") {
  std::vector<InteractionRecord> history{
      make_record("u", "a", "order coffee", 10, "home", {ActionStep::bare(ActionKind::kFinished)}),
      make_record("u", "b", "check weather", 20, "home", {ActionStep::bare(ActionKind::kFinished)}),
      make_record("u", "c", "sign in on the app", 30, "home", {ActionStep::bare(ActionKind::kFinished)})};
  const auto target = make_record("u", "t", "check weather", 40, "home", {ActionStep::bare(ActionKind::kFinished)});
  const auto top = topk_similar(target, history, kFallback, 10);
  CHECK(top.size() == 3);
  CHECK(top.front().record->record_id == "b");
  CHECK(top.front().cosine == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(code_of([&] { topk_similar(target, {}, kFallback, 10); }) == ErrorCode::kEmptyHistory);
}

TEST_CASE("top-k ties go to earlier timestamp then record id") {
  std::vector<InteractionRecord> history{
      make_record("u", "z", "same", 50, "home", {ActionStep::bare(ActionKind::kFinished)}),
      make_record("u", "b", "same", 10, "home", {ActionStep::bare(ActionKind::kFinished)}),
      make_record("u", "a", "same", 10, "home", {ActionStep::bare(ActionKind::kFinished)})};
  const auto target = make_record("u", "t", "same", 99, "home", {ActionStep::bare(ActionKind::kFinished)});
  const auto top = topk_similar(target, history, kFallback, 2);
  REQUIRE(top.size() == 2);
  CHECK(top[0].record->record_id == "a");
  CHECK(top[1].record->record_id == "b");
}

TEST_CASE("property: top-k equals the prefix of an exhaustive sort") {
  him::testing::Gen gen(31);
  const std::vector<std::string> words{"order", "coffee", "tea", "check", "mail", "maps", "home", "sign", "in"};
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<InteractionRecord> history;
    const int n = gen.range(1, trial < 20 ? 50 : 200);
    for (int i = 0; i < n; ++i) {
      std::string text = gen.pick(words) + " " + gen.pick(words);
      history.push_back(make_record("u", "r" + std::to_string(gen.range(0, 999)), text, gen.range(0, 20),
                                    "home", {ActionStep::bare(ActionKind::kFinished)}));
    }
    const auto target = make_record("u", "t", gen.pick(words) + " " + gen.pick(words), 0, "home",
                                    {ActionStep::bare(ActionKind::kFinished)});
    const auto emb = kFallback.embed(target.instruction);
    std::vector<std::pair<double, const InteractionRecord*>> all;
    for (const auto& r : history) all.emplace_back(cosine(emb, kFallback.embed(r.instruction)), &r);
    std::stable_sort(all.begin(), all.end(), [](const auto& x, const auto& y) {
      if (x.first != y.first) return x.first > y.first;
      if (x.second->timestamp != y.second->timestamp) return x.second->timestamp < y.second->timestamp;
      return x.second->record_id < y.second->record_id;
    });
    const std::size_t k = static_cast<std::size_t>(gen.range(1, 15));
    const auto top = topk_similar(target, history, kFallback, k);
    REQUIRE(top.size() == std::min(k, history.size()));
    for (std::size_t i = 0; i < top.size(); ++i) {
      REQUIRE(top[i].cosine == all[i].first);
      REQUIRE(top[i].record->timestamp == all[i].second->timestamp);
      REQUIRE(top[i].record->record_id == all[i].second->record_id);
    }
  }
}

TEST_CASE("s_cos mean") {
  const auto r = at_hour(0);
  std::vector<Neighbor> ns{{&r, 0.2}, {&r, 0.4}, {&r, 0.6}};
  CHECK(s_cos_topk(ns) == doctest::Approx(0.4));
  CHECK(s_cos_topk(std::vector<Neighbor>{{&r, 0.37}}) == 0.37);
  CHECK(s_cos_topk(std::vector<Neighbor>{{&r, 1.0}, {&r, 1.0}}) == 1.0);
  CHECK(code_of([&] { s_cos_topk({}); }) == ErrorCode::kEmptyTopK);
}

TEST_CASE("temporal offset entropy examples") {
  const auto target = at_hour(5);
  std::vector<InteractionRecord> same{at_hour(5), at_hour(5), at_hour(5)};
  CHECK(temporal_offset_entropy(target, as_neighbors(same), 24) == 0.0);

  std::vector<InteractionRecord> uniform;
  for (int h = 0; h < 24; ++h) uniform.push_back(at_hour(h));
  CHECK(temporal_offset_entropy(target, as_neighbors(uniform), 24) == 1.0);

  std::vector<InteractionRecord> two{at_hour(5), at_hour(5), at_hour(6), at_hour(6)};
  CHECK(temporal_offset_entropy(target, as_neighbors(two), 24) == doctest::Approx(1.0 / std::log2(24.0)));
  CHECK(temporal_offset_entropy(target, as_neighbors(two), 24) == doctest::Approx(0.2180).epsilon(1e-4));

  // Offsets wrap: 23h and 1h around midnight are offsets 23 and 1.
  const auto midnight = at_hour(0);
  std::vector<InteractionRecord> wrap{at_hour(23), at_hour(1)};
  CHECK(temporal_offset_entropy(midnight, as_neighbors(wrap), 24) == doctest::Approx(1.0 / std::log2(24.0)));
}

TEST_CASE("scenario offset entropy examples") {
  const auto target = at_hour(1, "home");
  std::vector<InteractionRecord> same{at_hour(1, "home"), at_hour(2, "home")};
  CHECK(scenario_offset_entropy(target, as_neighbors(same), 4) == 0.0);

  std::vector<InteractionRecord> spread{at_hour(1, "a"), at_hour(1, "b"), at_hour(1, "c"), at_hour(1, "d")};
  CHECK(scenario_offset_entropy(target, as_neighbors(spread), 4) == 1.0);

  std::vector<InteractionRecord> mix{at_hour(1, "home"), at_hour(1, "home"), at_hour(1, "commute")};
  const double expected = -(2.0 / 3.0 * std::log2(2.0 / 3.0) + 1.0 / 3.0 * std::log2(1.0 / 3.0)) / 2.0;
  CHECK(scenario_offset_entropy(target, as_neighbors(mix), 4) == doctest::Approx(expected));
  CHECK(scenario_offset_entropy(target, as_neighbors(mix), 4) == doctest::Approx(0.4591).epsilon(1e-4));
  CHECK(code_of([&] { scenario_offset_entropy(target, as_neighbors(mix), 1); }) == ErrorCode::kTooFewScenes);
  CHECK(code_of([&] { scenario_offset_entropy(target, {}, 4); }) == ErrorCode::kEmptyTopK);
}

TEST_CASE("property: entropies are bounded, permutation invariant and zero only on single support") {
  him::testing::Gen gen(41);
  const std::vector<std::string> scenes{"home", "office", "gym", "commute", "outdoor"};
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<InteractionRecord> rs;
    std::vector<int> offsets;
    std::vector<std::string> cats;
    const auto target = at_hour(gen.range(0, 23));
    for (int i = 0, n = gen.range(1, 12); i < n; ++i) {
      rs.push_back(at_hour(gen.range(0, 23), gen.pick(scenes)));
      offsets.push_back(((hour_of_day(rs.back().timestamp) - hour_of_day(target.timestamp)) % 24 + 24) % 24);
      cats.push_back(rs.back().scenario);
    }
    const double ht = temporal_offset_entropy(target, as_neighbors(rs), 24);
    const double hs = scenario_offset_entropy(target, as_neighbors(rs), scenes.size());
    REQUIRE(ht >= 0.0);
    REQUIRE(ht <= 1.0);
    REQUIRE(hs >= 0.0);
    REQUIRE(hs <= 1.0);
    REQUIRE(ht == doctest::Approx(him::testing::direct_entropy(offsets, 24)).epsilon(1e-12));
    REQUIRE(hs == doctest::Approx(him::testing::direct_entropy(cats, scenes.size())).epsilon(1e-12));
    REQUIRE((ht == 0.0) == (std::set<int>(offsets.begin(), offsets.end()).size() == 1));
    REQUIRE((hs == 0.0) == (std::set<std::string>(cats.begin(), cats.end()).size() == 1));

    auto shuffled = rs;
    std::shuffle(shuffled.begin(), shuffled.end(), gen.engine());
    REQUIRE(temporal_offset_entropy(target, as_neighbors(shuffled), 24) == ht);
    REQUIRE(scenario_offset_entropy(target, as_neighbors(shuffled), scenes.size()) == hs);
  }
}

TEST_CASE("q combination examples") {
  const ScoringConfig cfg;
  CHECK(combine_q(1.0, 0.0, 0.0, cfg) == doctest::Approx(1.0));
  CHECK(combine_q(0.0, 1.0, 1.0, cfg) == doctest::Approx(0.0));
  CHECK(combine_q(0.5, 0.4, 0.2, cfg) == doctest::Approx((0.5 + 0.06 + 0.08) / 1.2));
  CHECK(combine_q(0.5, 0.4, 0.2, cfg) == doctest::Approx(0.5333).epsilon(1e-4));
  ScoringConfig raw = cfg;
  raw.entropy_direction = EntropyDirection::kRawEntropy;
  CHECK(combine_q(0.5, 0.4, 0.2, raw) == doctest::Approx((0.5 + 0.04 + 0.02) / 1.2));
}

TEST_CASE("property: q is invariant under uniform weight scaling") {
  him::testing::Gen gen(42);
  for (int trial = 0; trial < 200; ++trial) {
    ScoringConfig a;
    a.weights = {gen.unit() + 0.01, gen.unit(), gen.unit()};
    ScoringConfig b = a;
    const double c = 0.1 + 10.0 * gen.unit();
    for (auto& w : b.weights) w *= c;
    const double s = gen.unit(), t = gen.unit(), u = gen.unit();
    REQUIRE(combine_q(s, t, u, a) == doctest::Approx(combine_q(s, t, u, b)).epsilon(1e-12));
  }
}

TEST_CASE("q_score on a real history") {
  std::vector<InteractionRecord> history;
  for (int d = 0; d < 12; ++d) {
    history.push_back(make_record("u", "h" + std::to_string(d), "check in on DingTalk", d * 86400 + 9 * 3600,
                                  "office", {ActionStep::open_app("DingTalk")}));
  }
  const auto target =
      make_record("u", "t", "check in on DingTalk", 20 * 86400 + 9 * 3600 + 5, "office", {ActionStep::open_app("x")});
  ScoringConfig cfg;
  cfg.scene_bins = 4;
  const auto s = q_score(target, history, kFallback, cfg);
  CHECK(s.s_cos == doctest::Approx(1.0));
  CHECK(s.dh_t == 0.0);
  CHECK(s.dh_s == 0.0);
  CHECK(s.q == doctest::Approx(1.0));
  CHECK(s.evidence_ids.size() == 10);
  CHECK(s.evidence_ids.front() == "h0");
}

TEST_CASE("mixture recovers known generating parameters") {
  std::mt19937_64 rng(99);
  std::vector<double> xs;
  for (double m : {0.2, 0.5, 0.8}) {
    for (int i = 0; i < 200; ++i) xs.push_back(gaussian(rng, m, 0.02));
  }
  const auto gmm = fit_trimodal(xs);
  REQUIRE(gmm.fitted());
  CHECK(std::abs(gmm.components[0].mean - 0.2) <= 0.02);
  CHECK(std::abs(gmm.components[1].mean - 0.5) <= 0.02);
  CHECK(std::abs(gmm.components[2].mean - 0.8) <= 0.02);
  double wsum = 0.0;
  for (const auto& c : gmm.components) {
    CHECK(c.variance > 0.0);
    CHECK(c.weight > 0.0);
    wsum += c.weight;
  }
  CHECK(wsum == doctest::Approx(1.0));
  for (std::size_t i = 1; i < gmm.log_likelihood_trace.size(); ++i) {
    REQUIRE(gmm.log_likelihood_trace[i] >= gmm.log_likelihood_trace[i - 1] - 1e-9);
  }
}

TEST_CASE("mixture preconditions") {
  std::vector<double> twenty(20, 0.1);
  for (std::size_t i = 0; i < twenty.size(); ++i) twenty[i] = 0.01 * static_cast<double>(i);
  CHECK(code_of([&] { fit_trimodal(twenty); }) == ErrorCode::kTooFewScores);
  std::vector<double> flat(50, 0.4);
  CHECK(code_of([&] { fit_trimodal(flat); }) == ErrorCode::kDegenerateScores);
  std::vector<double> two(50, 0.4);
  two[0] = 0.1;
  CHECK(code_of([&] { fit_trimodal(two); }) == ErrorCode::kDegenerateScores);
}

TEST_CASE("property: log-likelihood never decreases on random mixtures") {
  him::testing::Gen gen(43);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> xs;
    for (int c = 0; c < 3; ++c) {
      const double m = gen.unit();
      const double sd = 0.01 + 0.1 * gen.unit();
      for (int i = 0, n = gen.range(10, 100); i < n; ++i) xs.push_back(gaussian(gen.engine(), m, sd));
    }
    const auto gmm = fit_trimodal(xs);
    for (std::size_t i = 1; i < gmm.log_likelihood_trace.size(); ++i) {
      REQUIRE(gmm.log_likelihood_trace[i] >= gmm.log_likelihood_trace[i - 1] - 1e-9);
    }
    REQUIRE(gmm.components[0].mean <= gmm.components[1].mean);
    REQUIRE(gmm.components[1].mean <= gmm.components[2].mean);
  }
}

TEST_CASE("classification against hand-built mixtures") {
  GaussianMixture1D gmm;
  gmm.components = {{0.2, 0.0004, 1.0 / 3}, {0.5, 0.0004, 1.0 / 3}, {0.8, 0.0004, 1.0 / 3}};
  const ScoringConfig cfg;
  std::vector<IntentScore> scores(4);
  scores[0].q = 0.5;
  scores[1].q = 0.35;  // midway between the lower two
  scores[2].q = 3.0;
  scores[3].q = 0.2;
  const auto out = classify_scores(scores, gmm, cfg);
  CHECK(out[0].klass == IntentLabel::kPreference);
  CHECK(out[0].posterior[1] > 0.99);
  CHECK_FALSE(out[0].boundary_candidate);
  CHECK(out[1].boundary_candidate);
  CHECK(out[1].posterior[0] == doctest::Approx(0.5));
  CHECK(out[1].klass == IntentLabel::kMoment);  // tie goes to the lower class
  CHECK(out[2].klass == IntentLabel::kRoutine);
  CHECK(out[3].klass == IntentLabel::kMoment);

  // Direct density evaluation.
  const auto pdf = [](double x, double m, double v) { return std::exp(-(x - m) * (x - m) / (2 * v)); };
  const double x = 0.45;
  const double p0 = pdf(x, 0.2, 0.0004), p1 = pdf(x, 0.5, 0.0004), p2 = pdf(x, 0.8, 0.0004);
  const auto post = gmm.posterior(x);
  CHECK(post[1] == doctest::Approx(p1 / (p0 + p1 + p2)).epsilon(1e-9));

  CHECK(code_of([&] { classify_scores(scores, GaussianMixture1D{}, cfg); }) == ErrorCode::kUnfittedMixture);
}

TEST_CASE("property: every score gets one class and a normalized posterior") {
  std::mt19937_64 rng(44);
  std::vector<double> xs;
  std::vector<IntentScore> scores;
  for (double m : {0.3, 0.85, 1.0}) {
    for (int i = 0; i < 100; ++i) {
      IntentScore s;
      s.q = gaussian(rng, m, 0.03);
      xs.push_back(s.q);
      scores.push_back(s);
    }
  }
  const ScoringConfig cfg;
  const auto out = classify_scores(scores, fit_trimodal(xs), cfg);
  for (const auto& s : out) {
    REQUIRE(s.klass.has_value());
    const double sum = s.posterior[0] + s.posterior[1] + s.posterior[2];
    REQUIRE(sum == doctest::Approx(1.0).epsilon(1e-9));
    const double top = *std::max_element(s.posterior.begin(), s.posterior.end());
    REQUIRE(s.boundary_candidate == (top < cfg.boundary_margin));
  }
}

TEST_CASE("candidate export") {
  std::vector<IntentScore> scores;
  const auto add = [&](IntentLabel k, bool boundary) {
    IntentScore s;
    s.user_id = "u";
    s.record_id = "r" + std::to_string(scores.size());
    s.klass = k;
    s.q = 0.1 * static_cast<double>(scores.size());
    s.s_cos = 0.3;
    s.dh_t = 0.25;
    s.dh_s = 0.125;
    s.posterior = {0.1, 0.2, 0.7};
    s.boundary_candidate = boundary;
    s.evidence_ids = {"e1", "e2"};
    scores.push_back(s);
  };
  SUBCASE("no candidates gives an empty file") {
    add(IntentLabel::kMoment, false);
    std::ostringstream out;
    CHECK(export_candidates(scores, out) == 0);
    CHECK(out.str().empty());
  }
  SUBCASE("5 preference plus 2 boundary records") {
    for (int i = 0; i < 5; ++i) add(IntentLabel::kPreference, false);
    for (int i = 0; i < 2; ++i) add(IntentLabel::kMoment, true);
    for (int i = 0; i < 3; ++i) add(IntentLabel::kMoment, false);
    std::ostringstream out;
    CHECK(export_candidates(scores, out) == 7);
    std::istringstream in(out.str());
    std::string line;
    std::size_t i = 0;
    while (std::getline(in, line)) {
      const auto back = intent_score_from_json(nlohmann::json::parse(line));
      CHECK(back == scores[i]);
      ++i;
    }
    CHECK(i == 7);
  }
}

TEST_CASE("minmax rescaling") {
  std::vector<IntentScore> scores(3);
  scores[0].q = 0.2;
  scores[1].q = 0.6;
  scores[2].q = 1.0;
  minmax_rescale(scores);
  CHECK(scores[0].q == 0.0);
  CHECK(scores[1].q == doctest::Approx(0.5));
  CHECK(scores[2].q == 1.0);
}
