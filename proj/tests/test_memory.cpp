#include <algorithm>
#include <set>

#include "doctest.h"
#include "him/error.hpp"
#include "him/memory_engine.hpp"
#include "support.hpp"

using namespace him;
using him::testing::make_record;

namespace {

const HashedNgramProvider kFallback;
const MatchConfig kMatch;
constexpr std::int64_t kDay = 86400;

const auto kFinished = ActionStep::bare(ActionKind::kFinished);

Trajectory coffee_actions() {
  return {ActionStep::open_app("Luckin"), ActionStep::click(0.3, 0.6), ActionStep::type("latte"), kFinished};
}

InteractionRecord rec(const std::string& id, const std::string& text, std::int64_t ts, const std::string& scene = "home",
                      Trajectory actions = coffee_actions()) {
  return make_record("u1", id, text, ts, scene, std::move(actions));
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

RecordPrototype prototype_of(const InteractionRecord& r) {
  RecordPrototype p;
  p.prototype_id = 1;
  p.user_id = r.user_id;
  p.member_ids = {r.record_id};
  p.member_hours = {hour_of_day(r.timestamp)};
  p.member_scenarios = {r.scenario};
  p.consist_weights = {1.0};
  p.center_intent = r.instruction;
  p.center_action = r.actions;
  return p;
}

}  // namespace

TEST_CASE("memory config defaults") {
  const MemoryConfig cfg;
  CHECK(cfg.theta == 0.6);
  CHECK(cfg.proactive_boundary == 0.6);
  CHECK(cfg.l_cap == 10);
  CHECK(cfg.hour_window == 1);
  CHECK(cfg.scene_entropy_wildcard == 0.8);
  CHECK(cfg.aggregation == PhiAggregation::kGeometricMean);
  CHECK_NOTHROW(validate(cfg));
  MemoryConfig bad;
  bad.theta = 1.0;
  CHECK(code_of([&] { validate(bad); }) == ErrorCode::kBadConfig);
  bad = cfg;
  bad.l_cap = 0;
  CHECK(code_of([&] { validate(bad); }) == ErrorCode::kBadConfig);
}

TEST_CASE("s_consist examples") {
  const auto center = rec("a", "order a latte", 100);
  const auto proto = prototype_of(center);
  CHECK(s_consist(center, proto, kFallback, kMatch) == doctest::Approx(1.0).epsilon(1e-6));

  // Same instruction, trajectory made of kinds the center never uses.
  auto other = rec("b", "order a latte", 200, "home",
                   {ActionStep::bare(ActionKind::kBack), ActionStep::bare(ActionKind::kHome),
                    ActionStep::bare(ActionKind::kWait), ActionStep::scroll(Direction::kUp)});
  CHECK(s_consist(other, proto, kFallback, kMatch) == doctest::Approx(0.5).epsilon(1e-6));

  auto zero = rec("c", "xyz uvw", 300, "home", {ActionStep::bare(ActionKind::kBack)});
  auto zero_center = rec("d", "abc def", 400, "home", {ActionStep::bare(ActionKind::kHome)});
  CHECK(s_consist(zero, prototype_of(zero_center), kFallback, kMatch) == doctest::Approx(0.0).epsilon(1e-6));

  auto stranger = center;
  stranger.user_id = "u2";
  CHECK(code_of([&] { s_consist(stranger, proto, kFallback, kMatch); }) == ErrorCode::kUserMismatch);
}

TEST_CASE("bootstrap and identical stream") {
  const FeatureCache features(kFallback);
  const MemoryConfig cfg;
  HierarchicalMemory memory;

  std::vector<InteractionRecord> one{rec("a", "order a latte", 5 * kDay + 100)};
  auto report = ingest_day(memory, one, features, cfg, kMatch);
  REQUIRE(memory.prototypes.size() == 1);
  CHECK(report.created == std::vector<std::uint64_t>{1});
  CHECK(memory.prototypes[0].center_intent == "order a latte");
  CHECK(memory.prototypes[0].center_action == coffee_actions());
  CHECK(memory.day_cursor == 5);

  HierarchicalMemory fresh;
  std::vector<InteractionRecord> three{rec("a", "order a latte", 100), rec("b", "order a latte", 200),
                                       rec("c", "order a latte", 300)};
  ingest_day(fresh, three, features, cfg, kMatch);
  REQUIRE(fresh.prototypes.size() == 1);
  CHECK(fresh.prototypes[0].member_ids.size() == 3);
  CHECK(fresh.prototypes[0].consist_weights == std::vector<double>{1.0, 1.0, 1.0});
}

TEST_CASE("score 0.55 stays below theta and splits") {
  // Identical instructions; the trajectories share only their first step,
  // so DTW cost is 9 over length 10 and s_consist = (1 + 0.1) / 2.
  Trajectory a(10, ActionStep::bare(ActionKind::kBack));
  Trajectory b(10, ActionStep::bare(ActionKind::kHome));
  b[0] = ActionStep::bare(ActionKind::kBack);
  const auto first = rec("a", "open the settings page", 100, "home", a);
  const auto second = rec("b", "open the settings page", 200, "home", b);
  REQUIRE(s_consist(second, prototype_of(first), kFallback, kMatch) == doctest::Approx(0.55));

  const FeatureCache features(kFallback);
  HierarchicalMemory memory;
  std::vector<InteractionRecord> batch{first, second};
  const auto report = ingest_day(memory, batch, features, MemoryConfig{}, kMatch);
  CHECK(memory.prototypes.size() == 2);
  CHECK(report.created.size() == 2);
}

TEST_CASE("ingest preconditions") {
  const FeatureCache features(kFallback);
  const MemoryConfig cfg;
  HierarchicalMemory memory;
  std::vector<InteractionRecord> day3{rec("a", "x y", 3 * kDay + 5)};
  ingest_day(memory, day3, features, cfg, kMatch);

  std::vector<InteractionRecord> same_day{rec("b", "x y", 3 * kDay + 50)};
  CHECK(code_of([&] { ingest_day(memory, same_day, features, cfg, kMatch); }) == ErrorCode::kOutOfOrderDay);

  std::vector<InteractionRecord> spans{rec("c", "x y", 4 * kDay), rec("d", "x y", 5 * kDay)};
  CHECK(code_of([&] { ingest_day(memory, spans, features, cfg, kMatch); }) == ErrorCode::kOutOfOrderDay);

  auto alien = rec("e", "x y", 6 * kDay);
  alien.user_id = "u9";
  std::vector<InteractionRecord> mixed{rec("f", "x y", 6 * kDay + 1), alien};
  CHECK(code_of([&] { ingest_day(memory, mixed, features, cfg, kMatch); }) == ErrorCode::kMixedUsers);
  std::vector<InteractionRecord> foreign{alien};
  CHECK(code_of([&] { ingest_day(memory, foreign, features, cfg, kMatch); }) == ErrorCode::kMixedUsers);

  std::vector<InteractionRecord> again{rec("a", "x y", 7 * kDay)};
  CHECK(code_of([&] { ingest_day(memory, again, features, cfg, kMatch); }) == ErrorCode::kDuplicateRecord);
}

TEST_CASE("center election") {
  const auto a = rec("a", "order coffee", 100);
  const auto b = rec("b", "order coffee", 200);
  const auto c = rec("c", "order tea", 50);
  RecordPrototype p = prototype_of(c);
  p.member_ids = {"c", "a", "b"};
  std::vector<InteractionRecord> members{a, b, c};
  const auto elected = elect_centers(p, members, kFallback, kMatch);
  CHECK(elected.center_intent == "order coffee");

  // Oracle: mean (1 - s_sim) from each member to all others.
  const auto cost = [&](const InteractionRecord& x) {
    double t = 0.0;
    for (const auto& y : members) t += 1.0 - s_sim(x.instruction, y.instruction, kFallback);
    return t;
  };
  CHECK(cost(a) < cost(c));

  SUBCASE("singleton") {
    const auto single = elect_centers(prototype_of(c), std::vector<InteractionRecord>{c}, kFallback, kMatch);
    CHECK(single.center_intent == "order tea");
    CHECK(single.center_action == c.actions);
  }
  SUBCASE("identical members resolve to the earliest") {
    auto x = rec("x", "same text", 300, "home", {ActionStep::click(0.5, 0.5)});
    auto y = rec("y", "same text", 100, "home", {ActionStep::click(0.52, 0.5)});
    RecordPrototype q = prototype_of(x);
    q.member_ids = {"x", "y"};
    const auto out = elect_centers(q, std::vector<InteractionRecord>{x, y}, kFallback, kMatch);
    CHECK(out.center_action == y.actions);
  }
  SUBCASE("missing member data") {
    CHECK(code_of([&] { elect_centers(p, std::vector<InteractionRecord>{a, b}, kFallback, kMatch); }) ==
          ErrorCode::kMissingMemberData);
  }
}

TEST_CASE("modal state ties go to the earliest seen value") {
  RecordPrototype p;
  p.member_hours = {9, 8, 8, 9};
  p.member_scenarios = {"gym", "home", "gym", "home"};
  refresh_modal_state(p);
  CHECK(p.modal_hour == 9);
  CHECK(p.modal_scenario == "gym");
}

TEST_CASE("routine confidence examples") {
  MemoryConfig arithmetic;
  arithmetic.aggregation = PhiAggregation::kArithmeticMean;

  RecordPrototype ten;
  for (int i = 0; i < 10; ++i) {
    ten.member_ids.push_back("r" + std::to_string(i));
    ten.member_hours.push_back(8);
    ten.member_scenarios.push_back("office");
    ten.consist_weights.push_back(1.0);
  }
  CHECK(routine_confidence(ten, arithmetic, 4).phi == doctest::Approx(1.0));
  CHECK(routine_confidence(ten, MemoryConfig{}, 4).phi == doctest::Approx(1.0));

  RecordPrototype one;
  one.member_ids = {"r"};
  one.member_hours = {8};
  one.member_scenarios = {"office"};
  one.consist_weights = {0.6};
  const auto rc = routine_confidence(one, arithmetic, 4);
  CHECK(rc.h_state == 1.0);
  CHECK(rc.l_record == doctest::Approx(0.1));
  CHECK(rc.r_consist == doctest::Approx(0.6));
  CHECK(rc.phi == doctest::Approx((1.0 + 0.1 + 0.6) / 3.0).epsilon(1e-9));
  CHECK(rc.phi == doctest::Approx(0.5667).epsilon(1e-4));
  CHECK(routine_confidence(one, MemoryConfig{}, 4).phi == doctest::Approx(std::cbrt(0.06)));

  RecordPrototype spread;
  const std::vector<std::string> scenes{"a", "b", "c", "d"};
  for (int h = 0; h < 24; ++h) {
    spread.member_ids.push_back("r" + std::to_string(h));
    spread.member_hours.push_back(h);
    spread.member_scenarios.push_back(scenes[static_cast<std::size_t>(h) % 4]);
    spread.consist_weights.push_back(1.0);
  }
  CHECK(routine_confidence(spread, arithmetic, 4).h_state == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(code_of([&] { routine_confidence(RecordPrototype{}, arithmetic, 4); }) == ErrorCode::kEmptyPrototype);
}

TEST_CASE("property: phi aggregates its terms and is monotone in each") {
  him::testing::Gen gen(51);
  for (int trial = 0; trial < 300; ++trial) {
    for (auto agg : {PhiAggregation::kArithmeticMean, PhiAggregation::kGeometricMean}) {
      MemoryConfig cfg;
      cfg.aggregation = agg;
      RecordPrototype p;
      for (int i = 0, n = gen.range(1, 15); i < n; ++i) {
        p.member_ids.push_back("r" + std::to_string(i));
        p.member_hours.push_back(gen.range(0, 3));
        p.member_scenarios.push_back(gen.coin() ? "home" : "gym");
        p.consist_weights.push_back(0.6 + 0.4 * gen.unit());
      }
      const auto rc = routine_confidence(p, cfg, 3);
      const double expected = agg == PhiAggregation::kArithmeticMean
                                  ? (rc.h_state + rc.l_record + rc.r_consist) / 3.0
                                  : std::cbrt(rc.h_state * rc.l_record * rc.r_consist);
      REQUIRE(rc.phi == doctest::Approx(expected).epsilon(1e-9));
      REQUIRE(rc.phi >= 0.0);
      REQUIRE(rc.phi <= 1.0 + 1e-12);

      // Raising one member's weight raises r_consist only.
      auto q = p;
      q.consist_weights[0] = std::min(1.0, q.consist_weights[0] + 0.1);
      REQUIRE(routine_confidence(q, cfg, 3).phi >= rc.phi);
      // A member duplicating the modal state cannot lower stability or length.
      auto longer = p;
      longer.member_ids.push_back("extra");
      longer.member_hours.push_back(longer.member_hours.front());
      longer.member_scenarios.push_back(longer.member_scenarios.front());
      longer.consist_weights.push_back(1.0);
      const auto lr = routine_confidence(longer, cfg, 3);
      REQUIRE(lr.l_record >= rc.l_record);
    }
  }
}

TEST_CASE("refresh memories honours the strict boundary") {
  MemoryConfig cfg;
  cfg.aggregation = PhiAggregation::kArithmeticMean;
  HierarchicalMemory m;
  m.scenario_vocabulary = {"home", "office", "gym", "commute"};
  RecordPrototype p;
  p.prototype_id = 1;
  p.member_ids = {"r"};
  p.member_hours = {8};
  p.member_scenarios = {"office"};
  p.consist_weights = {0.6};
  m.prototypes.push_back(p);

  cfg.proactive_boundary = routine_confidence(p, m, cfg).phi;
  refresh_memories(m, cfg);
  CHECK(m.preference_memory == std::vector<std::uint64_t>{1});
  CHECK(m.routine_memory.empty());

  cfg.proactive_boundary = 0.5;
  refresh_memories(m, cfg);
  CHECK(m.routine_memory == std::vector<std::uint64_t>{1});
  const auto once = m;
  refresh_memories(m, cfg);
  CHECK(m == once);

  cfg.proactive_boundary = 0.9;
  refresh_memories(m, cfg);
  CHECK(m.routine_memory.empty());
}

TEST_CASE("routine queries") {
  HierarchicalMemory m;
  m.scenario_vocabulary = {"commute", "home"};
  RecordPrototype p;
  p.prototype_id = 7;
  p.center_intent = "show the metro code";
  for (int i = 0; i < 10; ++i) {
    p.member_ids.push_back("r" + std::to_string(i));
    p.member_hours.push_back(8);
    p.member_scenarios.push_back("commute");
    p.consist_weights.push_back(1.0);
  }
  p.modal_hour = 8;
  p.modal_scenario = "commute";
  m.prototypes.push_back(p);
  const MemoryConfig cfg;

  CHECK_FALSE(query_routine(m, 9 * 3600, "commute", cfg).has_value());  // not refreshed yet
  refresh_memories(m, cfg);
  const auto hit = query_routine(m, 9 * 3600 + 1800, "commute", cfg);
  REQUIRE(hit.has_value());
  CHECK(hit->suggestion == "show the metro code");
  CHECK(hit->prototype_id == 7);
  CHECK_FALSE(query_routine(m, 20 * 3600, "commute", cfg).has_value());
  CHECK_FALSE(query_routine(m, 8 * 3600, "home", cfg).has_value());
  CHECK(hour_distance(23, 0) == 1);
  CHECK(hour_distance(3, 15) == 12);
}

TEST_CASE("preference queries") {
  const FeatureCache features(kFallback);
  const MemoryConfig cfg;
  HierarchicalMemory empty;
  CHECK_FALSE(query_preference(empty, "order a coffee", features, cfg).has_value());

  HierarchicalMemory m;
  std::vector<InteractionRecord> day{rec("a", "order a latte from Luckin", 100),
                                     rec("b", "check tomorrow's weather", 200, "home", {ActionStep::open_app("W")})};
  ingest_day(m, day, features, cfg, kMatch);
  refresh_memories(m, cfg);
  const auto hit = query_preference(m, "order a latte from Luckin", features, cfg);
  REQUIRE(hit.has_value());
  CHECK(hit->score == doctest::Approx(1.0));
  CHECK(hit->center_action == coffee_actions());

  // The dominant prototype wins on both legs.
  const auto close = query_preference(m, "order a latte", features, cfg);
  if (close) CHECK(close->center_intent == "order a latte from Luckin");
  CHECK_FALSE(query_preference(m, "zzqx vvkj", features, cfg).has_value());
}

TEST_CASE("property: streaming invariants on random daily streams") {
  him::testing::Gen gen(61);
  const std::vector<std::string> texts{"order a latte", "order a mocha", "check the weather", "book a ride home",
                                       "sign in on taobao", "read the news"};
  const std::vector<std::string> scenes{"home", "office", "gym"};
  for (int trial = 0; trial < 15; ++trial) {
    std::vector<InteractionRecord> records;
    int serial = 0;
    for (int d = 0; d < 12; ++d) {
      for (int i = 0, n = gen.range(0, 4); i < n; ++i) {
        Trajectory t{ActionStep::open_app(gen.pick(texts).substr(0, 5))};
        for (int s = 0, len = gen.range(0, 3); s < len; ++s) t.push_back(gen.step());
        records.push_back(rec("r" + std::to_string(1000 + serial++), gen.pick(texts),
                              d * kDay + gen.range(0, kDay - 1), gen.pick(scenes), t));
      }
    }
    std::sort(records.begin(), records.end(),
              [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
    const MemoryConfig cfg;
    const FeatureCache features(kFallback);
    HierarchicalMemory m;
    std::optional<std::int64_t> last_cursor;
    for (auto batch : group_by_day(records)) {
      const auto report = ingest_day(m, batch, features, cfg, kMatch);
      // Founding members carry weight 1.0; everyone else cleared theta.
      for (const auto& a : report.assignments) REQUIRE(a.score >= cfg.theta);
      refresh_memories(m, cfg);
      REQUIRE(m.day_cursor.has_value());
      if (last_cursor) REQUIRE(*m.day_cursor > *last_cursor);
      last_cursor = m.day_cursor;
      const std::set<std::uint64_t> pref(m.preference_memory.begin(), m.preference_memory.end());
      for (auto id : m.routine_memory) REQUIRE(pref.count(id) == 1);
    }

    std::size_t total = 0;
    std::set<std::string> seen;
    for (const auto& p : m.prototypes) {
      REQUIRE_FALSE(p.member_ids.empty());
      total += p.member_ids.size();
      bool intent_member = false;
      bool action_member = false;
      for (const auto& id : p.member_ids) {
        REQUIRE(seen.insert(id).second);
        const auto& r = m.records.at(id);
        intent_member = intent_member || r.instruction == p.center_intent;
        action_member = action_member || r.actions == p.center_action;
      }
      REQUIRE(intent_member);
      REQUIRE(action_member);
      for (std::size_t i = 1; i < p.consist_weights.size(); ++i) REQUIRE(p.consist_weights[i] >= cfg.theta);
    }
    REQUIRE(total == records.size());

    // Same stream, same result.
    HierarchicalMemory replay;
    ingest_records(replay, records, features, cfg, kMatch);
    REQUIRE(replay == m);

    // Raising the boundary never grows routine memory.
    for (double lo = 0.1; lo < 0.9; lo += 0.2) {
      MemoryConfig a = cfg, b = cfg;
      a.proactive_boundary = lo;
      b.proactive_boundary = lo + 0.2;
      auto ma = m, mb = m;
      refresh_memories(ma, a);
      refresh_memories(mb, b);
      const std::set<std::uint64_t> ra(ma.routine_memory.begin(), ma.routine_memory.end());
      for (auto id : mb.routine_memory) REQUIRE(ra.count(id) == 1);
    }
    if (m.routine_memory.empty()) {
      REQUIRE_FALSE(query_routine(m, gen.range(0, 10 * kDay), "home", cfg).has_value());
    }
    const auto q = query_preference(m, gen.pick(texts), features, cfg);
    if (q) REQUIRE(q->score >= cfg.theta);
  }
}

TEST_CASE("day grouping") {
  std::vector<InteractionRecord> rs{rec("a", "x", 10), rec("b", "x", 20), rec("c", "x", kDay + 5),
                                    rec("d", "x", 3 * kDay)};
  const auto days = group_by_day(rs);
  REQUIRE(days.size() == 3);
  CHECK(days[0].size() == 2);
  CHECK(days[1].size() == 1);
  CHECK(days[2].size() == 1);
}
