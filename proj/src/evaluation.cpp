#include "him/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <limits>
#include <random>
#include <set>

#include "him/error.hpp"

namespace him {

namespace {

// mt19937_64's output sequence is fixed by the standard; the bounded draws
// below avoid std distributions, whose algorithms vary across libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
  }
  int range(int lo, int hi) { return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo + 1))); }
  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

struct RoutineTemplate {
  const char* instruction;
  const char* app;
};

struct PreferenceTemplate {
  const char* instruction;
  const char* vague;
  const char* app;
};

constexpr RoutineTemplate kRoutinePool[] = {
    {"check in on DingTalk", "DingTalk"},
    {"set an alarm for tomorrow morning", "Clock"},
    {"check today's weather forecast", "Weather"},
    {"log my evening workout in Keep", "Keep"},
    {"sign in on Taobao to collect coins", "Taobao"},
    {"show the metro ride code in Alipay", "Alipay"},
    {"read the morning headlines on Toutiao", "Toutiao"},
    {"record water intake in Health", "Health"},
    {"start the commute playlist on NetEase Music", "NetEase Music"},
    {"water the virtual tree in Ant Forest", "Ant Forest"},
};

constexpr PreferenceTemplate kPreferencePool[] = {
    {"order a latte from Luckin Coffee", "order a coffee", "Luckin Coffee"},
    {"watch anime episodes on Bilibili", "watch some anime", "Bilibili"},
    {"buy fresh groceries on Hema", "buy groceries", "Hema"},
    {"book a ride with Didi", "book a ride", "Didi"},
    {"listen to podcasts on Ximalaya", "listen to a podcast", "Ximalaya"},
    {"shop for running shoes on JD", "shop for shoes", "JD"},
    {"order spicy noodles from Meituan", "order takeout", "Meituan"},
    {"scroll short videos on Douyin", "watch short videos", "Douyin"},
    {"read web novels on QQ Reader", "read a novel", "QQ Reader"},
    {"check stock quotes on Futu", "check my stocks", "Futu"},
    {"search dinner recipes on Xiachufang", "search for recipes", "Xiachufang"},
    {"pay the electricity bill in Alipay", "pay the electricity bill", "Alipay"},
};

constexpr const char* kNoiseVerbs[] = {"search", "open", "find", "browse", "view",
                                       "edit", "share", "download", "compare", "rename"};

std::string pseudo_word(Rng& rng) {
  const int len = rng.range(4, 8);
  std::string w;
  for (int i = 0; i < len; ++i) w.push_back(static_cast<char>('a' + rng.below(26)));
  return w;
}

Trajectory random_trajectory(Rng& rng, const std::string& app) {
  Trajectory t;
  t.push_back(ActionStep::open_app(app));
  const int middle = rng.range(2, 5);
  for (int i = 0; i < middle; ++i) {
    switch (rng.below(6)) {
      case 0:
      case 1:
        t.push_back(ActionStep::click(rng.unit(), rng.unit()));
        break;
      case 2:
        t.push_back(ActionStep::scroll(static_cast<Direction>(rng.below(4))));
        break;
      case 3:
        t.push_back(ActionStep::type(pseudo_word(rng)));
        break;
      case 4:
        t.push_back(ActionStep::long_press(rng.unit(), rng.unit()));
        break;
      default:
        t.push_back(ActionStep::bare(rng.below(2) == 0 ? ActionKind::kBack : ActionKind::kWait));
        break;
    }
  }
  t.push_back(ActionStep::bare(ActionKind::kFinished));
  return t;
}

std::string user_name(std::size_t index) {
  std::string n = std::to_string(index + 1);
  return "u" + std::string(n.size() < 3 ? 3 - n.size() : 0, '0') + n;
}

std::string padded(std::size_t value, std::size_t width) {
  std::string n = std::to_string(value);
  return std::string(n.size() < width ? width - n.size() : 0, '0') + n;
}

double safe_ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json j;
  j["type_acc"] = report.type_acc;
  j["ssr"] = report.ssr;
  j["cer"] = report.cer;
  j["semantic"] = report.semantic;
  j["precision"] = report.precision;
  j["recall"] = report.recall;
  j["false_alarm"] = report.false_alarm;
  j["f1"] = report.f1;
  j["counts"] = {{"TP", report.counts.tp}, {"FP", report.counts.fp}, {"FN", report.counts.fn}, {"TN", report.counts.tn}};
  return j;
}

bool step_success(const ActionStep& pred, const ActionStep& gold, const MatchConfig& match_cfg) {
  return action_match(pred, gold, match_cfg) == 1.0;
}

ExecMetrics exec_metrics(const ExecEvalCase& c, const MatchConfig& match_cfg, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw Error(ErrorCode::kBadGamma, "gamma must lie in (0,1]");
  if (c.gold_trajectory.empty()) throw Error(ErrorCode::kEmptyTrajectory, "gold trajectory is empty");
  const auto n = c.gold_trajectory.size();

  std::vector<double> weights(n);
  double w = 1.0;
  double norm = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    weights[j] = w;
    norm += w;
    w *= gamma;
  }

  std::size_t type_hits = 0;
  std::size_t successes = 0;
  double cer = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (j >= c.predicted_trajectory.size()) break;
    const auto& pred = c.predicted_trajectory[j];
    const auto& gold = c.gold_trajectory[j];
    if (pred.kind == gold.kind) ++type_hits;
    if (step_success(pred, gold, match_cfg)) {
      ++successes;
      cer += weights[j];
    }
  }
  ExecMetrics m;
  m.type_acc = 100.0 * safe_ratio(type_hits, n);
  m.ssr = 100.0 * safe_ratio(successes, n);
  // gamma == 1 gives uniform weights; use the exact success ratio so CER equals SSR.
  m.cer = gamma == 1.0 ? m.ssr : 100.0 * cer / norm;
  return m;
}

double proactive_semantic(std::string_view suggestion, std::string_view gold_intent,
                          const EmbeddingProvider& provider) {
  require_text(suggestion);
  require_text(gold_intent);
  const double cos = std::clamp(cosine(provider.embed(suggestion), provider.embed(gold_intent)), -1.0, 1.0);
  return (cos + edit_similarity(suggestion, gold_intent)) / 2.0;
}

IdentificationMetrics identification_metrics(std::span<const ProactiveEvalCase> cases) {
  IdentificationMetrics m;
  std::size_t positives = 0;
  for (const auto& c : cases) {
    if (c.is_positive) {
      ++positives;
      ++(c.decision ? m.counts.tp : m.counts.fn);
    } else {
      ++(c.decision ? m.counts.fp : m.counts.tn);
    }
  }
  if (positives == 0) throw Error(ErrorCode::kNoPositives, "no positive proactive cases");
  if (positives == cases.size()) throw Error(ErrorCode::kNoNegatives, "no negative proactive cases");
  m.precision = safe_ratio(m.counts.tp, m.counts.tp + m.counts.fp);
  m.recall = safe_ratio(m.counts.tp, m.counts.tp + m.counts.fn);
  m.false_alarm = safe_ratio(m.counts.fp, m.counts.fp + m.counts.tn);
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

EvalReport evaluate_exec(std::span<const ExecEvalCase> cases, const MatchConfig& match_cfg, double gamma) {
  EvalReport r;
  if (cases.empty()) return r;
  for (const auto& c : cases) {
    const auto m = exec_metrics(c, match_cfg, gamma);
    r.type_acc += m.type_acc;
    r.ssr += m.ssr;
    r.cer += m.cer;
  }
  const double n = static_cast<double>(cases.size());
  r.type_acc /= n;
  r.ssr /= n;
  r.cer = gamma == 1.0 ? r.ssr : r.cer / n;
  return r;
}

EvalReport evaluate_proactive(std::span<const ProactiveEvalCase> cases, const EmbeddingProvider& provider) {
  const auto m = identification_metrics(cases);
  EvalReport r;
  r.precision = m.precision;
  r.recall = m.recall;
  r.false_alarm = m.false_alarm;
  r.f1 = m.f1;
  r.counts = m.counts;
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& c : cases) {
    if (!c.is_positive || !c.decision || !c.suggestion || !c.gold_intent) continue;
    sum += proactive_semantic(*c.suggestion, *c.gold_intent, provider);
    ++n;
  }
  r.semantic = n == 0 ? 0.0 : sum / static_cast<double>(n);
  return r;
}

const std::vector<std::string>& synthetic_scenarios() {
  static const std::vector<std::string> kScenes = {"home", "office", "commute", "outdoor", "restaurant", "gym"};
  return kScenes;
}

SyntheticCorpus generate_synthetic_history(const SynthConfig& cfg) {
  constexpr auto kRoutineCap = std::size(kRoutinePool);
  constexpr auto kPreferenceCap = std::size(kPreferencePool);
  if (cfg.days < 14) throw Error(ErrorCode::kBadConfig, "days must be at least 14");
  if (cfg.users < 1) throw Error(ErrorCode::kBadConfig, "users must be at least 1");
  if (cfg.routines > kRoutineCap) {
    throw Error(ErrorCode::kBadConfig, "at most " + std::to_string(kRoutineCap) + " routines per user");
  }
  if (cfg.preferences > kPreferenceCap) {
    throw Error(ErrorCode::kBadConfig, "at most " + std::to_string(kPreferenceCap) + " preferences per user");
  }
  if (!(cfg.noise_rate >= 0.0 && cfg.noise_rate < 1.0)) throw Error(ErrorCode::kBadConfig, "noise_rate must lie in [0,1)");

  const auto& scenes = synthetic_scenarios();
  SyntheticCorpus corpus;
  corpus.scenarios = scenes;
  Rng rng(cfg.seed);
  std::set<std::string> noise_instructions;

  for (std::size_t u = 0; u < cfg.users; ++u) {
    const auto user = user_name(u);
    std::vector<InteractionRecord> records;
    std::set<std::int64_t> used;
    // Draws an unused second inside [base, base + span).
    const auto stamp = [&](std::int64_t base, std::int64_t span) {
      for (;;) {
        const auto ts = base + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(span)));
        if (used.insert(ts).second) return ts;
      }
    };
    const auto day_start = [&](std::size_t d) { return cfg.start_timestamp + static_cast<std::int64_t>(d) * 86400; };

    std::vector<std::size_t> routine_order(kRoutineCap);
    for (std::size_t i = 0; i < kRoutineCap; ++i) routine_order[i] = i;
    rng.shuffle(routine_order);
    std::vector<std::size_t> pref_order(kPreferenceCap);
    for (std::size_t i = 0; i < kPreferenceCap; ++i) pref_order[i] = i;
    rng.shuffle(pref_order);

    std::size_t planted = 0;
    for (std::size_t i = 0; i < cfg.routines; ++i) {
      const auto& tpl = kRoutinePool[routine_order[i]];
      RoutinePattern p{user, tpl.instruction, rng.range(0, 23), scenes[rng.below(scenes.size())],
                       random_trajectory(rng, tpl.app)};
      for (std::size_t d = 0; d < cfg.days; ++d) {
        InteractionRecord r;
        r.user_id = user;
        r.instruction = p.instruction;
        r.timestamp = stamp(day_start(d) + p.hour * 3600, 3600);
        r.scenario = p.scenario;
        r.actions = p.trajectory;
        r.label = IntentLabel::kRoutine;
        records.push_back(std::move(r));
        ++planted;
      }
      corpus.routines.push_back(std::move(p));
    }

    for (std::size_t i = 0; i < cfg.preferences; ++i) {
      const auto& tpl = kPreferencePool[pref_order[i]];
      PreferencePattern p{user, tpl.instruction, tpl.vague, random_trajectory(rng, tpl.app)};
      for (std::size_t week = 0; week * 7 < cfg.days; ++week) {
        std::vector<std::size_t> week_days;
        for (std::size_t d = week * 7; d < std::min(cfg.days, week * 7 + 7); ++d) week_days.push_back(d);
        rng.shuffle(week_days);
        const auto times = std::min<std::size_t>(week_days.size(), 2 + rng.below(3));
        for (std::size_t t = 0; t < times; ++t) {
          InteractionRecord r;
          r.user_id = user;
          r.instruction = p.instruction;
          r.timestamp = stamp(day_start(week_days[t]), 86400);
          r.scenario = scenes[rng.below(scenes.size())];
          r.actions = p.trajectory;
          r.label = IntentLabel::kPreference;
          r.vague_instruction = p.vague_instruction;
          records.push_back(std::move(r));
          ++planted;
        }
      }
      corpus.preferences.push_back(std::move(p));
    }

    const auto noise = static_cast<std::size_t>(
        std::llround(cfg.noise_rate / (1.0 - cfg.noise_rate) * static_cast<double>(planted)));
    for (std::size_t i = 0; i < noise; ++i) {
      std::string instruction;
      do {
        instruction = std::string(kNoiseVerbs[rng.below(std::size(kNoiseVerbs))]) + " " + pseudo_word(rng) + " " +
                      pseudo_word(rng);
      } while (!noise_instructions.insert(instruction).second);
      InteractionRecord r;
      r.user_id = user;
      r.instruction = instruction;
      r.timestamp = stamp(day_start(rng.below(cfg.days)), 86400);
      r.scenario = scenes[rng.below(scenes.size())];
      auto app = pseudo_word(rng);
      app[0] = static_cast<char>(app[0] - 'a' + 'A');
      r.actions = random_trajectory(rng, app);
      r.label = IntentLabel::kMoment;
      records.push_back(std::move(r));
    }

    std::sort(records.begin(), records.end(),
              [](const InteractionRecord& a, const InteractionRecord& b) { return a.timestamp < b.timestamp; });
    for (std::size_t i = 0; i < records.size(); ++i) records[i].record_id = user + "-" + padded(i, 6);
    corpus.records.insert(corpus.records.end(), std::make_move_iterator(records.begin()),
                          std::make_move_iterator(records.end()));
  }
  return corpus;
}

std::vector<NegativeState> generate_negative_states(const SyntheticCorpus& corpus, std::size_t count,
                                                    std::uint64_t seed, int hour_window) {
  std::vector<std::string> users;
  std::int64_t first = std::numeric_limits<std::int64_t>::max();
  std::int64_t last = std::numeric_limits<std::int64_t>::min();
  for (const auto& r : corpus.records) {
    if (users.empty() || users.back() != r.user_id) users.push_back(r.user_id);
    first = std::min(first, day_index(r.timestamp));
    last = std::max(last, day_index(r.timestamp));
  }
  if (users.empty()) throw Error(ErrorCode::kBadConfig, "corpus has no records");
  const auto& scenes = corpus.scenarios.empty() ? synthetic_scenarios() : corpus.scenarios;

  Rng rng(seed);
  std::vector<NegativeState> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto& user = users[i % users.size()];
    for (;;) {
      const auto day = first + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(last - first + 1)));
      const int hour = rng.range(0, 23);
      const auto& scene = scenes[rng.below(scenes.size())];
      const bool hits_routine = std::any_of(corpus.routines.begin(), corpus.routines.end(), [&](const RoutinePattern& p) {
        return p.user_id == user && hour_distance(hour, p.hour) <= hour_window && p.scenario == scene;
      });
      if (hits_routine) continue;
      out.push_back({user, day * 86400 + hour * 3600 + static_cast<std::int64_t>(rng.below(3600)), scene});
      break;
    }
  }
  return out;
}

Trajectory replay_execution(const HierarchicalMemory& memory, std::string_view instruction,
                            const FeatureCache& features, const MemoryConfig& cfg) {
  if (auto hit = query_preference(memory, instruction, features, cfg)) return hit->center_action;
  return {ActionStep::bare(ActionKind::kFinished)};
}

ProactiveDecision replay_proactive(const HierarchicalMemory& memory, std::int64_t timestamp,
                                   std::string_view scenario, const MemoryConfig& cfg) {
  if (auto hit = query_routine(memory, timestamp, scenario, cfg)) return {true, hit->suggestion};
  return {};
}

}  // namespace him
