#include "him/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "him/core_model.hpp"
#include "him/error.hpp"
#include "him/evaluation.hpp"
#include "him/intent_scoring.hpp"
#include "him/memory_engine.hpp"
#include "him/storage.hpp"
#include "him/text_similarity.hpp"
#include "json.hpp"

namespace him {

namespace {

using nlohmann::json;

// Resolves "-" to the process streams, anything else to a file.
class Streams {
 public:
  Streams(std::istream& in, std::ostream& out) : in_(in), out_(out) {}

  std::istream& input(const std::string& path) {
    if (path == "-") return in_;
    auto f = std::make_unique<std::ifstream>(path, std::ios::binary);
    if (!*f) throw Error(ErrorCode::kIoFailure, "cannot open " + path + " for reading");
    inputs_.push_back(std::move(f));
    return *inputs_.back();
  }

  std::ostream& output(const std::string& path) {
    if (path == "-") return out_;
    auto f = std::make_unique<std::ofstream>(path, std::ios::binary | std::ios::trunc);
    if (!*f) throw Error(ErrorCode::kIoFailure, "cannot open " + path + " for writing");
    outputs_.push_back(std::move(f));
    return *outputs_.back();
  }

  void flush() {
    out_.flush();
    for (auto& f : outputs_) {
      f->flush();
      if (!*f) throw Error(ErrorCode::kIoFailure, "write failed");
    }
  }

 private:
  std::istream& in_;
  std::ostream& out_;
  std::vector<std::unique_ptr<std::ifstream>> inputs_;
  std::vector<std::unique_ptr<std::ofstream>> outputs_;
};

std::vector<std::span<const InteractionRecord>> by_user(const std::vector<InteractionRecord>& records) {
  std::vector<std::span<const InteractionRecord>> out;
  std::size_t begin = 0;
  for (std::size_t i = 1; i <= records.size(); ++i) {
    if (i == records.size() || records[i].user_id != records[begin].user_id) {
      out.emplace_back(records.data() + begin, i - begin);
      begin = i;
    }
  }
  return out;
}

std::vector<IntentScore> read_scores(std::istream& in) {
  std::vector<IntentScore> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c) != 0; })) continue;
    try {
      out.push_back(intent_score_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kParseError, e.what(), number);
    } catch (const Error& e) {
      throw Error(ErrorCode::kParseError, e.what(), number);
    }
  }
  return out;
}

void write_scores(std::span<const IntentScore> scores, std::ostream& out) {
  for (const auto& s : scores) out << to_json(s).dump() << '\n';
}

std::array<double, 3> parse_weights(const std::string& text) {
  std::array<double, 3> w{};
  std::stringstream ss(text);
  std::string part;
  std::size_t i = 0;
  while (std::getline(ss, part, ',')) {
    if (i == 3) throw CLI::ValidationError("--weights", "expected three comma-separated numbers");
    const char* first = part.data();
    const char* last = part.data() + part.size();
    auto [ptr, ec] = std::from_chars(first, last, w[i]);
    if (ec != std::errc() || ptr != last) throw CLI::ValidationError("--weights", "bad number '" + part + "'");
    ++i;
  }
  if (i != 3) throw CLI::ValidationError("--weights", "expected three comma-separated numbers");
  return w;
}

std::size_t vocabulary_size(std::span<const InteractionRecord> records) {
  std::set<std::string_view> scenes;
  for (const auto& r : records) scenes.insert(r.scenario);
  return std::max<std::size_t>(2, scenes.size());
}

ProviderFingerprint current_fingerprint(const EmbeddingProvider& provider) { return fingerprint(provider); }

template <typename Fn>
void for_users(const MemorySnapshot& snap, const std::optional<std::string>& user, Fn&& fn) {
  if (user) {
    auto it = snap.users.find(*user);
    if (it == snap.users.end()) throw Error(ErrorCode::kValidationError, "snapshot has no user '" + *user + "'");
    fn(it->second);
    return;
  }
  for (const auto& [id, memory] : snap.users) fn(memory);
}

const HierarchicalMemory& memory_for(const MemorySnapshot& snap, const std::string& user) {
  auto it = snap.users.find(user);
  if (it == snap.users.end()) throw Error(ErrorCode::kValidationError, "snapshot has no user '" + user + "'");
  return it->second;
}

int parse_two_digits(std::string_view s, std::size_t pos) {
  if (pos + 2 > s.size() || !std::isdigit(static_cast<unsigned char>(s[pos])) ||
      !std::isdigit(static_cast<unsigned char>(s[pos + 1]))) {
    throw Error(ErrorCode::kParseError, "malformed timestamp '" + std::string(s) + "'");
  }
  return (s[pos] - '0') * 10 + (s[pos + 1] - '0');
}

}  // namespace

std::int64_t parse_iso8601(std::string_view s) {
  const auto bad = [&] { return Error(ErrorCode::kParseError, "malformed timestamp '" + std::string(s) + "'"); };
  if (s.size() < 16 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') || s[13] != ':') throw bad();
  int year = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + 4, year);
  if (ec != std::errc() || ptr != s.data() + 4) throw bad();
  const int month = parse_two_digits(s, 5);
  const int day = parse_two_digits(s, 8);
  const int hour = parse_two_digits(s, 11);
  const int minute = parse_two_digits(s, 14);
  int second = 0;
  std::size_t pos = 16;
  if (pos < s.size() && s[pos] == ':') {
    second = parse_two_digits(s, pos + 1);
    pos += 3;
  }
  int offset = 0;
  if (pos < s.size()) {
    if (s[pos] == 'Z' && pos + 1 == s.size()) {
      ++pos;
    } else if ((s[pos] == '+' || s[pos] == '-') && pos + 6 == s.size() && s[pos + 3] == ':') {
      const int sign = s[pos] == '+' ? 1 : -1;
      const int oh = parse_two_digits(s, pos + 1);
      const int om = parse_two_digits(s, pos + 4);
      if (oh > 23 || om > 59) throw bad();
      offset = sign * (oh * 3600 + om * 60);
      pos = s.size();
    } else {
      throw bad();
    }
  }
  const std::chrono::year_month_day ymd{std::chrono::year(year), std::chrono::month(static_cast<unsigned>(month)),
                                        std::chrono::day(static_cast<unsigned>(day))};
  if (!ymd.ok() || hour > 23 || minute > 59 || second > 59) throw bad();
  const auto days = std::chrono::sys_days(ymd).time_since_epoch().count();
  return static_cast<std::int64_t>(days) * 86400 + hour * 3600 + minute * 60 + second - offset;
}

int cli_main(int argc, char** argv, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Implicit-intent mining and personal memory for GUI agents"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::string embed_url;
  app.add_option("--embed-url", embed_url, "Embedding service base URL (default: $HIM_EMBED_URL, else local hashing)");

  std::string input = "-";
  std::string output = "-";
  const auto io = [&](CLI::App* sub, const std::string& in_help, const std::string& out_help) {
    sub->add_option("-i,--input", input, in_help)->capture_default_str();
    sub->add_option("-o,--output", output, out_help)->capture_default_str();
  };

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Validate interaction records and write them back sorted");
  io(ingest, "Records JSONL", "Validated records JSONL");

  // score
  ScoringConfig scoring;
  std::string weights_text = "1,0.1,0.1";
  std::string direction = "stability-up";
  double ratio = 0.5;
  bool minmax = false;
  auto* score = app.add_subcommand("score", "Score each executing record of every user");
  io(score, "Records JSONL", "IntentScore JSONL");
  score->add_option("--k", scoring.k, "Neighbors per record")->capture_default_str()->check(CLI::PositiveNumber);
  score->add_option("--weights", weights_text, "Weights for S_cos, dH_t, dH_s")->capture_default_str();
  score->add_option("--entropy-direction", direction, "How entropy enters the score")
      ->capture_default_str()
      ->check(CLI::IsMember({"stability-up", "raw"}));
  score->add_option("--ratio", ratio, "Share of each user's records used as history")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  score->add_option("--hour-bins", scoring.hour_bins, "Bins for the hour-offset entropy")->capture_default_str();
  score->add_flag("--minmax", minmax, "Rescale q to [0,1] across the corpus");

  // classify
  auto* classify = app.add_subcommand("classify", "Fit a three-component mixture to q and label each record");
  io(classify, "IntentScore JSONL", "Classified IntentScore JSONL");
  classify->add_option("--boundary-margin", scoring.boundary_margin, "Minimum posterior for a confident class")
      ->capture_default_str();

  // export-candidates
  auto* candidates = app.add_subcommand("export-candidates", "Keep Preference, Routine and boundary records");
  io(candidates, "Classified IntentScore JSONL", "Candidate JSONL");

  // hist
  std::size_t bins = 20;
  auto* hist = app.add_subcommand("hist", "Histogram of q as CSV bin_lo,bin_hi,count");
  io(hist, "IntentScore JSONL", "CSV");
  hist->add_option("--bins", bins, "Equal-width bins over [0,1]")->capture_default_str()->check(CLI::PositiveNumber);

  // build-memory
  MemoryConfig memory_cfg;
  std::string resume;
  auto* build = app.add_subcommand("build-memory", "Stream records day by day into per-user memories");
  io(build, "Records JSONL", "Snapshot JSON");
  auto* theta_opt = build->add_option("--theta", memory_cfg.theta, "Assignment threshold")->capture_default_str();
  auto* boundary_opt =
      build->add_option("--proactive-boundary", memory_cfg.proactive_boundary, "Routine confidence boundary")
          ->capture_default_str();
  build->add_option("--resume", resume, "Continue from this snapshot (its configuration is kept)")
      ->excludes(theta_opt)
      ->excludes(boundary_opt);

  // query
  std::string snapshot_path = "-";
  std::string vague;
  std::optional<std::string> user;
  auto* query = app.add_subcommand("query", "Look up a vague instruction in preference memory");
  query->add_option("-s,--snapshot", snapshot_path, "Snapshot JSON")->capture_default_str();
  query->add_option("-o,--output", output, "JSON lines")->capture_default_str();
  query->add_option("--vague", vague, "Instruction text")->required();
  query->add_option("--user", user, "Only this user");

  // proactive
  std::string time_text;
  std::string scenario;
  auto* proactive = app.add_subcommand("proactive", "Decide whether the current state warrants a suggestion");
  proactive->add_option("-s,--snapshot", snapshot_path, "Snapshot JSON")->capture_default_str();
  proactive->add_option("-o,--output", output, "JSON lines")->capture_default_str();
  proactive->add_option("--time", time_text, "ISO-8601 time, e.g. 2024-03-01T08:30:00+08:00")->required();
  proactive->add_option("--scenario", scenario, "Current scenario")->required();
  proactive->add_option("--user", user, "Only this user");

  // eval
  auto* eval = app.add_subcommand("eval", "Offline metrics");
  eval->require_subcommand(1);
  double gamma = 0.8;
  std::string cases_path;
  std::string records_path;
  auto* eval_exec = eval->add_subcommand("exec", "Type accuracy, SSR and CER");
  eval_exec->add_option("--gamma", gamma, "CER decay in (0,1]")->capture_default_str();
  auto* cases_opt = eval_exec->add_option("--cases", cases_path, "ExecEvalCase JSONL");
  auto* exec_snap = eval_exec->add_option("-s,--snapshot", snapshot_path, "Snapshot replayed as the agent");
  auto* exec_records = eval_exec->add_option("--records", records_path, "Records providing gold trajectories");
  cases_opt->excludes(exec_snap)->excludes(exec_records);
  exec_records->needs(exec_snap);
  eval_exec->add_option("-o,--output", output, "Report JSON")->capture_default_str();

  std::string negatives_path;
  auto* eval_pro = eval->add_subcommand("proactive", "Precision, recall and false alarms of proactive triggers");
  eval_pro->add_option("--negatives", negatives_path, "Negative states JSONL")->required();
  eval_pro->add_option("--records", records_path, "Records whose Routine labels give positive states")->required();
  eval_pro->add_option("-s,--snapshot", snapshot_path, "Snapshot JSON")->capture_default_str();
  eval_pro->add_option("--user", user, "Only this user");
  eval_pro->add_option("-o,--output", output, "Report JSON")->capture_default_str();

  // synth
  SynthConfig synth_cfg;
  std::string negatives_out;
  std::size_t negative_count = 100;
  auto* synth = app.add_subcommand("synth", "Generate a labeled synthetic corpus");
  synth->add_option("--seed", synth_cfg.seed, "RNG seed (all randomness)")->capture_default_str();
  synth->add_option("--days", synth_cfg.days, "Days per user")->capture_default_str();
  synth->add_option("--users", synth_cfg.users, "Users")->capture_default_str();
  synth->add_option("--routines", synth_cfg.routines, "Routines per user")->capture_default_str();
  synth->add_option("--preferences", synth_cfg.preferences, "Preferences per user")->capture_default_str();
  synth->add_option("--noise-rate", synth_cfg.noise_rate, "Fraction of one-off records")->capture_default_str();
  synth->add_option("--start", synth_cfg.start_timestamp, "Epoch seconds of the first day")->capture_default_str();
  synth->add_option("-o,--output", output, "Records JSONL")->capture_default_str();
  synth->add_option("--negatives", negatives_out, "Also write negative proactive states here");
  synth->add_option("--negative-count", negative_count, "Negative states to write")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    Streams streams(in, out);
    if (embed_url.empty()) {
      if (const char* env = std::getenv("HIM_EMBED_URL")) embed_url = env;
    }
    std::unique_ptr<EmbeddingProvider> provider;
    if (embed_url.empty()) {
      provider = std::make_unique<HashedNgramProvider>();
    } else {
      provider = std::make_unique<RemoteEmbeddingProvider>(RemoteOptions{.endpoint = embed_url});
    }

    const auto load_snap = [&]() { return load_snapshot(streams.input(snapshot_path), current_fingerprint(*provider)); };

    if (ingest->parsed()) {
      const auto records = load_jsonl(streams.input(input));
      save_jsonl(records, streams.output(output));
    } else if (score->parsed()) {
      scoring.weights = parse_weights(weights_text);
      scoring.entropy_direction =
          direction == "raw" ? EntropyDirection::kRawEntropy : EntropyDirection::kStabilityUp;
      const auto records = load_jsonl(streams.input(input));
      scoring.scene_bins = vocabulary_size(records);
      validate(scoring);
      if (!(ratio > 0.0 && ratio < 1.0)) throw CLI::ValidationError("--ratio", "must lie in (0,1)");
      std::vector<IntentScore> all;
      for (auto span : by_user(records)) {
        if (span.size() < 2) {
          err << "skipping user " << span.front().user_id << ": fewer than 2 records\n";
          continue;
        }
        auto scored = score_history(split_history(span, ratio), *provider, scoring);
        all.insert(all.end(), std::make_move_iterator(scored.begin()), std::make_move_iterator(scored.end()));
      }
      if (minmax) minmax_rescale(all);
      write_scores(all, streams.output(output));
    } else if (classify->parsed()) {
      const auto scores = read_scores(streams.input(input));
      std::vector<double> q;
      q.reserve(scores.size());
      for (const auto& s : scores) q.push_back(s.q);
      validate(scoring);
      const auto gmm = fit_trimodal(q);
      write_scores(classify_scores(scores, gmm, scoring), streams.output(output));
    } else if (candidates->parsed()) {
      const auto scores = read_scores(streams.input(input));
      export_candidates(scores, streams.output(output));
    } else if (hist->parsed()) {
      const auto scores = read_scores(streams.input(input));
      std::vector<std::size_t> counts(bins, 0);
      for (const auto& s : scores) {
        const double x = std::clamp(s.q, 0.0, 1.0);
        counts[std::min(bins - 1, static_cast<std::size_t>(x * static_cast<double>(bins)))]++;
      }
      auto& os = streams.output(output);
      os << "bin_lo,bin_hi,count\n";
      for (std::size_t b = 0; b < bins; ++b) {
        os << static_cast<double>(b) / static_cast<double>(bins) << ','
           << static_cast<double>(b + 1) / static_cast<double>(bins) << ',' << counts[b] << '\n';
      }
    } else if (build->parsed()) {
      const auto records = load_jsonl(streams.input(input));
      MemorySnapshot snap;
      if (!resume.empty()) {
        snap = load_snapshot(std::filesystem::path(resume), current_fingerprint(*provider));
      } else {
        snap.memory_config = memory_cfg;
        snap.provider = current_fingerprint(*provider);
        snap.scoring_config.scene_bins = vocabulary_size(records);
      }
      validate(snap.memory_config);
      FeatureCache features(*provider);
      for (auto span : by_user(records)) {
        auto& memory = snap.users[span.front().user_id];
        ingest_records(memory, span, features, snap.memory_config, snap.match_config);
      }
      save_snapshot(snap, streams.output(output));
    } else if (query->parsed()) {
      require_text(vague);
      const auto snap = load_snap();
      FeatureCache features(*provider);
      auto& os = streams.output(output);
      for_users(snap, user, [&](const HierarchicalMemory& memory) {
        json line{{"user_id", memory.user_id}, {"hit", false}};
        if (auto hit = query_preference(memory, vague, features, snap.memory_config)) {
          line["hit"] = true;
          line["prototype_id"] = hit->prototype_id;
          line["center_intent"] = hit->center_intent;
          line["center_action"] = to_json(std::span<const ActionStep>(hit->center_action));
          line["score"] = hit->score;
        }
        os << line.dump() << '\n';
      });
    } else if (proactive->parsed()) {
      const auto ts = parse_iso8601(time_text);
      const auto snap = load_snap();
      auto& os = streams.output(output);
      for_users(snap, user, [&](const HierarchicalMemory& memory) {
        json line{{"user_id", memory.user_id}, {"trigger", false}};
        if (auto hit = query_routine(memory, ts, scenario, snap.memory_config)) {
          line["trigger"] = true;
          line["prototype_id"] = hit->prototype_id;
          line["suggestion"] = hit->suggestion;
          line["phi"] = hit->phi;
        }
        os << line.dump() << '\n';
      });
    } else if (eval_exec->parsed()) {
      std::vector<ExecEvalCase> cases;
      MatchConfig match;
      if (!cases_path.empty()) {
        auto& is = streams.input(cases_path);
        std::string line;
        std::size_t number = 0;
        while (std::getline(is, line)) {
          ++number;
          if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
          try {
            const auto raw = json::parse(line);
            cases.push_back({raw.at("instruction_given").get<std::string>(),
                             trajectory_from_json(raw.at("gold_trajectory")),
                             trajectory_from_json(raw.at("predicted_trajectory"))});
          } catch (const json::exception& e) {
            throw Error(ErrorCode::kParseError, e.what(), number);
          } catch (const Error& e) {
            throw Error(ErrorCode::kValidationError, e.what(), number);
          }
        }
      } else {
        if (records_path.empty()) throw CLI::RequiredError("--cases or --snapshot with --records");
        const auto snap = load_snap();
        match = snap.match_config;
        const auto records = load_jsonl(std::filesystem::path(records_path));
        FeatureCache features(*provider);
        for (const auto& r : records) {
          const auto& memory = memory_for(snap, r.user_id);
          const auto& given = r.vague_instruction ? *r.vague_instruction : r.instruction;
          cases.push_back({given, r.actions, replay_execution(memory, given, features, snap.memory_config)});
        }
      }
      streams.output(output) << to_json(evaluate_exec(cases, match, gamma)).dump(2) << '\n';
    } else if (eval_pro->parsed()) {
      const auto snap = load_snap();
      const auto records = load_jsonl(std::filesystem::path(records_path));
      std::vector<ProactiveEvalCase> cases;
      const auto wanted = [&](const std::string& u) { return !user || *user == u; };
      for (const auto& r : records) {
        if (!wanted(r.user_id) || r.label != IntentLabel::kRoutine) continue;
        const auto d = replay_proactive(memory_for(snap, r.user_id), r.timestamp, r.scenario, snap.memory_config);
        cases.push_back({r.timestamp, r.scenario, true, r.instruction, d.decision, d.suggestion});
      }
      auto& ns = streams.input(negatives_path);
      std::string line;
      std::size_t number = 0;
      while (std::getline(ns, line)) {
        ++number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        NegativeState n;
        try {
          const auto raw = json::parse(line);
          n.timestamp = raw.at("timestamp").get<std::int64_t>();
          n.scenario = raw.at("scenario").get<std::string>();
          if (raw.contains("user_id")) {
            n.user_id = raw.at("user_id").get<std::string>();
          } else if (user) {
            n.user_id = *user;
          } else if (snap.users.size() == 1) {
            n.user_id = snap.users.begin()->first;
          } else {
            throw Error(ErrorCode::kValidationError, "negative state has no user_id and no --user was given", number);
          }
        } catch (const json::exception& e) {
          throw Error(ErrorCode::kParseError, e.what(), number);
        }
        if (!wanted(n.user_id)) continue;
        const auto d = replay_proactive(memory_for(snap, n.user_id), n.timestamp, n.scenario, snap.memory_config);
        cases.push_back({n.timestamp, n.scenario, false, std::nullopt, d.decision, d.suggestion});
      }
      streams.output(output) << to_json(evaluate_proactive(cases, *provider)).dump(2) << '\n';
    } else if (synth->parsed()) {
      const auto corpus = generate_synthetic_history(synth_cfg);
      save_jsonl(corpus.records, streams.output(output));
      if (!negatives_out.empty()) {
        auto& ns = streams.output(negatives_out);
        for (const auto& n : generate_negative_states(corpus, negative_count, synth_cfg.seed, memory_cfg.hour_window)) {
          ns << json{{"user_id", n.user_id}, {"timestamp", n.timestamp}, {"scenario", n.scenario}}.dump() << '\n';
        }
      }
    }
    streams.flush();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

int cli_main(int argc, char** argv) { return cli_main(argc, argv, std::cin, std::cout, std::cerr); }

}  // namespace him
