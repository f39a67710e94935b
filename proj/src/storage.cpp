#include "him/storage.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>
#include <utility>

#include "httplib.h"
#include "him/error.hpp"

namespace him {

namespace {

using nlohmann::json;

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string() + " for reading");
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string() + " for writing");
  return out;
}

void check_written(std::ostream& out, const std::string& what) {
  out.flush();
  if (!out) throw Error(ErrorCode::kIoFailure, "write failed for " + what);
}

bool blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

// Wraps nlohmann type errors so malformed snapshots surface as ParseError.
template <typename T>
T field(const json& raw, const char* key) {
  try {
    return raw.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("snapshot field '") + key + "': " + e.what());
  }
}

const json& node(const json& raw, const char* key) {
  if (!raw.is_object() || !raw.contains(key)) {
    throw Error(ErrorCode::kParseError, std::string("snapshot is missing '") + key + "'");
  }
  return raw.at(key);
}

std::string_view to_string(PhiAggregation a) {
  return a == PhiAggregation::kGeometricMean ? "geometric" : "arithmetic";
}

std::string_view to_string(EntropyDirection d) { return d == EntropyDirection::kStabilityUp ? "stability-up" : "raw"; }

std::string_view to_string(TextMatch m) { return m == TextMatch::kExact ? "exact" : "casefold-trim"; }

}  // namespace

std::vector<InteractionRecord> load_jsonl(std::istream& in) {
  std::vector<InteractionRecord> records;
  std::set<std::pair<std::string, std::string>> seen;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (blank(line)) continue;
    json raw;
    try {
      raw = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::kParseError, e.what(), number);
    }
    InteractionRecord r;
    try {
      r = validate_record(raw);
    } catch (const Error& e) {
      throw Error(ErrorCode::kValidationError, e.what(), number);
    }
    if (!seen.emplace(r.user_id, r.record_id).second) {
      throw Error(ErrorCode::kValidationError,
                  "DuplicateRecord: record_id '" + r.record_id + "' repeats for user '" + r.user_id + "'", number);
    }
    records.push_back(std::move(r));
  }
  if (in.bad()) throw Error(ErrorCode::kIoFailure, "read failed");
  std::stable_sort(records.begin(), records.end(), [](const InteractionRecord& a, const InteractionRecord& b) {
    return std::tie(a.user_id, a.timestamp, a.record_id) < std::tie(b.user_id, b.timestamp, b.record_id);
  });
  return records;
}

std::vector<InteractionRecord> load_jsonl(const std::filesystem::path& path) {
  auto in = open_in(path);
  return load_jsonl(in);
}

void save_jsonl(std::span<const InteractionRecord> records, std::ostream& out) {
  for (const auto& r : records) out << to_json(r).dump() << '\n';
  check_written(out, "record stream");
}

void save_jsonl(std::span<const InteractionRecord> records, const std::filesystem::path& path) {
  auto out = open_out(path);
  save_jsonl(records, out);
}

json to_json(const MemoryConfig& cfg) {
  return {{"theta", cfg.theta},
          {"proactive_boundary", cfg.proactive_boundary},
          {"l_cap", cfg.l_cap},
          {"hour_window", cfg.hour_window},
          {"scene_entropy_wildcard", cfg.scene_entropy_wildcard},
          {"aggregation", to_string(cfg.aggregation)}};
}

json to_json(const ScoringConfig& cfg) {
  return {{"k", cfg.k},
          {"weights", cfg.weights},
          {"entropy_direction", to_string(cfg.entropy_direction)},
          {"boundary_margin", cfg.boundary_margin},
          {"hour_bins", cfg.hour_bins},
          {"scene_bins", cfg.scene_bins}};
}

json to_json(const MatchConfig& cfg) {
  return {{"click_tolerance", cfg.click_tolerance},
          {"text_match", to_string(cfg.text_match)},
          {"partial_type_credit", cfg.partial_type_credit}};
}

MemoryConfig memory_config_from_json(const json& raw) {
  MemoryConfig cfg;
  cfg.theta = field<double>(raw, "theta");
  cfg.proactive_boundary = field<double>(raw, "proactive_boundary");
  cfg.l_cap = field<std::size_t>(raw, "l_cap");
  cfg.hour_window = field<int>(raw, "hour_window");
  cfg.scene_entropy_wildcard = field<double>(raw, "scene_entropy_wildcard");
  const auto agg = field<std::string>(raw, "aggregation");
  if (agg == "geometric") {
    cfg.aggregation = PhiAggregation::kGeometricMean;
  } else if (agg == "arithmetic") {
    cfg.aggregation = PhiAggregation::kArithmeticMean;
  } else {
    throw Error(ErrorCode::kParseError, "unknown aggregation '" + agg + "'");
  }
  return cfg;
}

ScoringConfig scoring_config_from_json(const json& raw) {
  ScoringConfig cfg;
  cfg.k = field<std::size_t>(raw, "k");
  cfg.weights = field<std::array<double, 3>>(raw, "weights");
  const auto dir = field<std::string>(raw, "entropy_direction");
  if (dir == "stability-up") {
    cfg.entropy_direction = EntropyDirection::kStabilityUp;
  } else if (dir == "raw") {
    cfg.entropy_direction = EntropyDirection::kRawEntropy;
  } else {
    throw Error(ErrorCode::kParseError, "unknown entropy_direction '" + dir + "'");
  }
  cfg.boundary_margin = field<double>(raw, "boundary_margin");
  cfg.hour_bins = field<std::size_t>(raw, "hour_bins");
  cfg.scene_bins = field<std::size_t>(raw, "scene_bins");
  return cfg;
}

MatchConfig match_config_from_json(const json& raw) {
  MatchConfig cfg;
  cfg.click_tolerance = field<double>(raw, "click_tolerance");
  const auto tm = field<std::string>(raw, "text_match");
  if (tm == "exact") {
    cfg.text_match = TextMatch::kExact;
  } else if (tm == "casefold-trim") {
    cfg.text_match = TextMatch::kCaseFoldTrim;
  } else {
    throw Error(ErrorCode::kParseError, "unknown text_match '" + tm + "'");
  }
  cfg.partial_type_credit = field<double>(raw, "partial_type_credit");
  return cfg;
}

json to_json(const RecordPrototype& p) {
  return {{"prototype_id", p.prototype_id},
          {"user_id", p.user_id},
          {"member_ids", p.member_ids},
          {"member_hours", p.member_hours},
          {"member_scenarios", p.member_scenarios},
          {"consist_weights", p.consist_weights},
          {"center_intent", p.center_intent},
          {"center_action", to_json(std::span<const ActionStep>(p.center_action))},
          {"modal_hour", p.modal_hour},
          {"modal_scenario", p.modal_scenario},
          {"created_day", p.created_day},
          {"updated_day", p.updated_day}};
}

RecordPrototype prototype_from_json(const json& raw) {
  RecordPrototype p;
  p.prototype_id = field<std::uint64_t>(raw, "prototype_id");
  p.user_id = field<std::string>(raw, "user_id");
  p.member_ids = field<std::vector<std::string>>(raw, "member_ids");
  p.member_hours = field<std::vector<int>>(raw, "member_hours");
  p.member_scenarios = field<std::vector<std::string>>(raw, "member_scenarios");
  p.consist_weights = field<std::vector<double>>(raw, "consist_weights");
  p.center_intent = field<std::string>(raw, "center_intent");
  try {
    p.center_action = trajectory_from_json(node(raw, "center_action"));
  } catch (const Error& e) {
    throw Error(ErrorCode::kParseError, std::string("center_action: ") + e.what());
  }
  p.modal_hour = field<int>(raw, "modal_hour");
  p.modal_scenario = field<std::string>(raw, "modal_scenario");
  p.created_day = field<std::int64_t>(raw, "created_day");
  p.updated_day = field<std::int64_t>(raw, "updated_day");
  const auto n = p.member_ids.size();
  if (p.member_hours.size() != n || p.member_scenarios.size() != n || p.consist_weights.size() != n) {
    throw Error(ErrorCode::kParseError, "prototype " + std::to_string(p.prototype_id) + " has ragged member arrays");
  }
  return p;
}

json to_json(const HierarchicalMemory& m) {
  json protos = json::array();
  for (const auto& p : m.prototypes) protos.push_back(to_json(p));
  json records = json::array();
  for (const auto& [id, r] : m.records) records.push_back(to_json(r));
  return {{"user_id", m.user_id},
          {"prototypes", std::move(protos)},
          {"preference_memory", m.preference_memory},
          {"routine_memory", m.routine_memory},
          {"day_cursor", m.day_cursor ? json(*m.day_cursor) : json(nullptr)},
          {"next_prototype_id", m.next_prototype_id},
          {"scenario_vocabulary", m.scenario_vocabulary},
          {"records", std::move(records)}};
}

HierarchicalMemory memory_from_json(const json& raw) {
  HierarchicalMemory m;
  m.user_id = field<std::string>(raw, "user_id");
  for (const auto& p : node(raw, "prototypes")) m.prototypes.push_back(prototype_from_json(p));
  m.preference_memory = field<std::vector<std::uint64_t>>(raw, "preference_memory");
  m.routine_memory = field<std::vector<std::uint64_t>>(raw, "routine_memory");
  const auto& cursor = node(raw, "day_cursor");
  if (!cursor.is_null()) m.day_cursor = field<std::int64_t>(raw, "day_cursor");
  m.next_prototype_id = field<std::uint64_t>(raw, "next_prototype_id");
  m.scenario_vocabulary = field<std::vector<std::string>>(raw, "scenario_vocabulary");
  for (const auto& r : node(raw, "records")) {
    InteractionRecord rec;
    try {
      rec = validate_record(r);
    } catch (const Error& e) {
      throw Error(ErrorCode::kParseError, std::string("stored record: ") + e.what());
    }
    auto id = rec.record_id;
    m.records.emplace(std::move(id), std::move(rec));
  }
  return m;
}

ProviderFingerprint fingerprint(const EmbeddingProvider& provider) { return {provider.name(), provider.dimension()}; }

json to_json(const MemorySnapshot& s) {
  json users = json::object();
  for (const auto& [id, m] : s.users) users[id] = to_json(m);
  return {{"format_version", s.format_version},
          {"config", {{"memory", to_json(s.memory_config)},
                      {"scoring", to_json(s.scoring_config)},
                      {"match", to_json(s.match_config)}}},
          {"provider", {{"name", s.provider.name}, {"dimension", s.provider.dimension}}},
          {"users", std::move(users)}};
}

MemorySnapshot snapshot_from_json(const json& raw, const std::optional<ProviderFingerprint>& expected) {
  if (!raw.is_object()) throw Error(ErrorCode::kParseError, "snapshot must be a JSON object");
  MemorySnapshot s;
  s.format_version = field<int>(raw, "format_version");
  if (s.format_version != MemorySnapshot::kFormatVersion) {
    throw Error(ErrorCode::kVersionMismatch, "snapshot format_version " + std::to_string(s.format_version) +
                                                 ", expected " + std::to_string(MemorySnapshot::kFormatVersion));
  }
  const auto& prov = node(raw, "provider");
  s.provider.name = field<std::string>(prov, "name");
  s.provider.dimension = field<std::size_t>(prov, "dimension");
  if (expected && *expected != s.provider) {
    throw Error(ErrorCode::kProviderMismatch, "snapshot was built with " + s.provider.name + "/" +
                                                  std::to_string(s.provider.dimension) + ", current provider is " +
                                                  expected->name + "/" + std::to_string(expected->dimension));
  }
  const auto& cfg = node(raw, "config");
  s.memory_config = memory_config_from_json(node(cfg, "memory"));
  s.scoring_config = scoring_config_from_json(node(cfg, "scoring"));
  s.match_config = match_config_from_json(node(cfg, "match"));
  for (const auto& [id, m] : node(raw, "users").items()) {
    auto mem = memory_from_json(m);
    if (mem.user_id != id) throw Error(ErrorCode::kParseError, "user key '" + id + "' does not match its memory");
    s.users.emplace(id, std::move(mem));
  }
  return s;
}

std::string serialize_snapshot(const MemorySnapshot& snapshot) { return to_json(snapshot).dump(2) + "\n"; }

void save_snapshot(const MemorySnapshot& snapshot, std::ostream& out) {
  out << serialize_snapshot(snapshot);
  check_written(out, "snapshot");
}

void save_snapshot(const MemorySnapshot& snapshot, const std::filesystem::path& path) {
  auto out = open_out(path);
  save_snapshot(snapshot, out);
}

MemorySnapshot load_snapshot(std::istream& in, const std::optional<ProviderFingerprint>& expected) {
  json raw;
  try {
    raw = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParseError, e.what());
  }
  return snapshot_from_json(raw, expected);
}

MemorySnapshot load_snapshot(const std::filesystem::path& path, const std::optional<ProviderFingerprint>& expected) {
  auto in = open_in(path);
  return load_snapshot(in, expected);
}

RemoteEmbeddingProvider::RemoteEmbeddingProvider(RemoteOptions options) : options_(std::move(options)) {
  if (options_.endpoint.empty()) throw Error(ErrorCode::kProviderUnavailable, "no embedding endpoint configured");
  if (options_.batch_size == 0 || options_.max_in_flight == 0 || options_.retries < 0) {
    throw Error(ErrorCode::kBadConfig, "remote provider needs positive batch size and concurrency");
  }
  std::string url = options_.endpoint;
  if (url.find("://") == std::string::npos) url = "http://" + url;
  const auto authority = url.find("://") + 3;
  const auto slash = url.find('/', authority);
  host_ = url.substr(0, slash);
  path_ = slash == std::string::npos ? "" : url.substr(slash);
  while (!path_.empty() && path_.back() == '/') path_.pop_back();
  path_ += "/embed";
}

std::string RemoteEmbeddingProvider::name() const { return "remote:" + host_ + path_; }

std::size_t RemoteEmbeddingProvider::dimension() const {
  {
    std::lock_guard lock(mutex_);
    if (dimension_) return *dimension_;
  }
  return embed("dimension probe").dimension();
}

EmbeddingVector RemoteEmbeddingProvider::embed(std::string_view text) const {
  return embed_batch({std::string(text)}).front();
}

std::vector<EmbeddingVector> RemoteEmbeddingProvider::post_batch(const std::vector<std::string>& texts) const {
  httplib::Client client(host_);
  const auto ms = options_.timeout.count();
  client.set_connection_timeout(ms / 1000, (ms % 1000) * 1000);
  client.set_read_timeout(ms / 1000, (ms % 1000) * 1000);
  const std::string body = json{{"texts", texts}}.dump();

  std::string last_error;
  for (int attempt = 0; attempt <= options_.retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(options_.backoff_base * (1LL << (attempt - 1)));
    ++requests_;
    auto res = client.Post(path_, body, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500 || res->status == 429) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw Error(ErrorCode::kProviderUnavailable, name() + " answered HTTP " + std::to_string(res->status));
    }

    json reply;
    try {
      reply = json::parse(res->body);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::kBadResponseShape, std::string("response is not JSON: ") + e.what());
    }
    if (!reply.is_object() || !reply.contains("vectors") || !reply["vectors"].is_array() || !reply.contains("dim") ||
        !reply["dim"].is_number_unsigned()) {
      throw Error(ErrorCode::kBadResponseShape, "response needs 'vectors' array and integer 'dim'");
    }
    const auto dim = reply["dim"].get<std::size_t>();
    const auto& vectors = reply["vectors"];
    if (vectors.size() != texts.size()) {
      throw Error(ErrorCode::kBadResponseShape, "asked for " + std::to_string(texts.size()) + " vectors, got " +
                                                    std::to_string(vectors.size()));
    }
    {
      std::lock_guard lock(mutex_);
      if (dimension_ && *dimension_ != dim) {
        throw Error(ErrorCode::kDimensionDrift,
                    "dimension changed from " + std::to_string(*dimension_) + " to " + std::to_string(dim));
      }
      dimension_ = dim;
    }
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& v : vectors) {
      if (!v.is_array() || v.size() != dim) {
        throw Error(ErrorCode::kBadResponseShape, "vector length does not match dim " + std::to_string(dim));
      }
      EmbeddingVector e;
      e.values.reserve(dim);
      for (const auto& x : v) {
        if (!x.is_number() || !std::isfinite(x.get<double>())) {
          throw Error(ErrorCode::kBadResponseShape, "vector entries must be finite numbers");
        }
        e.values.push_back(x.get<double>());
      }
      if (!normalize(e.values)) throw Error(ErrorCode::kBadResponseShape, "service returned a zero vector");
      out.push_back(std::move(e));
    }
    return out;
  }
  throw Error(ErrorCode::kProviderUnavailable, name() + " unreachable after " +
                                                   std::to_string(options_.retries + 1) + " attempts: " + last_error);
}

std::vector<EmbeddingVector> RemoteEmbeddingProvider::embed_batch(const std::vector<std::string>& texts) const {
  std::vector<std::string> missing;
  {
    std::lock_guard lock(mutex_);
    std::set<std::string_view> queued;
    for (const auto& t : texts) {
      if (!cache_.contains(t) && queued.insert(t).second) missing.push_back(t);
    }
  }

  if (!missing.empty()) {
    std::vector<std::vector<std::string>> batches;
    for (std::size_t i = 0; i < missing.size(); i += options_.batch_size) {
      const auto end = std::min(missing.size(), i + options_.batch_size);
      batches.emplace_back(missing.begin() + static_cast<std::ptrdiff_t>(i),
                           missing.begin() + static_cast<std::ptrdiff_t>(end));
    }
    std::vector<std::vector<EmbeddingVector>> results(batches.size());
    std::vector<std::exception_ptr> failures(batches.size());
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
      for (auto b = next++; b < batches.size(); b = next++) {
        try {
          results[b] = post_batch(batches[b]);
        } catch (...) {
          failures[b] = std::current_exception();
        }
      }
    };
    const auto workers = std::min(options_.max_in_flight, batches.size());
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (const auto& f : failures) {
      if (f) std::rethrow_exception(f);
    }

    std::lock_guard lock(mutex_);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      for (std::size_t i = 0; i < batches[b].size(); ++i) cache_.emplace(batches[b][i], std::move(results[b][i]));
    }
  }

  std::lock_guard lock(mutex_);
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(cache_.at(t));
  return out;
}

std::vector<EmbeddingVector> remote_embed(const std::string& endpoint, const std::vector<std::string>& texts) {
  return RemoteEmbeddingProvider(RemoteOptions{.endpoint = endpoint}).embed_batch(texts);
}

}  // namespace him
