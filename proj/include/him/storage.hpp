#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "him/core_model.hpp"
#include "him/intent_scoring.hpp"
#include "him/memory_engine.hpp"
#include "him/text_similarity.hpp"
#include "him/trajectory_similarity.hpp"
#include "json.hpp"

namespace him {

// Records come back sorted by (user_id, timestamp, record_id). Blank lines
// are skipped; the first bad line aborts the whole load.
std::vector<InteractionRecord> load_jsonl(const std::filesystem::path& path);
std::vector<InteractionRecord> load_jsonl(std::istream& in);
void save_jsonl(std::span<const InteractionRecord> records, const std::filesystem::path& path);
void save_jsonl(std::span<const InteractionRecord> records, std::ostream& out);

nlohmann::json to_json(const MemoryConfig& cfg);
nlohmann::json to_json(const ScoringConfig& cfg);
nlohmann::json to_json(const MatchConfig& cfg);
MemoryConfig memory_config_from_json(const nlohmann::json& raw);
ScoringConfig scoring_config_from_json(const nlohmann::json& raw);
MatchConfig match_config_from_json(const nlohmann::json& raw);

nlohmann::json to_json(const RecordPrototype& proto);
RecordPrototype prototype_from_json(const nlohmann::json& raw);
nlohmann::json to_json(const HierarchicalMemory& memory);
HierarchicalMemory memory_from_json(const nlohmann::json& raw);

struct ProviderFingerprint {
  std::string name;
  std::size_t dimension = 0;
  bool operator==(const ProviderFingerprint&) const = default;
};

ProviderFingerprint fingerprint(const EmbeddingProvider& provider);

struct MemorySnapshot {
  static constexpr int kFormatVersion = 1;

  int format_version = kFormatVersion;
  MemoryConfig memory_config;
  ScoringConfig scoring_config;
  MatchConfig match_config;
  ProviderFingerprint provider;
  std::map<std::string, HierarchicalMemory> users;

  bool operator==(const MemorySnapshot&) const = default;
};

nlohmann::json to_json(const MemorySnapshot& snapshot);
// `expected`, when given, must equal the stored fingerprint.
MemorySnapshot snapshot_from_json(const nlohmann::json& raw, const std::optional<ProviderFingerprint>& expected = {});

// Canonical text: sorted keys, two-space indent, trailing newline.
std::string serialize_snapshot(const MemorySnapshot& snapshot);
void save_snapshot(const MemorySnapshot& snapshot, const std::filesystem::path& path);
void save_snapshot(const MemorySnapshot& snapshot, std::ostream& out);
MemorySnapshot load_snapshot(const std::filesystem::path& path, const std::optional<ProviderFingerprint>& expected = {});
MemorySnapshot load_snapshot(std::istream& in, const std::optional<ProviderFingerprint>& expected = {});

struct RemoteOptions {
  std::string endpoint;  // scheme://host[:port][/prefix]; requests go to <prefix>/embed
  std::size_t batch_size = 64;
  std::size_t max_in_flight = 4;
  int retries = 3;  // extra attempts after the first
  std::chrono::milliseconds backoff_base{200};
  std::chrono::milliseconds timeout{30000};
};

// Embeddings from an HTTP service. Answers are memoized, and the dimension
// is pinned by the first response; later responses must agree.
class RemoteEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit RemoteEmbeddingProvider(RemoteOptions options);

  std::string name() const override;
  std::size_t dimension() const override;  // probes the service on first use
  EmbeddingVector embed(std::string_view text) const override;
  std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) const override;

  std::size_t requests_sent() const { return requests_.load(); }

 private:
  std::vector<EmbeddingVector> post_batch(const std::vector<std::string>& texts) const;

  RemoteOptions options_;
  std::string host_;
  std::string path_;
  mutable std::mutex mutex_;
  mutable std::optional<std::size_t> dimension_;
  mutable std::unordered_map<std::string, EmbeddingVector> cache_;
  mutable std::atomic<std::size_t> requests_{0};
};

std::vector<EmbeddingVector> remote_embed(const std::string& endpoint, const std::vector<std::string>& texts);

}  // namespace him
