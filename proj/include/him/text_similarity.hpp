#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace him {

// Unit-norm dense embedding.
struct EmbeddingVector {
  std::vector<double> values;
  std::size_t dimension() const { return values.size(); }
  bool operator==(const EmbeddingVector&) const = default;
};

// Providers are deterministic and safe to call from several threads at once.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string name() const = 0;
  virtual std::size_t dimension() const = 0;
  virtual EmbeddingVector embed(std::string_view text) const = 0;
  virtual std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) const;
};

// Counts FNV-1a hashed character 2- and 3-grams (over Unicode scalar values)
// into `dimension` buckets, then L2-normalizes. Texts of a single character
// hash that character alone.
class HashedNgramProvider final : public EmbeddingProvider {
 public:
  static constexpr std::size_t kDefaultDimension = 256;
  explicit HashedNgramProvider(std::size_t dimension = kDefaultDimension);

  std::string name() const override { return "hashed-ngram-fnv1a"; }
  std::size_t dimension() const override { return dimension_; }
  EmbeddingVector embed(std::string_view text) const override;

 private:
  std::size_t dimension_;
};

EmbeddingVector embed(const EmbeddingProvider& provider, std::string_view text);

// Throws EmptyText when `text` is blank.
std::string_view trimmed(std::string_view text);
void require_text(std::string_view text);

// Divides by the L2 norm in place; returns false for a zero vector.
bool normalize(std::vector<double>& values);

double cosine(const EmbeddingVector& u, const EmbeddingVector& v);

// UTF-8 helpers. Invalid bytes decode to U+FFFD.
std::u32string decode_utf8(std::string_view text);
std::string encode_utf8(std::u32string_view text);
std::u32string case_fold(std::u32string_view text);

// Lowercased word segments plus one token per CJK character, sorted and unique.
std::vector<std::string> word_tokens(std::string_view text);

double jaccard(std::string_view a, std::string_view b);
double jaccard_tokens(const std::vector<std::string>& a, const std::vector<std::string>& b);

std::size_t levenshtein(std::u32string_view a, std::u32string_view b);
double edit_similarity(std::string_view a, std::string_view b);

// Precomputed per-instruction features for repeated fused-similarity calls.
struct TextFeatures {
  EmbeddingVector embedding;
  std::vector<std::string> tokens;
};

TextFeatures text_features(const EmbeddingProvider& provider, std::string_view text);

// Mean of embedding cosine and token Jaccard.
double s_sim(const TextFeatures& a, const TextFeatures& b);
double s_sim(std::string_view a, std::string_view b, const EmbeddingProvider& provider);

}  // namespace him
