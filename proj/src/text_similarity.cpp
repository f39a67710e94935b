#include "him/text_similarity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "him/error.hpp"

namespace him {

namespace {

constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = kFnvOffset;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

bool is_cjk(char32_t c) {
  return (c >= 0x4E00 && c <= 0x9FFF) ||    // unified ideographs
         (c >= 0x3400 && c <= 0x4DBF) ||    // extension A
         (c >= 0x20000 && c <= 0x2FA1F) ||  // extensions B+ and compatibility supplement
         (c >= 0xF900 && c <= 0xFAFF) ||    // compatibility ideographs
         (c >= 0x3040 && c <= 0x30FF) ||    // kana
         (c >= 0xAC00 && c <= 0xD7AF);      // hangul syllables
}

bool is_separator(char32_t c) {
  if (c < 0x80) {
    return !((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9'));
  }
  return (c >= 0x80 && c <= 0xBF) || c == 0xD7 || c == 0xF7 ||
         (c >= 0x2000 && c <= 0x2BFF) ||  // punctuation, symbols, arrows, box drawing
         (c >= 0x2E00 && c <= 0x2E7F) ||
         (c >= 0x3000 && c <= 0x303F) ||  // CJK punctuation
         (c >= 0xFE30 && c <= 0xFE4F) ||
         (c >= 0xFF00 && c <= 0xFF0F) || (c >= 0xFF1A && c <= 0xFF20) ||
         (c >= 0xFF3B && c <= 0xFF40) || (c >= 0xFF5B && c <= 0xFF65) ||
         c == 0xFEFF;
}

char32_t fold_char(char32_t c) {
  if (c >= 'A' && c <= 'Z') return c + 0x20;
  if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 0x20;
  if (c >= 0x391 && c <= 0x3A9 && c != 0x3A2) return c + 0x20;
  if (c >= 0x410 && c <= 0x42F) return c + 0x20;
  if (c >= 0x400 && c <= 0x40F) return c + 0x50;
  return c;
}

void append_utf8(std::string& out, char32_t c) {
  if (c < 0x80) {
    out.push_back(static_cast<char>(c));
  } else if (c < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (c >> 6)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  } else if (c < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (c >> 12)));
    out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (c >> 18)));
    out.push_back(static_cast<char>(0x80 | ((c >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  }
}

}  // namespace

std::vector<EmbeddingVector> EmbeddingProvider::embed_batch(const std::vector<std::string>& texts) const {
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed(t));
  return out;
}

HashedNgramProvider::HashedNgramProvider(std::size_t dimension) : dimension_(dimension) {
  if (dimension_ == 0) throw Error(ErrorCode::kBadConfig, "embedding dimension must be positive");
}

EmbeddingVector HashedNgramProvider::embed(std::string_view text) const {
  require_text(text);
  const auto chars = decode_utf8(trimmed(text));
  EmbeddingVector v;
  v.values.assign(dimension_, 0.0);

  const auto add = [&](std::size_t begin, std::size_t n) {
    const auto gram = encode_utf8(std::u32string_view(chars).substr(begin, n));
    v.values[fnv1a(gram) % dimension_] += 1.0;
  };
  if (chars.size() < 2) {
    add(0, chars.size());
  } else {
    for (std::size_t n = 2; n <= 3; ++n) {
      for (std::size_t i = 0; i + n <= chars.size(); ++i) add(i, n);
    }
  }
  normalize(v.values);
  return v;
}

EmbeddingVector embed(const EmbeddingProvider& provider, std::string_view text) {
  return provider.embed(text);
}

std::string_view trimmed(std::string_view text) {
  constexpr std::string_view kSpace = " \t\r\n\f\v";
  const auto b = text.find_first_not_of(kSpace);
  if (b == std::string_view::npos) return {};
  const auto e = text.find_last_not_of(kSpace);
  return text.substr(b, e - b + 1);
}

void require_text(std::string_view text) {
  if (trimmed(text).empty()) throw Error(ErrorCode::kEmptyText, "text is empty after trimming");
}

bool normalize(std::vector<double>& values) {
  double sq = 0.0;
  for (double x : values) sq += x * x;
  if (!(sq > 0.0) || !std::isfinite(sq)) return false;
  const double inv = 1.0 / std::sqrt(sq);
  for (double& x : values) x *= inv;
  return true;
}

double cosine(const EmbeddingVector& u, const EmbeddingVector& v) {
  if (u.dimension() != v.dimension()) {
    throw Error(ErrorCode::kDimensionMismatch,
                std::to_string(u.dimension()) + " vs " + std::to_string(v.dimension()));
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < u.values.size(); ++i) dot += u.values[i] * v.values[i];
  return dot;
}

std::u32string decode_utf8(std::string_view text) {
  std::u32string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t len = 0;
    char32_t cp = 0;
    if (c < 0x80) {
      len = 1;
      cp = c;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    }
    bool ok = len > 0 && i + len <= text.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      const auto cc = static_cast<unsigned char>(text[i + k]);
      if ((cc & 0xC0) != 0x80) {
        ok = false;
      } else {
        cp = (cp << 6) | (cc & 0x3F);
      }
    }
    if (!ok) {
      out.push_back(0xFFFD);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::string encode_utf8(std::u32string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char32_t c : text) append_utf8(out, c);
  return out;
}

std::u32string case_fold(std::u32string_view text) {
  std::u32string out(text);
  for (auto& c : out) c = fold_char(c);
  return out;
}

std::vector<std::string> word_tokens(std::string_view text) {
  const auto chars = decode_utf8(text);
  std::vector<std::string> tokens;
  std::u32string word;
  const auto flush = [&] {
    if (!word.empty()) {
      tokens.push_back(encode_utf8(word));
      word.clear();
    }
  };
  for (char32_t c : chars) {
    if (is_cjk(c)) {
      flush();
      tokens.push_back(encode_utf8(std::u32string(1, c)));
    } else if (is_separator(c)) {
      flush();
    } else {
      word.push_back(fold_char(c));
    }
  }
  flush();
  std::sort(tokens.begin(), tokens.end());
  tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
  return tokens;
}

double jaccard_tokens(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t shared = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++shared;
      ++ia;
      ++ib;
    }
  }
  const auto uni = a.size() + b.size() - shared;
  return static_cast<double>(shared) / static_cast<double>(uni);
}

double jaccard(std::string_view a, std::string_view b) { return jaccard_tokens(word_tokens(a), word_tokens(b)); }

std::size_t levenshtein(std::u32string_view a, std::u32string_view b) {
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      const std::size_t sub = diag + (a[i - 1] == b[j - 1] ? 0 : 1);
      row[j] = std::min({up + 1, row[j - 1] + 1, sub});
      diag = up;
    }
  }
  return row[b.size()];
}

double edit_similarity(std::string_view a, std::string_view b) {
  const auto ua = decode_utf8(a);
  const auto ub = decode_utf8(b);
  const auto longest = std::max(ua.size(), ub.size());
  if (longest == 0) return 1.0;
  return 1.0 - static_cast<double>(levenshtein(ua, ub)) / static_cast<double>(longest);
}

TextFeatures text_features(const EmbeddingProvider& provider, std::string_view text) {
  return TextFeatures{provider.embed(text), word_tokens(text)};
}

double s_sim(const TextFeatures& a, const TextFeatures& b) {
  const double cos = std::clamp(cosine(a.embedding, b.embedding), -1.0, 1.0);
  return (cos + jaccard_tokens(a.tokens, b.tokens)) / 2.0;
}

double s_sim(std::string_view a, std::string_view b, const EmbeddingProvider& provider) {
  return s_sim(text_features(provider, a), text_features(provider, b));
}

}  // namespace him
