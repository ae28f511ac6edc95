#pragma once

// Text-quality metrics computed per response: embedding coherence, lexical
// density, discourse-marker counts and simple structure counts.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <zlib.h>

#include "srank/error.hpp"
#include "srank/matrix.hpp"

namespace srank::text {

struct MetricValue {
  std::optional<double> value;
  std::string reason;  // why value is null; empty otherwise
};

// Named metric values in insertion order.
class MetricVector {
 public:
  void set(const std::string& name, double v) { put(name, {v, {}}); }
  void set_null(const std::string& name, std::string reason) {
    put(name, {std::nullopt, std::move(reason)});
  }
  void merge(const MetricVector& other) {
    for (const auto& [k, v] : other.entries_) put(k, v);
  }

  const MetricValue* find(const std::string& name) const {
    for (const auto& e : entries_) {
      if (e.first == name) return &e.second;
    }
    return nullptr;
  }
  std::optional<double> get(const std::string& name) const {
    const auto* v = find(name);
    return v ? v->value : std::nullopt;
  }
  const std::vector<std::pair<std::string, MetricValue>>& entries() const noexcept {
    return entries_;
  }

 private:
  void put(const std::string& name, MetricValue v) {
    for (auto& e : entries_) {
      if (e.first == name) {
        e.second = std::move(v);
        return;
      }
    }
    entries_.emplace_back(name, std::move(v));
  }

  std::vector<std::pair<std::string, MetricValue>> entries_;
};

// ---- tokenisation ----

inline std::vector<std::string> whitespace_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Words ending in '.' after which a capitalised word does not start a new
// sentence. Compared lowercase.
inline const std::set<std::string>& abbreviations() {
  static const std::set<std::string> kAbbrev = {
      "dr.",  "mr.",  "mrs.", "ms.",  "prof.", "sr.",     "jr.",  "st.",
      "vs.",  "e.g.", "i.e.", "etc.", "inc.",  "ltd.",    "co.",  "corp.",
      "fig.", "no.",  "vol.", "al.",  "cf.",   "approx.", "dept.", "est.",
      "gen.", "gov.", "mt.",  "jan.", "feb.",  "mar.",    "apr.", "jun.",
      "jul.", "aug.", "sep.", "sept.", "oct.", "nov.",    "dec.", "u.s.",
  };
  return kAbbrev;
}

// Splits after '.', '!' or '?' when followed by whitespace and an uppercase
// ASCII letter, unless the word ending in '.' is a known abbreviation.
inline std::vector<std::string> split_sentences(std::string_view text) {
  auto trim = [](std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return std::string_view{};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  };
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c != '.' && c != '!' && c != '?') continue;
    std::size_t j = i + 1;
    if (j >= text.size() || !std::isspace(static_cast<unsigned char>(text[j]))) continue;
    while (j < text.size() && std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j >= text.size() || !std::isupper(static_cast<unsigned char>(text[j]))) continue;
    if (c == '.') {
      std::size_t w = i;
      while (w > start && !std::isspace(static_cast<unsigned char>(text[w - 1]))) --w;
      if (abbreviations().count(to_lower_ascii(text.substr(w, i + 1 - w)))) continue;
    }
    auto seg = trim(text.substr(start, i + 1 - start));
    if (!seg.empty()) out.emplace_back(seg);
    start = i + 1;
  }
  auto tail = trim(text.substr(std::min(start, text.size())));
  if (!tail.empty()) out.emplace_back(tail);
  return out;
}

// ---- coherence (sentence embeddings) ----

struct EmbeddingSet {
  HiddenMatrix sentences;                // n x e, unit-norm rows
  std::optional<std::vector<double>> prompt;  // e, unit-norm
};

inline constexpr double kUnitNormTolerance = 1e-6;

inline void validate(const EmbeddingSet& emb) {
  for (std::size_t i = 0; i < emb.sentences.rows(); ++i) {
    double s = 0.0;
    for (double v : emb.sentences.row(i)) s += v * v;
    if (std::abs(std::sqrt(s) - 1.0) > kUnitNormTolerance) {
      throw ArgumentError("sentence embedding " + std::to_string(i) + " is not unit-norm");
    }
  }
  if (emb.prompt) {
    if (emb.prompt->size() != emb.sentences.cols()) {
      throw ArgumentError("prompt embedding dimension " +
                          std::to_string(emb.prompt->size()) +
                          " does not match sentence dimension " +
                          std::to_string(emb.sentences.cols()));
    }
    double s = 0.0;
    for (double v : *emb.prompt) s += v * v;
    if (std::abs(std::sqrt(s) - 1.0) > kUnitNormTolerance) {
      throw ArgumentError("prompt embedding is not unit-norm");
    }
  }
}

namespace detail {

inline double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ab += a[k] * b[k];
    aa += a[k] * a[k];
    bb += b[k] * b[k];
  }
  return ab / std::sqrt(aa * bb);
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Population standard deviation.
inline double pstd_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace detail

inline MetricVector coherence_metrics(const EmbeddingSet& emb) {
  validate(emb);
  const auto& v = emb.sentences;
  const std::size_t n = v.rows();
  MetricVector out;
  std::vector<double> adj;
  for (std::size_t i = 0; i + 1 < n; ++i) adj.push_back(detail::cosine(v.row(i), v.row(i + 1)));
  std::vector<double> nonadj;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 2; j < n; ++j) nonadj.push_back(detail::cosine(v.row(i), v.row(j)));
  }
  const char* kNeed2 = "n<2 sentences";
  if (adj.empty()) {
    for (const char* name : {"coherence_mean", "coherence_std", "coherence_min",
                             "semantic_density", "semantic_variance", "topic_jumps"}) {
      out.set_null(name, kNeed2);
    }
  } else {
    const double mu = detail::mean_of(adj);
    const double sd = detail::pstd_of(adj);
    out.set("coherence_mean", mu);
    out.set("coherence_std", sd);
    out.set("coherence_min", *std::min_element(adj.begin(), adj.end()));
    double dist = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        dist += 1.0 - detail::cosine(v.row(i), v.row(j));
        ++pairs;
      }
    }
    out.set("semantic_density", dist / static_cast<double>(pairs));
    double var = 0.0;
    for (std::size_t d = 0; d < v.cols(); ++d) {
      std::vector<double> col(n);
      for (std::size_t i = 0; i < n; ++i) col[i] = v(i, d);
      const double sdv = detail::pstd_of(col);
      var += sdv * sdv;
    }
    out.set("semantic_variance", var / static_cast<double>(v.cols()));
    std::size_t jumps = 0;
    for (double s : adj) {
      if (s < mu - 2.0 * sd) ++jumps;
    }
    out.set("topic_jumps", static_cast<double>(jumps));
  }
  if (nonadj.empty()) {
    out.set_null("avg_nonadjacent_similarity", "n<3 sentences");
    out.set_null("progression_score", "n<3 sentences");
  } else {
    const double na = detail::mean_of(nonadj);
    out.set("avg_nonadjacent_similarity", na);
    out.set("progression_score", detail::mean_of(adj) - na);
  }
  if (emb.prompt) {
    std::vector<double> align;
    for (std::size_t i = 0; i < n; ++i) align.push_back(detail::cosine(*emb.prompt, v.row(i)));
    out.set("qa_alignment_max", *std::max_element(align.begin(), align.end()));
    out.set("qa_alignment_mean", detail::mean_of(align));
    out.set("qa_alignment_min", *std::min_element(align.begin(), align.end()));
    out.set("qa_consistency", std::max(0.0, 1.0 - detail::pstd_of(align)));
  } else {
    for (const char* name : {"qa_alignment_max", "qa_alignment_mean", "qa_alignment_min",
                             "qa_consistency"}) {
      out.set_null(name, "no prompt embedding");
    }
  }
  return out;
}

// ---- lexical density ----

inline constexpr std::size_t kMattrWindow = 100;
inline constexpr std::size_t kRepetitionWindow = 10;
inline constexpr int kCompressionLevel = 6;

inline double type_token_ratio(const std::vector<std::string>& tokens) {
  std::set<std::string_view> uniq(tokens.begin(), tokens.end());
  return static_cast<double>(uniq.size()) / static_cast<double>(tokens.size());
}

// Mean TTR over every window of `w` tokens sliding by one; plain TTR when the
// text is shorter than the window.
inline double moving_average_ttr(const std::vector<std::string>& tokens,
                                 std::size_t w = kMattrWindow) {
  if (tokens.size() < w) return type_token_ratio(tokens);
  std::unordered_map<std::string_view, std::size_t> counts;
  std::size_t distinct = 0;
  for (std::size_t i = 0; i < w; ++i) {
    if (counts[tokens[i]]++ == 0) ++distinct;
  }
  double total = static_cast<double>(distinct);
  for (std::size_t i = w; i < tokens.size(); ++i) {
    if (--counts[tokens[i - w]] == 0) --distinct;
    if (counts[tokens[i]]++ == 0) ++distinct;
    total += static_cast<double>(distinct);
  }
  const double windows = static_cast<double>(tokens.size() - w + 1);
  return total / windows / static_cast<double>(w);
}

inline std::optional<double> ngram_diversity(const std::vector<std::string>& tokens,
                                             std::size_t n) {
  if (tokens.size() < n) return std::nullopt;
  std::set<std::vector<std::string_view>> uniq;
  const std::size_t total = tokens.size() - n + 1;
  for (std::size_t i = 0; i < total; ++i) {
    uniq.emplace(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                 tokens.begin() + static_cast<std::ptrdiff_t>(i + n));
  }
  return static_cast<double>(uniq.size()) / static_cast<double>(total);
}

// Fraction of w-token windows whose exact token sequence occurs at least
// twice in the text.
inline double repetition_rate(const std::vector<std::string>& tokens,
                              std::size_t w = kRepetitionWindow) {
  if (tokens.size() < w) return 0.0;
  const std::size_t total = tokens.size() - w + 1;
  std::map<std::vector<std::string_view>, std::size_t> counts;
  std::vector<std::vector<std::string_view>> windows;
  windows.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    windows.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                         tokens.begin() + static_cast<std::ptrdiff_t>(i + w));
    ++counts[windows.back()];
  }
  std::size_t repeated = 0;
  for (const auto& win : windows) {
    if (counts[win] >= 2) ++repeated;
  }
  return static_cast<double>(repeated) / static_cast<double>(total);
}

// zlib stream (RFC 1950 wrapping RFC 1951 DEFLATE) at level 6.
inline std::vector<unsigned char> deflate_bytes(std::string_view text,
                                                int level = kCompressionLevel) {
  uLongf bound = compressBound(static_cast<uLong>(text.size()));
  std::vector<unsigned char> out(bound);
  const int rc = compress2(out.data(), &bound, reinterpret_cast<const Bytef*>(text.data()),
                           static_cast<uLong>(text.size()), level);
  if (rc != Z_OK) throw Error("zlib compress2 failed with code " + std::to_string(rc));
  out.resize(bound);
  return out;
}

inline std::optional<double> compression_ratio(std::string_view text) {
  if (text.empty()) return std::nullopt;
  return static_cast<double>(deflate_bytes(text).size()) / static_cast<double>(text.size());
}

// Decodes UTF-8 into code points; an invalid byte stands for itself.
inline std::vector<std::uint32_t> code_points(std::string_view s) {
  std::vector<std::uint32_t> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    std::size_t len = b0 < 0x80 ? 1 : (b0 >> 5) == 0x6 ? 2 : (b0 >> 4) == 0xe ? 3
                                   : (b0 >> 3) == 0x1e ? 4 : 0;
    bool ok = len > 0 && i + len <= s.size();
    std::uint32_t cp = len == 1 ? b0 : len == 2 ? (b0 & 0x1fu) : len == 3 ? (b0 & 0x0fu)
                                                                          : (b0 & 0x07u);
    for (std::size_t k = 1; ok && k < len; ++k) {
      const auto b = static_cast<unsigned char>(s[i + k]);
      if ((b >> 6) != 0x2) ok = false;
      cp = (cp << 6) | (b & 0x3fu);
    }
    if (!ok) {
      out.push_back(0x110000u + b0);  // outside the Unicode range
      i += 1;
    } else {
      out.push_back(cp);
      i += len;
    }
  }
  return out;
}

// Character-level Shannon entropy in bits.
inline double text_entropy(std::string_view text) {
  const auto cps = code_points(text);
  if (cps.empty()) return 0.0;
  std::map<std::uint32_t, std::size_t> freq;
  for (auto c : cps) ++freq[c];
  double h = 0.0;
  const double n = static_cast<double>(cps.size());
  for (const auto& [c, k] : freq) {
    const double p = static_cast<double>(k) / n;
    h -= p * std::log2(p);
  }
  return h;
}

inline MetricVector density_metrics(std::string_view text) {
  const auto tokens = whitespace_tokens(text);
  MetricVector out;
  if (tokens.empty()) {
    for (const char* name : {"ttr", "mattr", "ngram2_diversity", "ngram3_diversity",
                             "ngram4_diversity", "repetition_rate"}) {
      out.set_null(name, "no tokens");
    }
  } else {
    out.set("ttr", type_token_ratio(tokens));
    out.set("mattr", moving_average_ttr(tokens));
    for (std::size_t n : {2, 3, 4}) {
      const auto name = "ngram" + std::to_string(n) + "_diversity";
      if (auto d = ngram_diversity(tokens, n)) {
        out.set(name, *d);
      } else {
        out.set_null(name, "fewer than " + std::to_string(n) + " tokens");
      }
    }
    out.set("repetition_rate", repetition_rate(tokens));
  }
  if (auto c = compression_ratio(text)) {
    out.set("compression_ratio", *c);
  } else {
    out.set_null("compression_ratio", "empty text");
  }
  out.set("text_entropy", text_entropy(text));
  return out;
}

// ---- discourse markers ----

// Ordered category -> lowercase keywords.
using Taxonomy = std::vector<std::pair<std::string, std::vector<std::string>>>;

// Categories whose sum forms the "logical markers" total.
inline const std::set<std::string>& logical_categories() {
  static const std::set<std::string> kLogical = {"causal", "conditional", "inference",
                                                 "comparison"};
  return kLogical;
}

inline const Taxonomy& default_taxonomy() {
  static const Taxonomy kDefault = {
      {"causal", {"because", "therefore", "thus", "consequently", "leads to"}},
      {"conditional", {"if", "when", "unless", "provided that", "assuming"}},
      {"inference", {"implies", "suggests", "indicates", "proves", "demonstrates"}},
      {"comparison", {"similar to", "different from", "versus", "compared to"}},
      {"contrastive", {"however", "but", "although", "nevertheless", "conversely"}},
      {"additive", {"moreover", "also", "furthermore", "in addition", "besides"}},
      {"temporal", {"then", "next", "subsequently", "meanwhile", "eventually"}},
      {"exemplification", {"for example", "such as", "namely", "specifically", "e.g."}},
      {"enumeration", {"first", "second", "step 1", "finally", "to begin", "in conclusion"}},
      {"formatting", {"#", "1.", "- ", "```"}},
  };
  return kDefault;
}

// Non-overlapping occurrences of `needle` in `hay` (both already lowercase).
inline std::size_t count_substring(std::string_view hay, std::string_view needle) {
  if (needle.empty()) return 0;
  std::size_t n = 0;
  for (std::size_t pos = hay.find(needle); pos != std::string_view::npos;
       pos = hay.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

// Case-insensitive substring counts per category, with raw, per-sentence and
// per-100-token normalisations, plus all-marker and logical-marker totals.
inline MetricVector marker_counts(std::string_view text, const Taxonomy& taxonomy,
                                  std::size_t sentence_count, std::size_t token_count) {
  if (taxonomy.empty()) throw ArgumentError("marker taxonomy is empty");
  const std::string lower = to_lower_ascii(text);
  MetricVector out;
  auto emit = [&](const std::string& stem, std::size_t raw) {
    out.set("markers_" + stem + "_raw", static_cast<double>(raw));
    if (sentence_count == 0) {
      out.set_null("markers_" + stem + "_per_sent", "no sentences");
    } else {
      out.set("markers_" + stem + "_per_sent",
              static_cast<double>(raw) / static_cast<double>(sentence_count));
    }
    if (token_count == 0) {
      out.set_null("markers_" + stem + "_per_100_tokens", "no tokens");
    } else {
      out.set("markers_" + stem + "_per_100_tokens",
              static_cast<double>(raw) / static_cast<double>(token_count) * 100.0);
    }
  };
  std::size_t total = 0, logical = 0;
  for (const auto& [category, keywords] : taxonomy) {
    std::size_t raw = 0;
    for (const auto& kw : keywords) raw += count_substring(lower, to_lower_ascii(kw));
    emit(category, raw);
    total += raw;
    if (logical_categories().count(category)) logical += raw;
  }
  emit("total", total);
  emit("logical_total", logical);
  return out;
}

inline MetricVector marker_counts(std::string_view text, const Taxonomy& taxonomy) {
  return marker_counts(text, taxonomy, split_sentences(text).size(),
                       whitespace_tokens(text).size());
}

// ---- structure ----

// Maximal vowel runs (a, e, i, o, u, y), minus one for a trailing silent
// 'e', at least 1. Non-letters are ignored.
inline std::size_t syllable_count(std::string_view word) {
  std::string w;
  for (char c : word) {
    if (std::isalpha(static_cast<unsigned char>(c))) {
      w.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (w.empty()) return 0;
  auto vowel = [](char c) { return std::string_view("aeiouy").find(c) != std::string_view::npos; };
  std::size_t runs = 0;
  bool in_run = false;
  for (char c : w) {
    const bool v = vowel(c);
    if (v && !in_run) ++runs;
    in_run = v;
  }
  if (w.size() > 1 && w.back() == 'e' && !vowel(w[w.size() - 2]) && runs > 1) --runs;
  return std::max<std::size_t>(runs, 1);
}

inline MetricVector structure_metrics(std::string_view text) {
  const auto tokens = whitespace_tokens(text);
  const auto sentences = split_sentences(text);
  MetricVector out;
  out.set("length_tokens", static_cast<double>(tokens.size()));
  out.set("sentence_count", static_cast<double>(sentences.size()));
  std::set<std::string_view> uniq(tokens.begin(), tokens.end());
  out.set("unique_tokens", static_cast<double>(uniq.size()));
  if (sentences.empty()) {
    out.set_null("avg_sentence_length", "no sentences");
  } else {
    out.set("avg_sentence_length",
            static_cast<double>(tokens.size()) / static_cast<double>(sentences.size()));
  }
  bool headers = false;
  std::size_t line_start = 0;
  while (line_start <= text.size()) {
    auto end = text.find('\n', line_start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(line_start, end - line_start);
    const auto b = line.find_first_not_of(" \t");
    if (b != std::string_view::npos && line[b] == '#') headers = true;
    line_start = end + 1;
  }
  out.set("has_headers", headers ? 1.0 : 0.0);
  const std::size_t fences = count_substring(text, "```");
  if (sentences.empty()) {
    out.set_null("code_blocks_per_sent", "no sentences");
  } else {
    out.set("code_blocks_per_sent",
            static_cast<double>(fences / 2) / static_cast<double>(sentences.size()));
  }
  std::size_t words = 0, complex = 0;
  for (const auto& t : tokens) {
    const std::size_t s = syllable_count(t);
    if (s == 0) continue;
    ++words;
    if (s >= 3) ++complex;
  }
  if (words == 0) {
    out.set_null("complex_word_ratio", "no words");
  } else {
    out.set("complex_word_ratio", static_cast<double>(complex) / static_cast<double>(words));
  }
  return out;
}

// Every text-only metric for one response.
inline MetricVector text_metrics(std::string_view text, const Taxonomy& taxonomy) {
  MetricVector out = structure_metrics(text);
  out.merge(density_metrics(text));
  out.merge(marker_counts(text, taxonomy));
  return out;
}

}  // namespace srank::text
