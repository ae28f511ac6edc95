#pragma once

// Corpus ingestion and the two correlation analyses between text metrics
// and stable rank: one observation per response, or one per chosen/rejected
// pair using within-pair differences.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "srank/error.hpp"
#include "srank/hidden_io.hpp"
#include "srank/npy.hpp"
#include "srank/stats.hpp"
#include "srank/text_metrics.hpp"

namespace srank::text {

enum class ResponseRole { chosen, rejected, single };

struct ResponseText {
  std::string id;
  ResponseRole role = ResponseRole::single;
  std::string text;
  double stable_rank = 0.0;
  std::optional<double> perplexity;
  std::optional<double> model_uncertainty;
  std::optional<std::filesystem::path> embedding_path;
  std::optional<std::filesystem::path> prompt_embedding_path;
};

struct ScoredResponse {
  std::string id;
  ResponseRole role = ResponseRole::single;
  double stable_rank = 0.0;
  MetricVector metrics;
};

inline std::vector<ResponseText> parse_corpus(std::istream& in,
                                              const std::filesystem::path& base) {
  std::vector<ResponseText> out;
  std::set<std::pair<std::string, int>> seen;
  std::string line_text;
  std::size_t line = 0;
  auto path_field = [&](const nlohmann::json& j, const char* key)
      -> std::optional<std::filesystem::path> {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) throw io::ManifestError(line, std::string(key) + " must be a string");
    std::filesystem::path p = it->get<std::string>();
    return p.is_absolute() ? p : base / p;
  };
  auto real_field = [&](const nlohmann::json& j, const char* key) -> std::optional<double> {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (!it->is_number()) throw io::ManifestError(line, std::string(key) + " must be a number");
    return it->get<double>();
  };
  while (std::getline(in, line_text)) {
    ++line;
    if (line_text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line_text);
    } catch (const nlohmann::json::parse_error& e) {
      throw io::ManifestError(line, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw io::ManifestError(line, "record is not a JSON object");
    ResponseText r;
    for (const char* key : {"id", "role", "text"}) {
      if (!j.contains(key) || !j[key].is_string()) {
        throw io::ManifestError(line, std::string("missing string \"") + key + "\"");
      }
    }
    r.id = j["id"].get<std::string>();
    const auto role = j["role"].get<std::string>();
    if (role == "chosen") {
      r.role = ResponseRole::chosen;
    } else if (role == "rejected") {
      r.role = ResponseRole::rejected;
    } else if (role == "single") {
      r.role = ResponseRole::single;
    } else {
      throw io::ManifestError(line, "unknown role \"" + role + "\"");
    }
    r.text = j["text"].get<std::string>();
    auto sr = real_field(j, "stable_rank");
    if (!sr) throw io::ManifestError(line, "missing \"stable_rank\"");
    r.stable_rank = *sr;
    r.perplexity = real_field(j, "perplexity");
    r.model_uncertainty = real_field(j, "model_uncertainty");
    r.embedding_path = path_field(j, "embedding_path");
    r.prompt_embedding_path = path_field(j, "prompt_embedding_path");
    if (!seen.emplace(r.id, static_cast<int>(r.role)).second) {
      throw io::ManifestError(line, "duplicate response for id \"" + r.id + "\"");
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<ResponseText> load_corpus(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open corpus " + p.string());
  return parse_corpus(in, p.parent_path());
}

// Taxonomy file: JSON object mapping category to a list of keywords.
inline Taxonomy parse_taxonomy(const nlohmann::ordered_json& j) {
  if (!j.is_object()) throw ParseError("taxonomy", "expected a JSON object");
  Taxonomy t;
  for (const auto& [cat, words] : j.items()) {
    if (!words.is_array()) throw ParseError("taxonomy", "\"" + cat + "\" must be a list");
    std::vector<std::string> kws;
    for (const auto& w : words) {
      if (!w.is_string()) throw ParseError("taxonomy", "keywords must be strings");
      kws.push_back(to_lower_ascii(w.get<std::string>()));
    }
    t.emplace_back(cat, std::move(kws));
  }
  if (t.empty()) throw ArgumentError("marker taxonomy is empty");
  return t;
}

inline Taxonomy load_taxonomy(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open taxonomy " + p.string());
  return parse_taxonomy(nlohmann::ordered_json::parse(in));
}

inline nlohmann::ordered_json taxonomy_json(const Taxonomy& t) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [cat, kws] : t) j[cat] = kws;
  return j;
}

// Text metrics, embedding coherence when an embedding file is present, and
// any ingested model-side columns.
inline ScoredResponse score_response(const ResponseText& r, const Taxonomy& taxonomy) {
  ScoredResponse s{r.id, r.role, r.stable_rank, text_metrics(r.text, taxonomy)};
  if (r.embedding_path) {
    EmbeddingSet emb{io::load_matrix(*r.embedding_path), std::nullopt};
    if (r.prompt_embedding_path) emb.prompt = io::load_vector(*r.prompt_embedding_path);
    const auto n = split_sentences(r.text).size();
    if (emb.sentences.rows() != n) {
      throw ArgumentError("response \"" + r.id + "\": " +
                          std::to_string(emb.sentences.rows()) +
                          " sentence embeddings for " + std::to_string(n) + " sentences");
    }
    s.metrics.merge(coherence_metrics(emb));
  }
  if (r.perplexity) s.metrics.set("perplexity", *r.perplexity);
  if (r.model_uncertainty) s.metrics.set("model_uncertainty", *r.model_uncertainty);
  return s;
}

enum class AnalysisKind { sample_level, paired_difference };

inline std::string_view analysis_name(AnalysisKind k) noexcept {
  return k == AnalysisKind::sample_level ? "sample_level" : "paired_difference";
}

struct CorrelationRow {
  std::string metric;
  std::optional<double> pearson;
  std::optional<double> spearman;
  std::optional<double> p_pearson;
  std::optional<double> p_spearman;
  std::size_t n = 0;
  std::string reason;  // set when the row has no statistics
};

struct CorrelationReport {
  AnalysisKind kind = AnalysisKind::sample_level;
  std::vector<CorrelationRow> rows;

  const CorrelationRow* find(const std::string& metric) const {
    for (const auto& r : rows) {
      if (r.metric == metric) return &r;
    }
    return nullptr;
  }
};

struct AnalysisOptions {
  std::uint64_t seed = 0;
  std::size_t n_perm = 10000;
};

namespace detail {

inline std::vector<std::string> metric_names(const std::vector<const MetricVector*>& vs) {
  std::vector<std::string> names;
  std::set<std::string> seen;
  for (const auto* v : vs) {
    for (const auto& [k, _] : v->entries()) {
      if (seen.insert(k).second) names.push_back(k);
    }
  }
  return names;
}

inline CorrelationRow correlate(const std::string& metric, const std::vector<double>& x,
                                const std::vector<double>& y, std::uint64_t seed,
                                const AnalysisOptions& opt) {
  CorrelationRow row;
  row.metric = metric;
  row.n = x.size();
  if (x.size() < 3) {
    row.reason = "fewer than 3 observations";
    return row;
  }
  row.pearson = stats::pearson(x, y);
  row.spearman = stats::spearman(x, y);
  if (!row.pearson) {
    row.reason = "zero variance";
    return row;
  }
  row.p_pearson =
      stats::permutation_pvalue(x, y, stats::Statistic::pearson, derive_seed(seed, 0), opt.n_perm);
  if (row.spearman) {
    row.p_spearman = stats::permutation_pvalue(x, y, stats::Statistic::spearman,
                                               derive_seed(seed, 1), opt.n_perm);
  }
  return row;
}

}  // namespace detail

// One observation per response: metric value against stable rank, nulls
// dropped per metric.
inline CorrelationReport sample_level_analysis(const std::vector<ScoredResponse>& corpus,
                                               const AnalysisOptions& opt = {}) {
  if (corpus.empty()) throw ArgumentError("empty corpus");
  std::vector<const MetricVector*> vs;
  for (const auto& r : corpus) vs.push_back(&r.metrics);
  CorrelationReport rep{AnalysisKind::sample_level, {}};
  const auto names = detail::metric_names(vs);
  for (std::size_t k = 0; k < names.size(); ++k) {
    std::vector<double> x, y;
    for (const auto& r : corpus) {
      if (auto v = r.metrics.get(names[k])) {
        x.push_back(*v);
        y.push_back(r.stable_rank);
      }
    }
    rep.rows.push_back(detail::correlate(names[k], x, y, derive_seed(opt.seed, k), opt));
  }
  return rep;
}

struct ResponsePair {
  const ScoredResponse* chosen;
  const ScoredResponse* rejected;
};

// Matches chosen and rejected responses by id, in order of first appearance.
inline std::vector<ResponsePair> pair_responses(const std::vector<ScoredResponse>& corpus) {
  std::vector<std::string> order;
  std::map<std::string, ResponsePair> by_id;
  for (const auto& r : corpus) {
    if (r.role == ResponseRole::single) continue;
    auto [it, inserted] = by_id.try_emplace(r.id, ResponsePair{nullptr, nullptr});
    if (inserted) order.push_back(r.id);
    (r.role == ResponseRole::chosen ? it->second.chosen : it->second.rejected) = &r;
  }
  std::vector<ResponsePair> out;
  for (const auto& id : order) {
    const auto& p = by_id[id];
    if (p.chosen && p.rejected) out.push_back(p);
  }
  return out;
}

// Correlates M(chosen) - M(rejected) with S(chosen) - S(rejected) across pairs.
inline CorrelationReport paired_difference_analysis(const std::vector<ResponsePair>& pairs,
                                                    const AnalysisOptions& opt = {}) {
  if (pairs.empty()) throw ArgumentError("no chosen/rejected pairs");
  std::vector<const MetricVector*> vs;
  for (const auto& p : pairs) {
    vs.push_back(&p.chosen->metrics);
    vs.push_back(&p.rejected->metrics);
  }
  CorrelationReport rep{AnalysisKind::paired_difference, {}};
  const auto names = detail::metric_names(vs);
  for (std::size_t k = 0; k < names.size(); ++k) {
    std::vector<double> dm, ds;
    for (const auto& p : pairs) {
      auto c = p.chosen->metrics.get(names[k]);
      auto r = p.rejected->metrics.get(names[k]);
      if (!c || !r) continue;
      dm.push_back(*c - *r);
      ds.push_back(p.chosen->stable_rank - p.rejected->stable_rank);
    }
    rep.rows.push_back(detail::correlate(names[k], dm, ds, derive_seed(opt.seed, k), opt));
  }
  return rep;
}

// ---- serialisation ----

inline std::string format_optional(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os.precision(17);
  os << *v;
  return os.str();
}

// CSV columns: metric, analysis, pearson, spearman, p, n. p is the Pearson
// permutation p-value; empty cells are nulls.
inline std::string correlation_csv(const std::vector<CorrelationReport>& reports) {
  std::ostringstream os;
  os << "metric,analysis,pearson,spearman,p,n\n";
  for (const auto& rep : reports) {
    for (const auto& r : rep.rows) {
      os << r.metric << ',' << analysis_name(rep.kind) << ',' << format_optional(r.pearson)
         << ',' << format_optional(r.spearman) << ',' << format_optional(r.p_pearson) << ','
         << r.n << '\n';
    }
  }
  return os.str();
}

inline nlohmann::ordered_json correlation_json(const std::vector<CorrelationReport>& reports) {
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  };
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& rep : reports) {
    for (const auto& r : rep.rows) {
      nlohmann::ordered_json j = {{"metric", r.metric},
                                  {"analysis", analysis_name(rep.kind)},
                                  {"pearson", opt(r.pearson)},
                                  {"spearman", opt(r.spearman)},
                                  {"p", opt(r.p_pearson)},
                                  {"p_spearman", opt(r.p_spearman)},
                                  {"n", r.n}};
      if (!r.reason.empty()) j["reason"] = r.reason;
      rows.push_back(std::move(j));
    }
  }
  return rows;
}

inline nlohmann::ordered_json metric_vector_json(const ScoredResponse& r) {
  nlohmann::ordered_json values = nlohmann::ordered_json::object();
  nlohmann::ordered_json nulls = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.metrics.entries()) {
    if (v.value) {
      values[k] = *v.value;
    } else {
      values[k] = nullptr;
      nulls[k] = v.reason;
    }
  }
  const char* role = r.role == ResponseRole::chosen     ? "chosen"
                     : r.role == ResponseRole::rejected ? "rejected"
                                                        : "single";
  return {{"id", r.id},
          {"role", role},
          {"stable_rank", r.stable_rank},
          {"metrics", values},
          {"null_reasons", nulls}};
}

}  // namespace srank::text
