#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "srank/error.hpp"
#include "srank/hidden_io.hpp"
#include "srank/matrix.hpp"
#include "srank/rng.hpp"
#include "srank/spectral.hpp"

namespace srank::eval {

struct PreferencePair {
  std::string id;
  std::string category;
  HiddenMatrix chosen;
  HiddenMatrix rejected;
};

struct CandidateSet {
  std::string id;
  std::vector<HiddenMatrix> candidates;
  std::optional<std::vector<bool>> correctness;
};

enum class Verdict { chosen, rejected, tie };

// Relative band inside which two scores count as tied.
inline constexpr double kTieTolerance = 1e-12;

inline Verdict compare_scores(double chosen, double rejected) noexcept {
  const double scale = std::max(std::abs(chosen), std::abs(rejected));
  if (std::abs(chosen - rejected) <= kTieTolerance * scale) return Verdict::tie;
  return chosen > rejected ? Verdict::chosen : Verdict::rejected;
}

// Higher metric wins. Throws DegenerateInputError for all-zero matrices.
inline Verdict predict_preference(const PreferencePair& p, Metric m) {
  return compare_scores(metric_value(p.chosen, m), metric_value(p.rejected, m));
}

struct CategoryCounts {
  std::size_t wins = 0;
  std::size_t ties = 0;
  std::size_t total = 0;

  // Ties earn half credit.
  double correct() const noexcept {
    return static_cast<double>(wins) + 0.5 * static_cast<double>(ties);
  }
  double accuracy() const noexcept {
    return total == 0 ? 0.0 : correct() / static_cast<double>(total);
  }
};

struct AccuracyReport {
  Metric metric = Metric::stable_rank;
  std::map<std::string, CategoryCounts> categories;
  CategoryCounts overall;
  std::vector<std::string> unevaluable;  // ids of pairs with a degenerate side

  double accuracy(const std::string& category) const {
    auto it = categories.find(category);
    return it == categories.end() ? 0.0 : it->second.accuracy();
  }
};

// Accumulates verdicts in any order; the result depends only on the multiset.
class AccuracyAccumulator {
 public:
  explicit AccuracyAccumulator(Metric m) { report_.metric = m; }

  void add(const std::string& category, Verdict v) {
    for (CategoryCounts* c : {&report_.categories[category], &report_.overall}) {
      ++c->total;
      if (v == Verdict::chosen) ++c->wins;
      if (v == Verdict::tie) ++c->ties;
    }
  }
  void add_unevaluable(const std::string& id) { report_.unevaluable.push_back(id); }

  AccuracyReport finish() {
    std::sort(report_.unevaluable.begin(), report_.unevaluable.end());
    if (report_.overall.total == 0) {
      throw ArgumentError("no evaluable preference pairs");
    }
    return report_;
  }

 private:
  AccuracyReport report_;
};

// Scores for both sides of a pair, or nullopt when either side is degenerate.
struct PairScores {
  std::string id;
  std::string category;
  std::optional<std::pair<double, double>> scores;
};

inline AccuracyReport accumulate(const std::vector<PairScores>& scored, Metric m) {
  AccuracyAccumulator acc(m);
  for (const auto& s : scored) {
    if (s.scores) {
      acc.add(s.category, compare_scores(s.scores->first, s.scores->second));
    } else {
      acc.add_unevaluable(s.id);
    }
  }
  return acc.finish();
}

inline PairScores score_pair(const PreferencePair& p, Metric m) {
  PairScores s{p.id, p.category, std::nullopt};
  try {
    s.scores = std::make_pair(metric_value(p.chosen, m), metric_value(p.rejected, m));
  } catch (const DegenerateInputError&) {
  }
  return s;
}

inline AccuracyReport evaluate_pairs(const std::vector<PreferencePair>& pairs,
                                     Metric m) {
  if (pairs.empty()) throw ArgumentError("no preference pairs");
  std::vector<PairScores> scored;
  scored.reserve(pairs.size());
  for (const auto& p : pairs) scored.push_back(score_pair(p, m));
  return accumulate(scored, m);
}

// argmax of the metric; the lowest index wins ties. Degenerate candidates
// are skipped.
inline std::size_t select_best_from_scores(
    const std::vector<std::optional<double>>& scores) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!scores[i]) continue;
    if (!best || *scores[i] > *scores[*best]) best = i;
  }
  if (!best) throw DegenerateInputError("every candidate is degenerate");
  return *best;
}

inline std::vector<std::optional<double>> score_candidates(const CandidateSet& set,
                                                           Metric m) {
  std::vector<std::optional<double>> out;
  out.reserve(set.candidates.size());
  for (const auto& c : set.candidates) {
    try {
      out.emplace_back(metric_value(c, m));
    } catch (const DegenerateInputError&) {
      out.emplace_back(std::nullopt);
    }
  }
  return out;
}

inline void validate(const CandidateSet& set) {
  if (set.candidates.empty()) throw ArgumentError("candidate set \"" + set.id + "\" is empty");
  if (set.correctness && set.correctness->size() != set.candidates.size()) {
    throw ArgumentError("candidate set \"" + set.id + "\": correctness length mismatch");
  }
}

inline std::size_t select_best_of_n(const CandidateSet& set, Metric m) {
  validate(set);
  return select_best_from_scores(score_candidates(set, m));
}

// Uniform over [0, n) from SplitMix64(seed).below(n).
inline std::size_t select_random_index(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ArgumentError("cannot select from zero candidates");
  SplitMix64 rng(seed);
  return static_cast<std::size_t>(rng.below(n));
}

inline std::size_t select_random(const CandidateSet& set, std::uint64_t seed) {
  validate(set);
  return select_random_index(set.candidates.size(), seed);
}

// Best-of-N table. Candidate 0 is the greedy decode.
struct BonRow {
  std::size_t n = 0;
  double greedy = 0.0;
  double random = 0.0;
  double best = 0.0;
  std::optional<double> delta_random_pct;  // (best - random) / random * 100
  std::optional<double> delta_greedy_pct;  // (best - greedy) / greedy * 100
};

struct BonReport {
  Metric metric = Metric::stable_rank;
  std::size_t sets = 0;
  std::vector<BonRow> rows;
};

// Per-set scores are computed once and reused across every N.
struct ScoredCandidateSet {
  std::string id;
  std::vector<std::optional<double>> scores;
  std::vector<bool> correctness;
};

inline std::optional<double> relative_delta_pct(double value, double base) {
  if (base == 0.0) return std::nullopt;
  return (value - base) / base * 100.0;
}

// Random accuracy is averaged over `seeds`; each (seed, set, N) triple draws
// from its own derived stream.
inline BonReport bon_report_scored(const std::vector<ScoredCandidateSet>& sets,
                                   const std::vector<std::size_t>& ns,
                                   const std::vector<std::uint64_t>& seeds,
                                   Metric m) {
  if (sets.empty()) throw ArgumentError("no candidate sets");
  if (seeds.empty()) throw ArgumentError("at least one seed is required");
  BonReport rep;
  rep.metric = m;
  rep.sets = sets.size();
  const double count = static_cast<double>(sets.size());
  double greedy_hits = 0.0;
  for (const auto& s : sets) greedy_hits += s.correctness.at(0) ? 1.0 : 0.0;
  for (std::size_t n : ns) {
    if (n == 0) throw ArgumentError("N must be >= 1");
    BonRow row;
    row.n = n;
    row.greedy = greedy_hits / count;
    double best_hits = 0.0, random_hits = 0.0;
    for (std::size_t k = 0; k < sets.size(); ++k) {
      const auto& s = sets[k];
      if (s.scores.size() < n) {
        throw ArgumentError("candidate set \"" + s.id + "\" has fewer than " +
                            std::to_string(n) + " candidates");
      }
      std::vector<std::optional<double>> prefix(s.scores.begin(), s.scores.begin() + n);
      best_hits += s.correctness[select_best_from_scores(prefix)] ? 1.0 : 0.0;
      for (std::uint64_t seed : seeds) {
        const std::uint64_t stream = derive_seed(derive_seed(seed, k), n);
        random_hits += s.correctness[select_random_index(n, stream)] ? 1.0 : 0.0;
      }
    }
    row.best = best_hits / count;
    row.random = random_hits / (count * static_cast<double>(seeds.size()));
    row.delta_random_pct = relative_delta_pct(row.best, row.random);
    row.delta_greedy_pct = relative_delta_pct(row.best, row.greedy);
    rep.rows.push_back(row);
  }
  return rep;
}

inline BonReport bon_report(const std::vector<CandidateSet>& sets,
                            const std::vector<std::size_t>& ns,
                            const std::vector<std::uint64_t>& seeds,
                            Metric m = Metric::stable_rank) {
  std::vector<std::string> missing;
  for (const auto& s : sets) {
    if (!s.correctness) missing.push_back(s.id);
  }
  if (!missing.empty()) {
    std::string ids;
    for (const auto& id : missing) ids += (ids.empty() ? "" : ", ") + id;
    throw ArgumentError("missing correctness labels for: " + ids);
  }
  std::vector<ScoredCandidateSet> scored;
  for (const auto& s : sets) {
    validate(s);
    scored.push_back({s.id, score_candidates(s, m), *s.correctness});
  }
  return bon_report_scored(scored, ns, seeds, m);
}

// ---- manifest grouping ----

inline bool parse_bool_label(const std::string& v, bool& out) {
  if (v == "true" || v == "1") {
    out = true;
    return true;
  }
  if (v == "false" || v == "0") {
    out = false;
    return true;
  }
  return false;
}

struct PairRecords {
  std::string id;
  std::string category;
  io::ManifestRecord chosen;
  io::ManifestRecord rejected;
};

// Groups chosen/rejected records by id, in first-appearance order.
inline std::vector<PairRecords> group_pairs(const std::vector<io::ManifestRecord>& recs) {
  std::vector<std::string> order;
  std::map<std::string, std::pair<const io::ManifestRecord*, const io::ManifestRecord*>> by_id;
  for (const auto& r : recs) {
    if (r.role == io::Role::candidate) continue;
    auto [it, inserted] = by_id.try_emplace(r.id, nullptr, nullptr);
    if (inserted) order.push_back(r.id);
    (r.role == io::Role::chosen ? it->second.first : it->second.second) = &r;
  }
  std::vector<PairRecords> out;
  for (const auto& id : order) {
    const auto& [c, rj] = by_id[id];
    if (!c || !rj) throw ArgumentError("id \"" + id + "\" lacks a chosen or rejected record");
    out.push_back({id, c->category.empty() ? rj->category : c->category, *c, *rj});
  }
  return out;
}

struct CandidateRecords {
  std::string id;
  std::vector<io::ManifestRecord> candidates;  // sorted by candidate_index
  std::optional<std::vector<bool>> correctness;
};

// Candidates per id must have indices 0..N-1. Correctness comes from
// metadata["correct"] ("true"/"false"/"1"/"0") and is present only when
// every candidate of the set carries it.
inline std::vector<CandidateRecords> group_candidates(
    const std::vector<io::ManifestRecord>& recs) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<io::ManifestRecord>> by_id;
  for (const auto& r : recs) {
    if (r.role != io::Role::candidate) continue;
    auto [it, inserted] = by_id.try_emplace(r.id);
    if (inserted) order.push_back(r.id);
    it->second.push_back(r);
  }
  std::vector<CandidateRecords> out;
  for (const auto& id : order) {
    auto cands = by_id[id];
    std::sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
      return *a.candidate_index < *b.candidate_index;
    });
    std::vector<bool> labels;
    bool all_labelled = true;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      if (*cands[i].candidate_index != static_cast<int>(i)) {
        throw ArgumentError("id \"" + id + "\": candidate indices are not 0..N-1");
      }
      auto it = cands[i].metadata.find("correct");
      bool v = false;
      if (it == cands[i].metadata.end() || !parse_bool_label(it->second, v)) {
        all_labelled = false;
      }
      labels.push_back(v);
    }
    CandidateRecords cr{id, std::move(cands), std::nullopt};
    if (all_labelled) cr.correctness = std::move(labels);
    out.push_back(std::move(cr));
  }
  return out;
}

// ---- report serialisation ----

inline std::string format_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline std::string accuracy_csv(const AccuracyReport& r) {
  std::ostringstream os;
  os << "category,metric,correct,total,ties,accuracy\n";
  auto line = [&](const std::string& cat, const CategoryCounts& c) {
    os << cat << ',' << metric_name(r.metric) << ',' << format_real(c.correct())
       << ',' << c.total << ',' << c.ties << ',' << format_real(c.accuracy())
       << '\n';
  };
  for (const auto& [cat, c] : r.categories) line(cat, c);
  line("overall", r.overall);
  return os.str();
}

inline nlohmann::ordered_json accuracy_json(const AccuracyReport& r) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  auto row = [&](const std::string& cat, const CategoryCounts& c) {
    rows.push_back({{"category", cat},
                    {"metric", metric_name(r.metric)},
                    {"correct", c.correct()},
                    {"total", c.total},
                    {"ties", c.ties},
                    {"accuracy", c.accuracy()}});
  };
  for (const auto& [cat, c] : r.categories) row(cat, c);
  row("overall", r.overall);
  return {{"rows", rows}, {"unevaluable", r.unevaluable}};
}

inline std::string optional_real(const std::optional<double>& v) {
  return v ? format_real(*v) : "n/a";
}

inline std::string bon_csv(const BonReport& r) {
  std::ostringstream os;
  os << "n,metric,sets,greedy,random,best,delta_random_pct,delta_greedy_pct\n";
  for (const auto& row : r.rows) {
    os << row.n << ',' << metric_name(r.metric) << ',' << r.sets << ','
       << format_real(row.greedy) << ',' << format_real(row.random) << ','
       << format_real(row.best) << ',' << optional_real(row.delta_random_pct)
       << ',' << optional_real(row.delta_greedy_pct) << '\n';
  }
  return os.str();
}

inline nlohmann::ordered_json bon_json(const BonReport& r) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  auto opt = [](const std::optional<double>& v) -> nlohmann::ordered_json {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json("n/a");
  };
  for (const auto& row : r.rows) {
    rows.push_back({{"n", row.n},
                    {"greedy", row.greedy},
                    {"random", row.random},
                    {"best", row.best},
                    {"delta_random_pct", opt(row.delta_random_pct)},
                    {"delta_greedy_pct", opt(row.delta_greedy_pct)}});
  }
  return {{"metric", metric_name(r.metric)}, {"sets", r.sets}, {"rows", rows}};
}

}  // namespace srank::eval
