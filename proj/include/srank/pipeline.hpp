#pragma once

// Manifest-driven scoring shared by the CLI subcommands.

#include <algorithm>
#include <cstddef>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "srank/hidden_io.hpp"
#include "srank/reward_eval.hpp"
#include "srank/spectral.hpp"

namespace srank::pipeline {

inline std::size_t default_jobs() noexcept {
  const auto n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : n;
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads. If any call throws,
// the exception of the lowest failing index is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  std::vector<std::exception_ptr> errors(n);
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::mutex mu;
    std::size_t next = 0;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < jobs; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard lock(mu);
            if (next >= n) return;
            i = next++;
          }
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline std::optional<double> safe_metric(const HiddenMatrix& h, Metric m) {
  try {
    return metric_value(h, m);
  } catch (const DegenerateInputError&) {
    return std::nullopt;
  }
}

// Scores each record once per metric; masks selecting nothing count as
// degenerate, like all-zero matrices.
inline std::optional<double> score_record(const io::ManifestRecord& r, Metric m,
                                          std::optional<std::size_t> max_tokens) {
  try {
    return safe_metric(io::load_record(r, max_tokens), m);
  } catch (const DegenerateInputError&) {
    return std::nullopt;
  }
}

inline std::vector<eval::PairScores> score_pairs(const std::vector<eval::PairRecords>& pairs,
                                                 Metric m,
                                                 std::optional<std::size_t> max_tokens,
                                                 std::size_t jobs) {
  std::vector<eval::PairScores> out(pairs.size());
  parallel_for(pairs.size(), jobs, [&](std::size_t i) {
    const auto& p = pairs[i];
    out[i] = {p.id, p.category, std::nullopt};
    auto c = score_record(p.chosen, m, max_tokens);
    auto r = score_record(p.rejected, m, max_tokens);
    if (c && r) out[i].scores = std::make_pair(*c, *r);
  });
  return out;
}

inline eval::AccuracyReport compare(const std::vector<io::ManifestRecord>& recs, Metric m,
                                    std::optional<std::size_t> max_tokens, std::size_t jobs) {
  const auto pairs = eval::group_pairs(recs);
  if (pairs.empty()) throw ArgumentError("manifest has no chosen/rejected pairs");
  return eval::accumulate(score_pairs(pairs, m, max_tokens, jobs), m);
}

// Accuracy at each truncation length, in grid order.
inline std::vector<std::pair<std::size_t, eval::AccuracyReport>> sweep_length(
    const std::vector<io::ManifestRecord>& recs, Metric m,
    const std::vector<std::size_t>& grid, std::size_t jobs) {
  std::vector<std::pair<std::size_t, eval::AccuracyReport>> out;
  for (std::size_t max_tokens : grid) {
    out.emplace_back(max_tokens, compare(recs, m, max_tokens, jobs));
  }
  return out;
}

inline std::vector<eval::ScoredCandidateSet> score_candidate_sets(
    const std::vector<eval::CandidateRecords>& sets, Metric m,
    std::optional<std::size_t> max_tokens, std::size_t jobs) {
  std::vector<std::string> missing;
  for (const auto& s : sets) {
    if (!s.correctness) missing.push_back(s.id);
  }
  if (!missing.empty()) {
    std::string ids;
    for (const auto& id : missing) ids += (ids.empty() ? "" : ", ") + id;
    throw ArgumentError("missing correctness labels for: " + ids);
  }
  // Flatten so that every candidate matrix is an independent work item.
  std::vector<std::pair<std::size_t, std::size_t>> items;
  std::vector<eval::ScoredCandidateSet> out(sets.size());
  for (std::size_t s = 0; s < sets.size(); ++s) {
    out[s].id = sets[s].id;
    out[s].correctness = *sets[s].correctness;
    out[s].scores.resize(sets[s].candidates.size());
    for (std::size_t c = 0; c < sets[s].candidates.size(); ++c) items.emplace_back(s, c);
  }
  parallel_for(items.size(), jobs, [&](std::size_t i) {
    const auto [s, c] = items[i];
    out[s].scores[c] = score_record(sets[s].candidates[c], m, max_tokens);
  });
  return out;
}

}  // namespace srank::pipeline
