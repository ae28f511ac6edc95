#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "srank/error.hpp"
#include "srank/rng.hpp"

namespace srank::stats {

namespace detail {

inline void check_inputs(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ArgumentError("correlation inputs differ in length");
  if (x.size() < 3) throw ArgumentError("correlation needs at least 3 observations");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) {
      throw InputDomainError("non-finite value in correlation input");
    }
  }
}

inline double pearson_unchecked(std::span<const double> x, std::span<const double> y,
                                bool& zero_variance) {
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  zero_variance = sxx == 0.0 || syy == 0.0;
  if (zero_variance) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace detail

// Product-moment correlation; nullopt when either input has zero variance.
inline std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  detail::check_inputs(x, y);
  bool zero = false;
  const double r = detail::pearson_unchecked(x, y, zero);
  if (zero) return std::nullopt;
  return r;
}

// 1-based ranks; ties share their average rank.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

// Pearson correlation of average ranks.
inline std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  detail::check_inputs(x, y);
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

enum class Statistic { pearson, spearman };

// Two-sided permutation test: (1 + #{|stat(x, perm y)| >= |stat(x, y)|}) /
// (1 + n_perm). y is shuffled with Fisher-Yates driven by SplitMix64(seed).
inline std::optional<double> permutation_pvalue(std::span<const double> x,
                                                std::span<const double> y, Statistic stat,
                                                std::uint64_t seed,
                                                std::size_t n_perm = 10000) {
  if (n_perm == 0) throw ArgumentError("n_perm must be >= 1");
  detail::check_inputs(x, y);
  std::vector<double> a(x.begin(), x.end());
  std::vector<double> b(y.begin(), y.end());
  if (stat == Statistic::spearman) {
    a = average_ranks(a);
    b = average_ranks(b);
  }
  bool zero = false;
  const double observed = std::abs(detail::pearson_unchecked(a, b, zero));
  if (zero) return std::nullopt;
  // Guards against rounding making an identical statistic look larger.
  const double bar = observed * (1.0 - 1e-12);
  SplitMix64 rng(seed);
  std::size_t extreme = 0;
  for (std::size_t p = 0; p < n_perm; ++p) {
    for (std::size_t i = b.size() - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(rng.below(i + 1));
      std::swap(b[i], b[j]);
    }
    if (std::abs(detail::pearson_unchecked(a, b, zero)) >= bar) ++extreme;
  }
  return (1.0 + static_cast<double>(extreme)) / (1.0 + static_cast<double>(n_perm));
}

}  // namespace srank::stats
