#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "srank/error.hpp"
#include "srank/matrix.hpp"
#include "srank/rng.hpp"

namespace srank {

// Largest min(T, d) accepted by the dense singular-value path.
inline constexpr std::size_t kOracleCap = 4096;

// condition_score returns 0 when sigma_min / sigma_max falls below this.
inline constexpr double kConditionFloor = 1e-12;

struct PowerIterConfig {
  int max_iters = 100;
  double rel_tol = 1e-10;
  std::uint64_t seed = 0x5eed5eedULL;
};

struct PowerIterResult {
  double sigma = 0.0;
  bool converged = false;
  int iterations = 0;
};

struct SpectralSummary {
  double stable_rank = 0.0;
  double effective_rank = 0.0;
  double condition_score = 0.0;
  std::size_t pca_k95 = 0;
  double sigma_max = 0.0;
};

enum class Metric { stable_rank, effective_rank, condition_score, pca_k95 };

inline std::string_view metric_name(Metric m) noexcept {
  switch (m) {
    case Metric::stable_rank: return "stable_rank";
    case Metric::effective_rank: return "effective_rank";
    case Metric::condition_score: return "condition_score";
    case Metric::pca_k95: return "pca_k95";
  }
  return "unknown";
}

inline std::optional<Metric> parse_metric(std::string_view name) noexcept {
  for (Metric m : {Metric::stable_rank, Metric::effective_rank,
                   Metric::condition_score, Metric::pca_k95}) {
    if (metric_name(m) == name) return m;
  }
  return std::nullopt;
}

// Neumaier compensated summation.
class CompensatedSum {
 public:
  void add(double x) noexcept {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      carry_ += (sum_ - t) + x;
    } else {
      carry_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const noexcept { return sum_ + carry_; }

 private:
  double sum_ = 0.0;
  double carry_ = 0.0;
};

inline double frobenius_squared(const HiddenMatrix& h) noexcept {
  CompensatedSum acc;
  for (double v : h.data()) acc.add(v * v);
  return acc.value();
}

namespace detail {

// Column-major working copy of H (or of H^T when T < d) so that the number
// of columns is min(T, d).
struct ColumnStore {
  std::size_t m = 0;  // column length
  std::size_t n = 0;  // number of columns
  std::vector<double> a;

  double* col(std::size_t j) noexcept { return a.data() + j * m; }
};

inline ColumnStore to_columns(const HiddenMatrix& h) {
  ColumnStore s;
  const bool tall = h.rows() >= h.cols();
  s.m = tall ? h.rows() : h.cols();
  s.n = tall ? h.cols() : h.rows();
  s.a.resize(s.m * s.n);
  for (std::size_t i = 0; i < h.rows(); ++i) {
    for (std::size_t j = 0; j < h.cols(); ++j) {
      if (tall) {
        s.a[j * s.m + i] = h(i, j);
      } else {
        s.a[i * s.m + j] = h(i, j);
      }
    }
  }
  return s;
}

// One-sided (Hestenes) Jacobi: rotate column pairs until all columns are
// mutually orthogonal; the column norms are then the singular values.
inline std::vector<double> jacobi_singular_values(ColumnStore s) {
  constexpr int kMaxSweeps = 80;
  const double tol = 1e-15;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < s.n; ++p) {
      for (std::size_t q = p + 1; q < s.n; ++q) {
        double* cp = s.col(p);
        double* cq = s.col(q);
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < s.m; ++i) {
          alpha += cp[i] * cp[i];
          beta += cq[i] * cq[i];
          gamma += cp[i] * cq[i];
        }
        if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) {
          continue;
        }
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = c * t;
        for (std::size_t i = 0; i < s.m; ++i) {
          const double x = cp[i];
          const double y = cq[i];
          cp[i] = c * x - sn * y;
          cq[i] = sn * x + c * y;
        }
      }
    }
    if (!rotated) break;
  }
  std::vector<double> sv(s.n);
  for (std::size_t j = 0; j < s.n; ++j) {
    const double* c = s.col(j);
    CompensatedSum acc;
    for (std::size_t i = 0; i < s.m; ++i) acc.add(c[i] * c[i]);
    sv[j] = std::sqrt(acc.value());
  }
  std::sort(sv.begin(), sv.end(), std::greater<>());
  return sv;
}

struct PowerState {
  std::vector<double> x;  // unit vector in R^{min(T,d)}
  double lambda = 0.0;    // Rayleigh quotient, estimate of sigma_1^2
  bool converged = false;
  int iterations = 0;
};

inline double norm2(const std::vector<double>& v) noexcept {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Power iteration on H^T H (d <= T) or H H^T (d > T), applied implicitly as
// two O(Td) products per step.
inline void power_iterate(const HiddenMatrix& h, PowerState& st, int max_iters,
                          double rel_tol) {
  const std::size_t T = h.rows();
  const std::size_t d = h.cols();
  const bool gram_cols = d <= T;
  const std::size_t n = gram_cols ? d : T;
  const std::size_t k = gram_cols ? T : d;
  std::vector<double> z(k), y(n);
  for (int it = 0; it < max_iters; ++it) {
    std::fill(z.begin(), z.end(), 0.0);
    std::fill(y.begin(), y.end(), 0.0);
    if (gram_cols) {
      for (std::size_t i = 0; i < T; ++i) {  // z = H x
        const auto r = h.row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += r[j] * st.x[j];
        z[i] = s;
      }
      for (std::size_t i = 0; i < T; ++i) {  // y = H^T z
        const auto r = h.row(i);
        for (std::size_t j = 0; j < d; ++j) y[j] += r[j] * z[i];
      }
    } else {
      for (std::size_t i = 0; i < T; ++i) {  // z = H^T x
        const auto r = h.row(i);
        for (std::size_t j = 0; j < d; ++j) z[j] += r[j] * st.x[i];
      }
      for (std::size_t i = 0; i < T; ++i) {  // y = H z
        const auto r = h.row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += r[j] * z[j];
        y[i] = s;
      }
    }
    double lambda = 0.0;
    for (double v : z) lambda += v * v;
    ++st.iterations;
    const double ny = norm2(y);
    if (ny == 0.0) {
      // Start vector in the null space; only possible for a (near) zero H.
      st.lambda = 0.0;
      st.converged = true;
      return;
    }
    for (std::size_t j = 0; j < n; ++j) st.x[j] = y[j] / ny;
    const bool done =
        it > 0 && std::abs(lambda - st.lambda) <= rel_tol * lambda;
    st.lambda = lambda;
    if (done) {
      st.converged = true;
      return;
    }
  }
}

inline PowerState power_start(const HiddenMatrix& h, std::uint64_t seed) {
  PowerState st;
  const std::size_t n = h.cols() <= h.rows() ? h.cols() : h.rows();
  st.x.resize(n);
  SplitMix64 rng(seed);
  for (auto& v : st.x) v = rng.normal();
  const double nx = norm2(st.x);
  for (auto& v : st.x) v /= nx;
  return st;
}

inline void require_nonzero(const HiddenMatrix& h, const char* what) {
  if (h.is_zero()) {
    throw DegenerateInputError(std::string(what) + " of an all-zero matrix");
  }
}

}  // namespace detail

// All min(T, d) singular values, non-increasing. Dense reference path.
inline std::vector<double> singular_values(const HiddenMatrix& h,
                                           std::size_t cap = kOracleCap) {
  if (h.min_dim() > cap) {
    throw CapacityError("min(T, d) = " + std::to_string(h.min_dim()) +
                        " exceeds dense SVD cap " + std::to_string(cap));
  }
  return detail::jacobi_singular_values(detail::to_columns(h));
}

// Largest singular value by seeded power iteration. A non-converged
// estimate is returned with converged = false.
inline PowerIterResult spectral_norm_power(const HiddenMatrix& h,
                                           const PowerIterConfig& cfg = {}) {
  if (cfg.max_iters < 1) throw ArgumentError("max_iters must be >= 1");
  if (!(cfg.rel_tol > 0.0)) throw ArgumentError("rel_tol must be > 0");
  if (h.is_zero()) return {0.0, true, 0};
  auto st = detail::power_start(h, cfg.seed);
  detail::power_iterate(h, st, cfg.max_iters, cfg.rel_tol);
  return {std::sqrt(st.lambda), st.converged, st.iterations};
}

// Budget multiplier applied when the configured power iteration has not
// converged; beyond it the dense path supplies sigma_1.
inline constexpr int kPowerRetryFactor = 100;

inline double sigma_max(const HiddenMatrix& h, const PowerIterConfig& cfg = {}) {
  if (h.is_zero()) return 0.0;
  auto st = detail::power_start(h, cfg.seed);
  detail::power_iterate(h, st, cfg.max_iters, cfg.rel_tol);
  if (!st.converged) {
    detail::power_iterate(h, st, cfg.max_iters * kPowerRetryFactor,
                          cfg.rel_tol);
  }
  if (!st.converged && h.min_dim() <= kOracleCap) {
    return singular_values(h).front();
  }
  return std::sqrt(st.lambda);
}

namespace detail {

// Clamped to [1, min(T, d)], which holds exactly; rounding can otherwise put
// a rank-1 matrix at 1 - 1e-16.
inline double stable_rank_ratio(const HiddenMatrix& h, double s1) {
  const double sr = frobenius_squared(h) / (s1 * s1);
  return std::clamp(sr, 1.0, static_cast<double>(h.min_dim()));
}

}  // namespace detail

// ||H||_F^2 / sigma_1^2.
inline double stable_rank(const HiddenMatrix& h,
                          const PowerIterConfig& cfg = {}) {
  detail::require_nonzero(h, "stable rank");
  return detail::stable_rank_ratio(h, sigma_max(h, cfg));
}

inline double effective_rank_from(const std::vector<double>& sv) {
  CompensatedSum total;
  for (double s : sv) total.add(s);
  const double z = total.value();
  if (!(z > 0.0)) throw DegenerateInputError("effective rank of a zero spectrum");
  CompensatedSum entropy;
  for (double s : sv) {
    const double p = s / z;
    if (p > 0.0) entropy.add(-p * std::log(p));
  }
  return std::exp(entropy.value());
}

inline double condition_score_from(const std::vector<double>& sv) {
  const double hi = sv.front();
  if (!(hi > 0.0)) {
    throw DegenerateInputError("condition score with sigma_max = 0");
  }
  const double ratio = sv.back() / hi;
  return ratio < kConditionFloor ? 0.0 : ratio;
}

// exp(Shannon entropy of sigma_i / sum_j sigma_j).
inline double effective_rank(const HiddenMatrix& h) {
  detail::require_nonzero(h, "effective rank");
  return effective_rank_from(singular_values(h));
}

// sigma_min / sigma_max, floored to 0 below kConditionFloor.
inline double condition_score(const HiddenMatrix& h) {
  return condition_score_from(singular_values(h));
}

// Smallest number of principal components (rows centred by the token mean)
// whose explained variance reaches `threshold`. Zero if centring leaves
// nothing.
inline std::size_t pca_k95(const HiddenMatrix& h, double threshold = 0.95) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw ArgumentError("threshold must lie in (0, 1]");
  }
  const std::size_t T = h.rows();
  const std::size_t d = h.cols();
  std::vector<double> mean(d);
  for (std::size_t j = 0; j < d; ++j) {
    CompensatedSum acc;
    for (std::size_t i = 0; i < T; ++i) acc.add(h(i, j));
    mean[j] = acc.value() / static_cast<double>(T);
  }
  std::vector<double> centred(T * d);
  for (std::size_t i = 0; i < T; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      centred[i * d + j] = h(i, j) - mean[j];
    }
  }
  HiddenMatrix c(T, d, std::move(centred));
  const double scale = frobenius_squared(h);
  const double resid = frobenius_squared(c);
  if (resid <= 1e-24 * scale || resid == 0.0) return 0;

  const auto sv = singular_values(c);
  CompensatedSum total;
  for (double s : sv) total.add(s * s);
  const double z = total.value();
  // Absorb rounding at exact ties such as 19 of 20 equal components.
  const double target = threshold - 1e-12;
  CompensatedSum cum;
  for (std::size_t k = 0; k < sv.size(); ++k) {
    cum.add(sv[k] * sv[k]);
    if (cum.value() / z >= target) return k + 1;
  }
  return sv.size();
}

// All five spectral statistics; each field is produced by the same routine
// as the corresponding standalone call.
inline SpectralSummary spectral_summary(const HiddenMatrix& h,
                                        const PowerIterConfig& cfg = {}) {
  detail::require_nonzero(h, "spectral summary");
  SpectralSummary s;
  const double s1 = sigma_max(h, cfg);
  s.stable_rank = detail::stable_rank_ratio(h, s1);
  s.sigma_max = s1;
  const auto sv = singular_values(h);
  s.effective_rank = effective_rank_from(sv);
  s.condition_score = condition_score_from(sv);
  s.pca_k95 = pca_k95(h);
  return s;
}

// Every metric rejects all-zero input here, so callers can treat
// DegenerateInputError uniformly.
inline double metric_value(const HiddenMatrix& h, Metric m) {
  detail::require_nonzero(h, metric_name(m).data());
  switch (m) {
    case Metric::stable_rank: return stable_rank(h);
    case Metric::effective_rank: return effective_rank(h);
    case Metric::condition_score: return condition_score(h);
    case Metric::pca_k95: return static_cast<double>(pca_k95(h));
  }
  return 0.0;
}

inline double metric_value(const SpectralSummary& s, Metric m) noexcept {
  switch (m) {
    case Metric::stable_rank: return s.stable_rank;
    case Metric::effective_rank: return s.effective_rank;
    case Metric::condition_score: return s.condition_score;
    case Metric::pca_k95: return static_cast<double>(s.pca_k95);
  }
  return 0.0;
}

}  // namespace srank
