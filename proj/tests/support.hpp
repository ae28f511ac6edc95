#pragma once

// Generators and independent reference computations shared by the tests.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "srank/matrix.hpp"
#include "srank/reward_eval.hpp"
#include "srank/rng.hpp"
#include "srank/correlation.hpp"

namespace srank::testing {

inline Eigen::MatrixXd to_eigen(const HiddenMatrix& h) {
  Eigen::MatrixXd m(h.rows(), h.cols());
  for (std::size_t i = 0; i < h.rows(); ++i) {
    for (std::size_t j = 0; j < h.cols(); ++j) m(i, j) = h(i, j);
  }
  return m;
}

inline HiddenMatrix from_eigen(const Eigen::MatrixXd& m) {
  std::vector<double> v(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) v[i * m.cols() + j] = m(i, j);
  }
  return {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()), std::move(v)};
}

inline Eigen::MatrixXd gaussian_eigen(std::size_t rows, std::size_t cols, std::mt19937_64& gen) {
  std::normal_distribution<double> nd;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = nd(gen);
  }
  return m;
}

inline HiddenMatrix gaussian(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  return from_eigen(gaussian_eigen(rows, cols, gen));
}

// Haar-distributed orthogonal matrix (QR of a Gaussian with sign fix).
inline Eigen::MatrixXd random_orthogonal(std::size_t n, std::mt19937_64& gen) {
  const Eigen::MatrixXd g = gaussian_eigen(n, n, gen);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR();
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  return q;
}

// Singular values of the reference SVD, descending.
inline std::vector<double> reference_singular_values(const HiddenMatrix& h) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(h));
  const auto& s = svd.singularValues();
  return {s.data(), s.data() + s.size()};
}

inline double reference_stable_rank(const HiddenMatrix& h) {
  const auto s = reference_singular_values(h);
  double f = 0.0;
  for (double x : s) f += x * x;
  return f / (s[0] * s[0]);
}

inline double reference_effective_rank(const HiddenMatrix& h) {
  const auto s = reference_singular_values(h);
  const double total = std::accumulate(s.begin(), s.end(), 0.0);
  double ent = 0.0;
  for (double x : s) {
    const double p = x / total;
    if (p > 0) ent -= p * std::log(p);
  }
  return std::exp(ent);
}

// Eigen-decomposition of the centred covariance; smallest k reaching 95%.
inline std::size_t reference_pca_k95(const HiddenMatrix& h) {
  Eigen::MatrixXd m = to_eigen(h);
  m.rowwise() -= m.colwise().mean();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.transpose() * m);
  std::vector<double> ev(es.eigenvalues().data(), es.eigenvalues().data() + m.cols());
  std::sort(ev.rbegin(), ev.rend());
  double total = 0.0;
  for (double& e : ev) {
    e = std::max(e, 0.0);
    total += e;
  }
  double acc = 0.0;
  for (std::size_t k = 0; k < ev.size(); ++k) {
    acc += ev[k];
    if (acc >= 0.95 * total - 1e-9 * total) return k + 1;
  }
  return ev.size();
}

// T x d matrix with singular values `sv` (len <= min(T,d)), random left and
// right orthogonal factors.
inline HiddenMatrix planted_spectrum(std::size_t rows, std::size_t cols,
                                     const std::vector<double>& sv, std::mt19937_64& gen) {
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(rows, cols);
  for (std::size_t i = 0; i < sv.size(); ++i) s(i, i) = sv[i];
  const Eigen::MatrixXd u = random_orthogonal(rows, gen);
  const Eigen::MatrixXd v = random_orthogonal(cols, gen);
  return from_eigen(u * s * v.transpose());
}

// Geometric spectrum exp(-alpha * i): small alpha spreads energy (high
// stable rank), large alpha concentrates it.
inline std::vector<double> geometric_spectrum(std::size_t n, double alpha) {
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = std::exp(-alpha * static_cast<double>(i));
  return s;
}

// Pairs whose chosen side has a strictly flatter spectrum. With `scramble`
// the sides are swapped by a fair coin, so no metric can beat chance.
inline std::vector<eval::PreferencePair> planted_pairs(std::size_t n, bool scramble,
                                                       std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> alpha(0.05, 0.6);
  std::bernoulli_distribution coin(0.5);
  const char* cats[] = {"chat", "chat_hard", "safety", "reasoning"};
  std::vector<eval::PreferencePair> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = alpha(gen);
    const double b = a + 0.05 + alpha(gen);
    auto good = planted_spectrum(32, 16, geometric_spectrum(16, a), gen);
    auto bad = planted_spectrum(32, 16, geometric_spectrum(16, b), gen);
    if (scramble && coin(gen)) std::swap(good, bad);
    out.push_back({"pair" + std::to_string(i), cats[i % 4], std::move(good), std::move(bad)});
  }
  return out;
}

// Candidate sets with a latent quality q ~ U(0, 1) per candidate: the
// spectrum flattens as q grows and a candidate is correct iff q > 0.7.
inline std::vector<eval::CandidateSet> planted_candidate_sets(std::size_t sets,
                                                              std::size_t n,
                                                              std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> quality(0.0, 1.0);
  std::vector<eval::CandidateSet> out;
  for (std::size_t s = 0; s < sets; ++s) {
    eval::CandidateSet cs{"set" + std::to_string(s), {}, std::vector<bool>{}};
    for (std::size_t c = 0; c < n; ++c) {
      const double q = quality(gen);
      cs.candidates.push_back(planted_spectrum(24, 12, geometric_spectrum(12, 0.8 - 0.7 * q), gen));
      cs.correctness->push_back(q > 0.7);
    }
    out.push_back(std::move(cs));
  }
  return out;
}

// Unit-norm sentence embeddings from a random walk whose step correlation is
// rho: larger rho keeps neighbours closer than distant sentences.
inline HiddenMatrix walk_embeddings(std::size_t n, std::size_t dim, double rho,
                                    std::mt19937_64& gen) {
  std::normal_distribution<double> nd;
  std::vector<double> data;
  std::vector<double> v(dim);
  auto normalise = [](std::vector<double>& x) {
    double s = 0;
    for (double e : x) s += e * e;
    s = std::sqrt(s);
    for (double& e : x) e /= s;
  };
  for (auto& e : v) e = nd(gen);
  normalise(v);
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0) {
      std::vector<double> g(dim);
      for (auto& e : g) e = nd(gen);
      normalise(g);
      for (std::size_t k = 0; k < dim; ++k) v[k] = rho * v[k] + std::sqrt(1 - rho * rho) * g[k];
      normalise(v);
    }
    data.insert(data.end(), v.begin(), v.end());
  }
  return {n, dim, std::move(data)};
}

// Chosen/rejected responses driven by a latent z in [0, 1]: stable rank rises
// with z, sentence count falls with z and embedding progression rises with z.
inline std::vector<text::ScoredResponse> planted_text_corpus(std::size_t pairs,
                                                             std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> uz(0.0, 1.0);
  std::normal_distribution<double> nd;
  const char* words[] = {"alpha", "river", "stone", "model", "light", "paper", "green", "signal"};
  std::vector<text::ScoredResponse> out;
  for (std::size_t p = 0; p < pairs; ++p) {
    for (auto role : {text::ResponseRole::chosen, text::ResponseRole::rejected}) {
      const double z = uz(gen);
      const long sentences = std::clamp<long>(std::lround(14.0 - 10.0 * z + 2.0 * nd(gen)), 3, 30);
      std::string body;
      for (long s = 0; s < sentences; ++s) {
        body += s == 0 ? "The " : " The ";
        for (int w = 0; w < 6; ++w) body += std::string(words[(s * 3 + w + p) % 8]) + " ";
        body += "appears.";
      }
      const double rho = std::clamp(0.6 * z + 0.1 * nd(gen), 0.0, 0.95);
      text::EmbeddingSet emb{walk_embeddings(static_cast<std::size_t>(sentences), 32, rho, gen),
                             std::nullopt};
      text::ScoredResponse r{"q" + std::to_string(p), role, 2.0 + 6.0 * z + 0.5 * nd(gen),
                             text::text_metrics(body, text::default_taxonomy())};
      r.metrics.merge(text::coherence_metrics(emb));
      out.push_back(std::move(r));
    }
  }
  return out;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() /
           ("srank_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(SRANK_FIXTURE_DIR) / name;
}

}  // namespace srank::testing
