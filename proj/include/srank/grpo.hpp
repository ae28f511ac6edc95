#pragma once

// Group-relative policy optimisation with a stable-rank reward, on a bigram
// toy policy. The reward comes from a frozen embedder: each sampled token is
// mapped to a fixed unit vector and the sequence is scored by the stable
// rank of the stacked vectors.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "srank/error.hpp"
#include "srank/matrix.hpp"
#include "srank/rng.hpp"
#include "srank/spectral.hpp"

namespace srank::grpo {

using Sequence = std::vector<std::size_t>;

// Row-wise log-softmax of a V x V logit table.
inline std::vector<double> log_softmax_row(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double v : logits) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  std::vector<double> out(logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j) out[j] = logits[j] - lse;
  return out;
}

// Bigram policy: theta[prev][next] logits; every sequence starts after the
// BOS token 0.
class ToyPolicy {
 public:
  static constexpr std::size_t kBos = 0;

  ToyPolicy(std::size_t vocab, std::size_t seq_len)
      : ToyPolicy(vocab, seq_len, std::vector<double>(vocab * vocab, 0.0)) {}

  ToyPolicy(std::size_t vocab, std::size_t seq_len, std::vector<double> theta)
      : vocab_(vocab), seq_len_(seq_len), theta_(std::move(theta)) {
    if (vocab_ < 1) throw ArgumentError("vocab must be >= 1");
    if (seq_len_ < 1) throw ArgumentError("seq_len must be >= 1");
    if (theta_.size() != vocab_ * vocab_) throw ArgumentError("theta must be V x V");
    for (double v : theta_) {
      if (!std::isfinite(v)) throw InputDomainError("non-finite logit");
    }
  }

  std::size_t vocab() const noexcept { return vocab_; }
  std::size_t seq_len() const noexcept { return seq_len_; }
  std::span<const double> theta() const noexcept { return theta_; }
  std::span<double> theta_mut() noexcept { return theta_; }
  double& logit(std::size_t prev, std::size_t next) { return theta_[prev * vocab_ + next]; }
  std::span<const double> row(std::size_t prev) const noexcept {
    return {theta_.data() + prev * vocab_, vocab_};
  }
  std::vector<double> log_probs(std::size_t prev) const { return log_softmax_row(row(prev)); }

  double sequence_log_prob(const Sequence& seq) const {
    double lp = 0.0;
    std::size_t prev = kBos;
    for (std::size_t t : seq) {
      lp += log_probs(prev).at(t);
      prev = t;
    }
    return lp;
  }

  friend bool operator==(const ToyPolicy&, const ToyPolicy&) = default;

 private:
  std::size_t vocab_;
  std::size_t seq_len_;
  std::vector<double> theta_;
};

// FNV-1a over the little-endian bytes of the values.
inline std::uint64_t fnv1a64(std::span<const double> values) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : values) {
    unsigned char b[sizeof(double)];
    std::memcpy(b, &v, sizeof(double));
    for (unsigned char c : b) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

// Frozen token -> unit vector map. The digest is fixed at construction
// (or supplied when restoring a saved embedder) and checked before use.
class ReferenceEmbedder {
 public:
  explicit ReferenceEmbedder(HiddenMatrix table)
      : table_(std::move(table)), frozen_hash_(fnv1a64(table_.data())) {
    for (std::size_t i = 0; i < table_.rows(); ++i) {
      double s = 0.0;
      for (double v : table_.row(i)) s += v * v;
      if (std::abs(std::sqrt(s) - 1.0) > 1e-9) {
        throw ArgumentError("embedder row " + std::to_string(i) + " is not unit-norm");
      }
    }
  }

  // Restores an embedder with a previously recorded digest; verify() fails
  // if the table no longer matches it.
  static ReferenceEmbedder restore(HiddenMatrix table, std::uint64_t recorded_hash) {
    ReferenceEmbedder e(std::move(table));
    e.frozen_hash_ = recorded_hash;
    return e;
  }

  // V x V identity: one orthonormal direction per token.
  static ReferenceEmbedder orthonormal(std::size_t vocab) {
    std::vector<double> data(vocab * vocab, 0.0);
    for (std::size_t i = 0; i < vocab; ++i) data[i * vocab + i] = 1.0;
    return ReferenceEmbedder(HiddenMatrix(vocab, vocab, std::move(data)));
  }

  std::size_t vocab() const noexcept { return table_.rows(); }
  std::size_t dim() const noexcept { return table_.cols(); }
  std::uint64_t frozen_hash() const noexcept { return frozen_hash_; }
  const HiddenMatrix& table() const noexcept { return table_; }

  void verify() const {
    if (fnv1a64(table_.data()) != frozen_hash_) {
      throw FrozenReferenceError("reference embedder digest changed");
    }
  }

  HiddenMatrix embed(const Sequence& seq) const {
    std::vector<double> data;
    data.reserve(seq.size() * dim());
    for (std::size_t t : seq) {
      if (t >= vocab()) throw ArgumentError("token outside vocabulary");
      const auto r = table_.row(t);
      data.insert(data.end(), r.begin(), r.end());
    }
    return {seq.size(), dim(), std::move(data)};
  }

 private:
  HiddenMatrix table_;
  std::uint64_t frozen_hash_;
};

struct Member {
  Sequence tokens;
  double logp = 0.0;      // under the current policy
  double logp_old = 0.0;  // under the snapshot the group was sampled from
  double logp_ref = 0.0;  // under the reference policy
  double reward = 0.0;
  double advantage = 0.0;
};

struct GroupBatch {
  std::string prompt_id = "bos";
  std::vector<Member> members;
};

struct TrainConfig {
  std::size_t group_size = 8;  // K
  double beta = 0.04;
  double eps = 1e-8;
  double learning_rate = 2.0;
  std::size_t steps = 500;
  std::size_t seq_len = 8;
  std::uint64_t seed = 0;

  void validate() const {
    if (group_size < 2) throw ArgumentError("group size K must be >= 2");
    if (!(beta >= 0.0)) throw ArgumentError("beta must be >= 0");
    if (!(eps > 0.0)) throw ArgumentError("eps must be > 0");
    if (!(learning_rate > 0.0)) throw ArgumentError("learning rate must be > 0");
    if (seq_len < 1) throw ArgumentError("sequence length must be >= 1");
  }
};

// K ancestral samples of length L from BOS. logp and logp_old are both the
// sampling policy's log-probability.
inline GroupBatch sample_group(const ToyPolicy& policy, std::size_t k, std::size_t len,
                               std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<std::vector<double>> cdf(policy.vocab());
  for (std::size_t a = 0; a < policy.vocab(); ++a) {
    const auto lp = policy.log_probs(a);
    double c = 0.0;
    cdf[a].resize(lp.size());
    for (std::size_t b = 0; b < lp.size(); ++b) cdf[a][b] = (c += std::exp(lp[b]));
  }
  GroupBatch batch;
  batch.members.resize(k);
  for (auto& m : batch.members) {
    std::size_t prev = ToyPolicy::kBos;
    m.tokens.reserve(len);
    for (std::size_t i = 0; i < len; ++i) {
      const auto& c = cdf[prev];
      const double u = rng.uniform() * c.back();
      auto it = std::upper_bound(c.begin(), c.end(), u);
      std::size_t t = static_cast<std::size_t>(it - c.begin());
      if (t >= c.size()) t = c.size() - 1;
      m.tokens.push_back(t);
      prev = t;
    }
    m.logp = policy.sequence_log_prob(m.tokens);
    m.logp_old = m.logp;
  }
  return batch;
}

// Stable rank of the embedded sequence.
inline double reward_of_sequence(const Sequence& tokens, const ReferenceEmbedder& e) {
  return stable_rank(e.embed(tokens));
}

// Rewards are stable ranks from power iteration, accurate to roughly the
// iteration tolerance. A group whose spread is below this is constant.
inline constexpr double kRewardTieTolerance = 1e-9;

// (r_k - mean) / (std + eps) with the population standard deviation; all
// zeros when the rewards agree to within kRewardTieTolerance.
inline std::vector<double> group_advantages(std::span<const double> rewards, double eps) {
  if (rewards.size() < 2) throw ArgumentError("group advantages need K >= 2");
  const double k = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= k;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / k);
  std::vector<double> out;
  out.reserve(rewards.size());
  if (sd <= kRewardTieTolerance * std::max(1.0, std::abs(mean))) {
    out.assign(rewards.size(), 0.0);
    return out;
  }
  for (double r : rewards) out.push_back((r - mean) / (sd + eps));
  return out;
}

inline double categorical_kl(std::span<const double> logp, std::span<const double> logq) {
  double kl = 0.0;
  for (std::size_t j = 0; j < logp.size(); ++j) {
    kl += std::exp(logp[j]) * (logp[j] - logq[j]);
  }
  return kl;
}

// Sum over visited positions of KL(policy(.|prev) || reference(.|prev)).
inline double kl_per_sequence(const ToyPolicy& policy, const ToyPolicy& reference,
                              const Sequence& tokens) {
  if (policy.vocab() != reference.vocab()) throw ArgumentError("vocab mismatch");
  double kl = 0.0;
  std::size_t prev = ToyPolicy::kBos;
  for (std::size_t t : tokens) {
    kl += categorical_kl(policy.log_probs(prev), reference.log_probs(prev));
    prev = t;
  }
  return kl;
}

// exp(logp - logp_old); gaps beyond 700 nats are refused.
inline double importance_ratio(const Member& m, std::size_t index) {
  const double gap = m.logp - m.logp_old;
  if (!(std::abs(gap) <= 700.0)) {
    throw NumericGuardError("importance ratio overflow for sequence " +
                            std::to_string(index));
  }
  return std::exp(gap);
}

// Refreshes logp (and logp_ref) of every member under the given policies.
inline void rescore(GroupBatch& batch, const ToyPolicy& policy, const ToyPolicy& reference) {
  for (auto& m : batch.members) {
    m.logp = policy.sequence_log_prob(m.tokens);
    m.logp_ref = reference.sequence_log_prob(m.tokens);
  }
}

// (1/K) sum rho_k A_k - beta (1/K) sum_k KL_k, evaluated at `policy`.
inline double objective(const GroupBatch& batch, const ToyPolicy& policy,
                        const ToyPolicy& reference, double beta) {
  const double k = static_cast<double>(batch.members.size());
  double surrogate = 0.0, kl = 0.0;
  for (std::size_t i = 0; i < batch.members.size(); ++i) {
    Member m = batch.members[i];
    m.logp = policy.sequence_log_prob(m.tokens);
    surrogate += importance_ratio(m, i) * m.advantage;
    kl += kl_per_sequence(policy, reference, m.tokens);
  }
  return surrogate / k - beta * kl / k;
}

// Analytic d objective / d theta at `policy`, V x V row-major.
inline std::vector<double> objective_gradient(const GroupBatch& batch,
                                              const ToyPolicy& policy,
                                              const ToyPolicy& reference, double beta) {
  const std::size_t v = policy.vocab();
  const double k = static_cast<double>(batch.members.size());
  std::vector<double> grad(v * v, 0.0);
  std::vector<std::vector<double>> lp(v), lq(v);
  std::vector<double> row_kl(v);
  for (std::size_t a = 0; a < v; ++a) {
    lp[a] = policy.log_probs(a);
    lq[a] = reference.log_probs(a);
    row_kl[a] = categorical_kl(lp[a], lq[a]);
  }
  for (std::size_t i = 0; i < batch.members.size(); ++i) {
    Member m = batch.members[i];
    m.logp = policy.sequence_log_prob(m.tokens);
    const double w = importance_ratio(m, i) * m.advantage / k;
    std::size_t prev = ToyPolicy::kBos;
    for (std::size_t t : m.tokens) {
      double* g = grad.data() + prev * v;
      // d log pi(t | prev) / d theta[prev][c] = [c == t] - pi(c | prev)
      for (std::size_t c = 0; c < v; ++c) {
        const double p = std::exp(lp[prev][c]);
        g[c] += w * ((c == t ? 1.0 : 0.0) - p);
        // d KL / d theta[prev][c] = p_c (log p_c - log q_c - KL)
        g[c] -= beta / k * p * (lp[prev][c] - lq[prev][c] - row_kl[prev]);
      }
      prev = t;
    }
  }
  return grad;
}

struct StepStats {
  std::size_t step = 0;
  double mean_reward = 0.0;
  double std_reward = 0.0;
  double mean_abs_adv = 0.0;
  double kl = 0.0;
  double objective = 0.0;
};

// Samples and scores one group from `policy` (which is also the snapshot).
inline GroupBatch build_group(const ToyPolicy& policy, const ReferenceEmbedder& embedder,
                              const ToyPolicy& reference, const TrainConfig& cfg,
                              std::uint64_t seed) {
  GroupBatch batch = sample_group(policy, cfg.group_size, cfg.seq_len, seed);
  std::vector<double> rewards;
  for (auto& m : batch.members) {
    m.reward = reward_of_sequence(m.tokens, embedder);
    m.logp_ref = reference.sequence_log_prob(m.tokens);
    rewards.push_back(m.reward);
  }
  const auto adv = group_advantages(rewards, cfg.eps);
  for (std::size_t i = 0; i < adv.size(); ++i) batch.members[i].advantage = adv[i];
  return batch;
}

// One gradient-ascent step. Statistics describe the pre-update policy.
inline StepStats train_step(ToyPolicy& policy, const ReferenceEmbedder& embedder,
                            const ToyPolicy& reference, const TrainConfig& cfg,
                            std::uint64_t step_seed, std::size_t step_index = 0) {
  embedder.verify();
  if (embedder.vocab() != policy.vocab()) throw ArgumentError("embedder/policy vocab mismatch");
  const GroupBatch batch = build_group(policy, embedder, reference, cfg, step_seed);

  StepStats s;
  s.step = step_index;
  const double k = static_cast<double>(batch.members.size());
  for (const auto& m : batch.members) {
    s.mean_reward += m.reward / k;
    s.mean_abs_adv += std::abs(m.advantage) / k;
    s.kl += kl_per_sequence(policy, reference, m.tokens) / k;
  }
  for (const auto& m : batch.members) {
    s.std_reward += (m.reward - s.mean_reward) * (m.reward - s.mean_reward) / k;
  }
  s.std_reward = std::sqrt(s.std_reward);
  s.objective = objective(batch, policy, reference, cfg.beta);

  const auto grad = objective_gradient(batch, policy, reference, cfg.beta);
  auto theta = policy.theta_mut();
  for (std::size_t j = 0; j < theta.size(); ++j) theta[j] += cfg.learning_rate * grad[j];
  return s;
}

struct TrainingLog {
  std::vector<StepStats> steps;
  ToyPolicy final_policy;
};

// Uniform initial policy, which is also the frozen reference policy.
inline TrainingLog run_training(const TrainConfig& cfg, const ReferenceEmbedder& embedder) {
  cfg.validate();
  const ToyPolicy reference(embedder.vocab(), cfg.seq_len);
  ToyPolicy policy = reference;
  TrainingLog log{{}, policy};
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    log.steps.push_back(
        train_step(policy, embedder, reference, cfg, derive_seed(cfg.seed, step), step));
  }
  log.final_policy = policy;
  return log;
}

// Mean over all V rows of KL(policy(.|a) || reference(.|a)).
inline double mean_row_kl(const ToyPolicy& policy, const ToyPolicy& reference) {
  double kl = 0.0;
  for (std::size_t a = 0; a < policy.vocab(); ++a) {
    kl += categorical_kl(policy.log_probs(a), reference.log_probs(a));
  }
  return kl / static_cast<double>(policy.vocab());
}

// Monte Carlo mean reward of `samples` sequences drawn from `policy`.
inline double mean_sampled_reward(const ToyPolicy& policy, const ReferenceEmbedder& e,
                                  std::size_t samples, std::uint64_t seed) {
  const auto batch = sample_group(policy, samples, policy.seq_len(), seed);
  double total = 0.0;
  for (const auto& m : batch.members) total += reward_of_sequence(m.tokens, e);
  return total / static_cast<double>(samples);
}

}  // namespace srank::grpo
