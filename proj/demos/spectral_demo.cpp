// Scores a collapsed and a spread-out hidden-state matrix and prints the
// spectral summary of each.

#include <cmath>
#include <cstdio>
#include <vector>

#include "srank/rng.hpp"
#include "srank/spectral.hpp"

namespace {

srank::HiddenMatrix gaussian(std::size_t t, std::size_t d, std::uint64_t seed) {
  srank::SplitMix64 rng(seed);
  std::vector<double> v(t * d);
  for (auto& x : v) x = rng.normal();
  return {t, d, std::move(v)};
}

// Every row is a noisy copy of one direction.
srank::HiddenMatrix collapsed(std::size_t t, std::size_t d, std::uint64_t seed) {
  srank::SplitMix64 rng(seed);
  std::vector<double> dir(d);
  for (auto& x : dir) x = rng.normal();
  std::vector<double> v(t * d);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < d; ++j) v[i * d + j] = dir[j] + 0.05 * rng.normal();
  }
  return {t, d, std::move(v)};
}

void report(const char* name, const srank::HiddenMatrix& h) {
  const auto s = srank::spectral_summary(h);
  std::printf("%-10s T=%zu d=%zu  stable_rank=%.4f  effective_rank=%.4f  condition=%.4g  pca_k95=%zu\n",
              name, h.rows(), h.cols(), s.stable_rank, s.effective_rank, s.condition_score,
              s.pca_k95);
}

}  // namespace

int main() {
  report("collapsed", collapsed(256, 64, 1));
  report("gaussian", gaussian(256, 64, 2));
}
