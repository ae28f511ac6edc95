#include <gtest/gtest.h>

#include <zlib.h>

#include <cmath>
#include <random>
#include <sstream>

#include "srank/correlation.hpp"
#include "srank/stats.hpp"
#include "srank/text_metrics.hpp"
#include "support.hpp"

using namespace srank;
using namespace srank::text;

namespace {

// Textbook formula, computed without shared helpers.
double brute_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / n, my = sy / n;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx) / std::sqrt(syy);
}

// Rank = 1 + #smaller + (#equal - 1) / 2.
std::vector<double> brute_ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double less = 0, eq = 0;
    for (double v : x) {
      less += v < x[i];
      eq += v == x[i];
    }
    r[i] = 1 + less + (eq - 1) / 2;
  }
  return r;
}

}  // namespace

TEST(Stats, PearsonAndSpearmanMatchDefinitions) {
  std::mt19937_64 gen(1);
  std::normal_distribution<double> nd;
  std::uniform_int_distribution<int> small(0, 5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 3 + trial;
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = nd(gen);
      y[i] = trial % 2 ? small(gen) : 0.5 * x[i] + nd(gen);  // ties on odd trials
    }
    y[0] += 1.0;
    EXPECT_NEAR(*stats::pearson(x, y), brute_pearson(x, y), 1e-12);
    EXPECT_NEAR(*stats::spearman(x, y), brute_pearson(brute_ranks(x), brute_ranks(y)), 1e-12);
  }
}

TEST(Stats, EdgeCases) {
  const std::vector<double> c = {1, 1, 1, 1};
  const std::vector<double> v = {1, 2, 3, 4};
  EXPECT_FALSE(stats::pearson(c, v).has_value());
  EXPECT_FALSE(stats::spearman(v, c).has_value());
  EXPECT_THROW(stats::pearson(std::vector<double>{1, 2}, std::vector<double>{1, 2}), ArgumentError);
  EXPECT_THROW(stats::pearson(v, std::vector<double>{1, 2, 3}), ArgumentError);
  EXPECT_THROW(stats::pearson(v, std::vector<double>{1, 2, NAN, 4}), InputDomainError);
  EXPECT_DOUBLE_EQ(*stats::pearson(v, v), 1.0);
  EXPECT_EQ(stats::average_ranks(std::vector<double>{3, 1, 3, 2}),
            (std::vector<double>{3.5, 1, 3.5, 2}));
}

TEST(Stats, PermutationPValue) {
  std::mt19937_64 gen(2);
  std::normal_distribution<double> nd;
  std::vector<double> x(40), y(40), z(40);
  for (std::size_t i = 0; i < 40; ++i) {
    x[i] = nd(gen);
    y[i] = x[i] + 0.1 * nd(gen);
    z[i] = nd(gen);
  }
  const auto strong = *stats::permutation_pvalue(x, y, stats::Statistic::pearson, 1, 2000);
  EXPECT_DOUBLE_EQ(strong, 1.0 / 2001.0);
  const auto null = *stats::permutation_pvalue(x, z, stats::Statistic::spearman, 1, 2000);
  EXPECT_GT(null, 0.01);
  EXPECT_EQ(null, *stats::permutation_pvalue(x, z, stats::Statistic::spearman, 1, 2000));
  EXPECT_THROW(stats::permutation_pvalue(x, z, stats::Statistic::pearson, 1, 0), ArgumentError);
}

TEST(Stats, PermutationPValueIsCalibratedUnderTheNull) {
  // Under independence, P(p <= 0.1) should be close to 0.1.
  std::mt19937_64 gen(3);
  std::normal_distribution<double> nd;
  int hits = 0;
  for (int t = 0; t < 300; ++t) {
    std::vector<double> x(15), y(15);
    for (std::size_t i = 0; i < 15; ++i) {
      x[i] = nd(gen);
      y[i] = nd(gen);
    }
    hits += *stats::permutation_pvalue(x, y, stats::Statistic::pearson, t, 199) <= 0.1;
  }
  EXPECT_NEAR(hits / 300.0, 0.1, 0.06);
}

TEST(TextMetrics, SentenceSplitting) {
  EXPECT_EQ(split_sentences("Hello there. How are you? Fine!").size(), 3u);
  EXPECT_EQ(split_sentences("Dr. Smith arrived. He sat.").size(), 2u);
  EXPECT_EQ(split_sentences("Version 2.5 is out. it works.").size(), 1u);
  EXPECT_TRUE(split_sentences("   ").empty());
}

TEST(TextMetrics, DensityValues) {
  const auto toks = whitespace_tokens("a b a c a b");
  EXPECT_DOUBLE_EQ(type_token_ratio(toks), 0.5);
  EXPECT_DOUBLE_EQ(*ngram_diversity(toks, 2), 4.0 / 5.0);  // ab ba ac ca ab
  EXPECT_FALSE(ngram_diversity(toks, 7).has_value());
  EXPECT_DOUBLE_EQ(moving_average_ttr(toks, 3), (2.0 / 3 + 1.0 + 2.0 / 3 + 1.0) / 4.0);
  EXPECT_DOUBLE_EQ(moving_average_ttr(toks), 0.5);
  EXPECT_DOUBLE_EQ(repetition_rate(whitespace_tokens("x y x y x y"), 2), 1.0);
  EXPECT_DOUBLE_EQ(repetition_rate(whitespace_tokens("a b c d"), 2), 0.0);
  EXPECT_DOUBLE_EQ(text_entropy("aabb"), 1.0);
  EXPECT_DOUBLE_EQ(text_entropy("\xc3\xa9\xc3\xa9"), 0.0);  // one code point twice
  EXPECT_EQ(code_points("\xc3\xa9x").size(), 2u);
}

TEST(TextMetrics, CompressionMatchesZlib) {
  const std::string s = "the quick brown fox jumps over the lazy dog the quick brown fox";
  uLongf len = compressBound(s.size());
  std::vector<Bytef> buf(len);
  ASSERT_EQ(compress2(buf.data(), &len, reinterpret_cast<const Bytef*>(s.data()), s.size(), 6), Z_OK);
  EXPECT_DOUBLE_EQ(*compression_ratio(s), static_cast<double>(len) / s.size());
  EXPECT_FALSE(compression_ratio("").has_value());
}

TEST(TextMetrics, MarkerCounts) {
  const std::string t = "However, because it rained, we stayed. But IF it clears, then we go. Therefore fine.";
  const auto m = marker_counts(t, default_taxonomy());
  EXPECT_EQ(*m.get("markers_causal_raw"), 2.0);       // because, therefore
  EXPECT_EQ(*m.get("markers_conditional_raw"), 1.0);  // if
  EXPECT_EQ(*m.get("markers_contrastive_raw"), 2.0);  // however, but
  EXPECT_EQ(*m.get("markers_temporal_raw"), 1.0);     // then
  EXPECT_EQ(*m.get("markers_logical_total_raw"), 3.0);
  EXPECT_DOUBLE_EQ(*m.get("markers_causal_per_sent"), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(*m.get("markers_causal_per_100_tokens"), 2.0 / 15.0 * 100.0);
  EXPECT_EQ(count_substring("aaaa", "aa"), 2u);
}

TEST(TextMetrics, StructureMetrics) {
  const auto m = structure_metrics("# Title\nThis is simple. Another beautiful sentence here.\n```x```");
  EXPECT_EQ(*m.get("has_headers"), 1.0);
  EXPECT_EQ(*m.get("sentence_count"), 2.0);
  EXPECT_EQ(syllable_count("beautiful"), 3u);
  EXPECT_EQ(syllable_count("make"), 1u);
  EXPECT_EQ(syllable_count("the"), 1u);
  EXPECT_EQ(syllable_count("42"), 0u);
  const auto e = structure_metrics("");
  EXPECT_FALSE(e.get("avg_sentence_length").has_value());
  EXPECT_EQ(e.find("avg_sentence_length")->reason, "no sentences");
}

TEST(TextMetrics, CoherenceOnKnownGeometry) {
  // e0, e1, e0: adjacent cosines 0, 0; nonadjacent 1.
  const auto v = HiddenMatrix::from_rows({{1, 0}, {0, 1}, {1, 0}});
  const auto m = coherence_metrics({v, std::vector<double>{1, 0}});
  EXPECT_DOUBLE_EQ(*m.get("coherence_mean"), 0.0);
  EXPECT_DOUBLE_EQ(*m.get("avg_nonadjacent_similarity"), 1.0);
  EXPECT_DOUBLE_EQ(*m.get("progression_score"), -1.0);
  EXPECT_DOUBLE_EQ(*m.get("semantic_density"), (1.0 + 0.0 + 1.0) / 3.0);
  EXPECT_DOUBLE_EQ(*m.get("qa_alignment_max"), 1.0);
  EXPECT_DOUBLE_EQ(*m.get("qa_alignment_min"), 0.0);
  const auto one = coherence_metrics({HiddenMatrix::from_rows({{1, 0}}), std::nullopt});
  EXPECT_EQ(one.find("coherence_mean")->reason, "n<2 sentences");
  EXPECT_EQ(one.find("qa_alignment_mean")->reason, "no prompt embedding");
  EXPECT_THROW(coherence_metrics({HiddenMatrix::from_rows({{2, 0}}), std::nullopt}), ArgumentError);
}

TEST(TextMetrics, ShippedTaxonomyMatchesDefault) {
  const auto t = load_taxonomy(std::filesystem::path(SRANK_DATA_DIR) / "taxonomy_default.json");
  EXPECT_EQ(t, default_taxonomy());
  EXPECT_EQ(parse_taxonomy(taxonomy_json(t)), t);
}

TEST(Correlation, PairedDifferencesAreAntisymmetric) {
  auto corpus = srank::testing::planted_text_corpus(60, 4);
  const AnalysisOptions opt{9, 200};
  const auto a = paired_difference_analysis(pair_responses(corpus), opt);
  for (auto& r : corpus) {
    r.role = r.role == ResponseRole::chosen ? ResponseRole::rejected : ResponseRole::chosen;
  }
  const auto b = paired_difference_analysis(pair_responses(corpus), opt);
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].pearson, b.rows[i].pearson) << a.rows[i].metric;
    EXPECT_EQ(a.rows[i].spearman, b.rows[i].spearman) << a.rows[i].metric;
    EXPECT_EQ(a.rows[i].p_pearson, b.rows[i].p_pearson) << a.rows[i].metric;
  }
}

TEST(Correlation, PlantedSigns) {
  const auto corpus = srank::testing::planted_text_corpus(100, 5);
  const auto rep = sample_level_analysis(corpus, {1, 500});
  EXPECT_LT(*rep.find("sentence_count")->pearson, -0.3);
  EXPECT_GT(*rep.find("progression_score")->pearson, 0.3);
  EXPECT_EQ(rep.find("sentence_count")->n, 200u);
}

TEST(Correlation, CorpusParsingAndScoring) {
  const auto dir = srank::testing::temp_dir("corpus");
  io::save_matrix(dir / "e.npy", HiddenMatrix::from_rows({{1, 0}, {0, 1}}));
  std::istringstream in(
      R"({"id":"a","role":"chosen","text":"One here. Two there.","stable_rank":3.5,"perplexity":7.0,"embedding_path":"e.npy"})"
      "\n"
      R"({"id":"a","role":"rejected","text":"Only one.","stable_rank":2.0})"
      "\n");
  const auto corpus = parse_corpus(in, dir);
  ASSERT_EQ(corpus.size(), 2u);
  const auto s = score_response(corpus[0], default_taxonomy());
  EXPECT_EQ(*s.metrics.get("perplexity"), 7.0);
  EXPECT_DOUBLE_EQ(*s.metrics.get("coherence_mean"), 0.0);
  EXPECT_THROW(score_response({"b", ResponseRole::single, "Just one sentence.", 1.0, {}, {},
                               dir / "e.npy", {}},
                              default_taxonomy()),
               ArgumentError);
  std::istringstream bad(R"({"id":"a","role":"chosen","text":"x"})");
  EXPECT_THROW(parse_corpus(bad, dir), io::ManifestError);
}

TEST(Correlation, SerialisationIsDeterministic) {
  const auto corpus = srank::testing::planted_text_corpus(20, 6);
  const AnalysisOptions opt{3, 100};
  const auto csv1 = correlation_csv({sample_level_analysis(corpus, opt)});
  const auto csv2 = correlation_csv({sample_level_analysis(corpus, opt)});
  EXPECT_EQ(csv1, csv2);
  EXPECT_EQ(csv1.substr(0, csv1.find('\n')), "metric,analysis,pearson,spearman,p,n");
}
