// srank: command-line front end for the stable-rank toolkit.

#include <csignal>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <pthread.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "srank/correlation.hpp"
#include "srank/grpo.hpp"
#include "srank/hidden_io.hpp"
#include "srank/npy.hpp"
#include "srank/pipeline.hpp"
#include "srank/reward_eval.hpp"
#include "srank/server.hpp"
#include "srank/spectral.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kUsageError = 2;
constexpr int kRuntimeError = 1;

struct Options {
  std::string matrix;
  std::string mask;
  std::string manifest;
  std::string metric = "stable_rank";
  std::vector<std::size_t> max_tokens;
  std::vector<std::size_t> ns = {1, 4, 8, 16};
  std::uint64_t seed = 0;
  std::size_t random_draws = 16;
  std::size_t steps = 500;
  std::size_t group_size = 8;
  double beta = 0.04;
  double eps = 1e-8;
  double lr = 2.0;
  std::size_t vocab = 16;
  std::size_t seq_len = 8;
  std::string corpus;
  std::string taxonomy;
  std::size_t perms = 10000;
  std::string out;
  std::size_t jobs = srank::pipeline::default_jobs();
  std::string host = "127.0.0.1";
  int port = 8080;
  std::vector<std::string> allow_roots;
  std::size_t max_inline_bytes = std::size_t{64} << 20;
};

srank::Metric metric_or_throw(const std::string& name) {
  auto m = srank::parse_metric(name);
  if (!m) throw CLI::ValidationError("--metric", "unknown metric " + name);
  return *m;
}

std::optional<std::size_t> single_max_tokens(const Options& o) {
  if (o.max_tokens.empty()) return std::nullopt;
  if (o.max_tokens.size() > 1) throw srank::ArgumentError("--max-tokens takes one value here");
  if (o.max_tokens[0] == 0) throw srank::ArgumentError("--max-tokens must be >= 1");
  return o.max_tokens[0];
}

bool wants_json(const std::string& path) { return fs::path(path).extension() == ".json"; }

// Table output: --out path (atomic) or stdout.
void emit(const Options& o, const std::string& csv, const nlohmann::ordered_json& json) {
  if (o.out.empty()) {
    std::cout << csv;
    return;
  }
  const std::string text = wants_json(o.out) ? json.dump(2) + "\n" : csv;
  srank::io::write_file_atomic(o.out, text);
}

int run_score(const Options& o) {
  auto h = srank::io::load_matrix(o.matrix);
  if (!o.mask.empty()) h = srank::io::apply_mask(h, srank::io::load_mask(o.mask));
  if (auto mt = single_max_tokens(o)) h = srank::io::truncate(h, *mt);
  const auto s = srank::spectral_summary(h);
  nlohmann::ordered_json j = {{"stable_rank", s.stable_rank},
                              {"effective_rank", s.effective_rank},
                              {"condition_score", s.condition_score},
                              {"pca_k95", s.pca_k95},
                              {"sigma_max", s.sigma_max},
                              {"t_used", h.rows()}};
  std::cout << j.dump() << "\n";
  return 0;
}

int run_compare(const Options& o) {
  const auto metric = metric_or_throw(o.metric);
  const auto recs = srank::io::load_manifest(o.manifest);
  const auto rep = srank::pipeline::compare(recs, metric, single_max_tokens(o), o.jobs);
  for (const auto& id : rep.unevaluable) {
    std::cerr << "warning: pair \"" << id << "\" is degenerate and was excluded\n";
  }
  emit(o, srank::eval::accuracy_csv(rep), srank::eval::accuracy_json(rep));
  return 0;
}

int run_bon(const Options& o) {
  const auto metric = metric_or_throw(o.metric);
  const auto recs = srank::io::load_manifest(o.manifest);
  const auto sets = srank::eval::group_candidates(recs);
  if (sets.empty()) throw srank::ArgumentError("manifest has no candidate records");
  if (o.random_draws == 0) throw srank::ArgumentError("--random-draws must be >= 1");
  const auto scored =
      srank::pipeline::score_candidate_sets(sets, metric, single_max_tokens(o), o.jobs);
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < o.random_draws; ++i) seeds.push_back(srank::derive_seed(o.seed, i));
  const auto rep = srank::eval::bon_report_scored(scored, o.ns, seeds, metric);
  emit(o, srank::eval::bon_csv(rep), srank::eval::bon_json(rep));
  return 0;
}

nlohmann::ordered_json step_json(const srank::grpo::StepStats& s) {
  return {{"step", s.step},
          {"mean_reward", s.mean_reward},
          {"std_reward", s.std_reward},
          {"mean_abs_adv", s.mean_abs_adv},
          {"kl", s.kl},
          {"objective", s.objective}};
}

int run_grpo(const Options& o) {
  srank::grpo::TrainConfig cfg;
  cfg.group_size = o.group_size;
  cfg.beta = o.beta;
  cfg.eps = o.eps;
  cfg.learning_rate = o.lr;
  cfg.steps = o.steps;
  cfg.seq_len = o.seq_len;
  cfg.seed = o.seed;
  if (o.vocab < 1) throw srank::ArgumentError("--vocab must be >= 1");
  const auto embedder = srank::grpo::ReferenceEmbedder::orthonormal(o.vocab);
  const auto log = srank::grpo::run_training(cfg, embedder);
  std::string lines;
  for (const auto& s : log.steps) lines += step_json(s).dump() + "\n";
  if (o.out.empty()) {
    std::cout << lines;
    return 0;
  }
  fs::create_directories(o.out);
  const auto& p = log.final_policy;
  srank::HiddenMatrix theta(p.vocab(), p.vocab(), {p.theta().begin(), p.theta().end()});
  const auto policy_bytes = srank::io::encode_matrix(theta, srank::io::DType::f64);
  srank::io::write_file_atomic(fs::path(o.out) / "train_log.jsonl", lines);
  srank::io::write_file_atomic(fs::path(o.out) / "policy.npy", policy_bytes);
  return 0;
}

int run_metrics(const Options& o) {
  const auto taxonomy = o.taxonomy.empty() ? srank::text::default_taxonomy()
                                           : srank::text::load_taxonomy(o.taxonomy);
  const auto corpus = srank::text::load_corpus(o.corpus);
  std::vector<srank::text::ScoredResponse> scored(corpus.size());
  srank::pipeline::parallel_for(corpus.size(), o.jobs, [&](std::size_t i) {
    scored[i] = srank::text::score_response(corpus[i], taxonomy);
  });
  srank::text::AnalysisOptions opt{o.seed, o.perms};
  std::vector<srank::text::CorrelationReport> reports;
  reports.push_back(srank::text::sample_level_analysis(scored, opt));
  const auto pairs = srank::text::pair_responses(scored);
  if (!pairs.empty()) reports.push_back(srank::text::paired_difference_analysis(pairs, opt));

  const std::string csv = srank::text::correlation_csv(reports);
  if (o.out.empty()) {
    std::cout << csv;
    return 0;
  }
  std::string vectors;
  for (const auto& s : scored) vectors += srank::text::metric_vector_json(s).dump() + "\n";
  const std::string json = srank::text::correlation_json(reports).dump(2) + "\n";
  fs::create_directories(o.out);
  srank::io::write_file_atomic(fs::path(o.out) / "metrics.jsonl", vectors);
  srank::io::write_file_atomic(fs::path(o.out) / "correlations.csv", csv);
  srank::io::write_file_atomic(fs::path(o.out) / "correlations.json", json);
  return 0;
}

int run_sweep(const Options& o) {
  const auto metric = metric_or_throw(o.metric);
  auto grid = o.max_tokens;
  if (grid.empty()) grid = {128, 512, 1024, 2048, 4096};
  for (auto g : grid) {
    if (g == 0) throw srank::ArgumentError("--max-tokens entries must be >= 1");
  }
  const auto recs = srank::io::load_manifest(o.manifest);
  const auto results = srank::pipeline::sweep_length(recs, metric, grid, o.jobs);
  std::ostringstream csv;
  csv << "max_tokens,category,metric,correct,total,ties,accuracy\n";
  nlohmann::ordered_json json = nlohmann::ordered_json::array();
  for (const auto& [mt, rep] : results) {
    std::istringstream rows(srank::eval::accuracy_csv(rep));
    std::string line;
    std::getline(rows, line);  // header
    while (std::getline(rows, line)) csv << mt << ',' << line << '\n';
    auto j = srank::eval::accuracy_json(rep);
    json.push_back({{"max_tokens", mt}, {"report", j}});
  }
  emit(o, csv.str(), json);
  return 0;
}

int run_serve(const Options& o) {
  srank::server::ServerConfig cfg;
  cfg.host = o.host;
  cfg.port = o.port;
  for (const auto& r : o.allow_roots) cfg.allow_roots.emplace_back(r);
  cfg.max_inline_bytes = o.max_inline_bytes;
  cfg.threads = o.jobs;

  // Block SIGINT/SIGTERM in every thread and wait for them on a dedicated one.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  srank::server::RewardServer server(cfg);
  const int port = server.bind();
  std::cerr << "srank serve: listening on " << cfg.host << ":" << port << "\n";
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
  });
  const bool ok = server.run();
  // run() can also return on its own; wake the waiter in that case.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return ok ? 0 : kRuntimeError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stable-rank scoring, evaluation and training toolkit"};
  app.require_subcommand(1);
  Options o;

  auto add_metric = [&](CLI::App* c) {
    c->add_option("--metric", o.metric,
                  "stable_rank | effective_rank | condition_score | pca_k95")
        ->envname("SRANK_METRIC")
        ->check(CLI::IsMember({"stable_rank", "effective_rank", "condition_score", "pca_k95"}));
  };
  auto add_jobs = [&](CLI::App* c) {
    c->add_option("--jobs", o.jobs, "worker threads")->envname("SRANK_JOBS")->check(
        CLI::PositiveNumber);
  };
  auto add_out = [&](CLI::App* c, const std::string& what) {
    c->add_option("--out", o.out, what)->envname("SRANK_OUT");
  };
  auto add_max_tokens = [&](CLI::App* c) {
    c->add_option("--max-tokens", o.max_tokens, "keep at most this many rows")
        ->envname("SRANK_MAX_TOKENS")
        ->delimiter(',')
        ->check(CLI::PositiveNumber);
  };
  auto add_seed = [&](CLI::App* c) {
    c->add_option("--seed", o.seed, "seed for every random draw")->envname("SRANK_SEED");
  };

  auto* score = app.add_subcommand("score", "spectral summary of one matrix as JSON");
  score->add_option("--matrix", o.matrix, "NPY matrix (T x d)")->required()->envname(
      "SRANK_MATRIX");
  score->add_option("--mask", o.mask, "NPY |b1 token mask")->envname("SRANK_MASK");
  add_max_tokens(score);

  auto* compare = app.add_subcommand("compare", "pairwise preference accuracy");
  compare->add_option("--manifest", o.manifest, "JSONL manifest")->required()->envname(
      "SRANK_MANIFEST");
  add_metric(compare);
  add_max_tokens(compare);
  add_out(compare, "output file (.json for JSON, otherwise CSV)");
  add_jobs(compare);

  auto* bon = app.add_subcommand("bon", "Best-of-N selection report");
  bon->add_option("--manifest", o.manifest, "JSONL manifest with candidates")->required()->envname(
      "SRANK_MANIFEST");
  add_metric(bon);
  add_max_tokens(bon);
  bon->add_option("--n", o.ns, "candidate counts")->envname("SRANK_N")->delimiter(',');
  add_seed(bon);
  bon->add_option("--random-draws", o.random_draws, "seeds averaged for random selection")
      ->envname("SRANK_RANDOM_DRAWS");
  add_out(bon, "output file (.json for JSON, otherwise CSV)");
  add_jobs(bon);

  auto* grpo = app.add_subcommand("grpo-toy", "stable-rank GRPO on a bigram toy policy");
  add_seed(grpo);
  grpo->add_option("--steps", o.steps, "training steps")->envname("SRANK_STEPS");
  grpo->add_option("--group-size", o.group_size, "samples per group (K)")->envname(
      "SRANK_GROUP_SIZE");
  grpo->add_option("--beta", o.beta, "KL coefficient")->envname("SRANK_BETA");
  grpo->add_option("--eps", o.eps, "advantage stabiliser")->envname("SRANK_EPS");
  grpo->add_option("--lr", o.lr, "learning rate")->envname("SRANK_LR");
  grpo->add_option("--vocab", o.vocab, "vocabulary size")->envname("SRANK_VOCAB");
  grpo->add_option("--seq-len", o.seq_len, "sampled sequence length")->envname("SRANK_SEQ_LEN");
  add_out(grpo, "output directory for train_log.jsonl and policy.npy");

  auto* metrics = app.add_subcommand("metrics", "text metrics and correlation reports");
  metrics->add_option("--corpus", o.corpus, "JSONL corpus")->required()->envname("SRANK_CORPUS");
  metrics->add_option("--taxonomy", o.taxonomy, "marker taxonomy JSON")->envname(
      "SRANK_TAXONOMY");
  metrics->add_option("--perms", o.perms, "permutations per p-value")->envname("SRANK_PERMS")
      ->check(CLI::PositiveNumber);
  add_seed(metrics);
  add_out(metrics, "output directory");
  add_jobs(metrics);

  auto* sweep = app.add_subcommand("sweep-length", "accuracy against truncation length");
  sweep->add_option("--manifest", o.manifest, "JSONL manifest")->required()->envname(
      "SRANK_MANIFEST");
  add_metric(sweep);
  add_max_tokens(sweep);
  add_out(sweep, "output file (.json for JSON, otherwise CSV)");
  add_jobs(sweep);

  auto* serve = app.add_subcommand("serve", "HTTP scoring service");
  serve->add_option("--host", o.host, "bind address")->envname("SRANK_HOST");
  serve->add_option("--port", o.port, "port (0 picks a free one)")->envname("SRANK_PORT");
  serve->add_option("--allow-root", o.allow_roots, "directory readable via matrix_path")
      ->envname("SRANK_ALLOW_ROOT")
      ->delimiter(',');
  serve->add_option("--max-inline-bytes", o.max_inline_bytes, "inline payload limit")
      ->envname("SRANK_MAX_INLINE_BYTES");
  add_jobs(serve);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kUsageError;
  }

  try {
    if (*score) return run_score(o);
    if (*compare) return run_compare(o);
    if (*bon) return run_bon(o);
    if (*grpo) return run_grpo(o);
    if (*metrics) return run_metrics(o);
    if (*sweep) return run_sweep(o);
    if (*serve) return run_serve(o);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kUsageError;
}
