#include <gtest/gtest.h>

#include "workspace.hpp"

#include "srank/npy.hpp"
#include "srank/server.hpp"
#include "srank/spectral.hpp"

using namespace srank;
using namespace srank::testing;
using nlohmann::json;

namespace {

const Workspace& ws() {
  static const Workspace w = make_workspace("cli");
  return w;
}

std::string q(const std::filesystem::path& p) { return quoted(p); }

}  // namespace

TEST(Cli, ScorePrintsSpectralSummary) {
  const auto r = run(cli() + " score --matrix " + q(ws().matrix));
  ASSERT_EQ(r.exit_code, 0);
  const auto j = json::parse(r.out);
  const auto h = io::load_matrix(ws().matrix);
  EXPECT_EQ(j["stable_rank"].get<double>(), stable_rank(h));
  EXPECT_EQ(j["t_used"], 12);
  EXPECT_EQ(j["pca_k95"].get<std::size_t>(), pca_k95(h));

  const auto masked = run(cli() + " score --matrix " + q(ws().matrix) + " --mask " +
                          q(ws().mask) + " --max-tokens 7");
  ASSERT_EQ(masked.exit_code, 0);
  const auto want = io::truncate(io::apply_mask(h, io::load_mask(ws().mask)), 7);
  EXPECT_EQ(json::parse(masked.out)["stable_rank"].get<double>(), stable_rank(want));
  EXPECT_EQ(json::parse(masked.out)["t_used"], 7);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run(cli() + " score").exit_code, 2);
  EXPECT_EQ(run(cli() + " frobnicate").exit_code, 2);
  EXPECT_EQ(run(cli() + " score --matrix " + q(ws().matrix) + " --max-tokens 0").exit_code, 2);
  EXPECT_EQ(run(cli() + " compare --manifest " + q(ws().pairs_manifest) + " --metric nuclear")
                .exit_code,
            2);
  EXPECT_EQ(run(cli() + " score --matrix /nonexistent/x.npy").exit_code, 1);
  EXPECT_EQ(run(cli() + " score --matrix " + q(ws().corpus)).exit_code, 1);
  EXPECT_EQ(run(cli() + " --help").exit_code, 0);
}

TEST(Cli, EnvironmentSuppliesOptions) {
  const auto a = run("SRANK_MATRIX=" + q(ws().matrix) + " " + cli() + " score");
  const auto b = run(cli() + " score --matrix " + q(ws().matrix));
  ASSERT_EQ(a.exit_code, 0);
  EXPECT_EQ(a.out, b.out);
}

TEST(Cli, CompareCsvAndJson) {
  const auto csv = run(cli() + " compare --manifest " + q(ws().pairs_manifest));
  ASSERT_EQ(csv.exit_code, 0);
  EXPECT_EQ(csv.out.rfind("category,metric,correct,total,ties,accuracy\n", 0), 0u);
  EXPECT_NE(csv.out.find("overall,stable_rank,"), std::string::npos);

  const auto out = ws().dir / "compare.json";
  ASSERT_EQ(run(cli() + " compare --manifest " + q(ws().pairs_manifest) +
                " --metric effective_rank --jobs 3 --out " + q(out))
                .exit_code,
            0);
  const auto j = json::parse(slurp(out));
  EXPECT_EQ(j.dump().find("effective_rank") != std::string::npos, true);
}

TEST(Cli, BonSweepMetricsAndGrpoRun) {
  const auto bon = run(cli() + " bon --manifest " + q(ws().bon_manifest) + " --n 1,4,16");
  ASSERT_EQ(bon.exit_code, 0);
  EXPECT_EQ(std::count(bon.out.begin(), bon.out.end(), '\n'), 4);

  const auto sweep = run(cli() + " sweep-length --manifest " + q(ws().long_manifest) +
                         " --max-tokens 16,64,600");
  ASSERT_EQ(sweep.exit_code, 0);
  EXPECT_EQ(sweep.out.rfind("max_tokens,", 0), 0u);

  const auto dir = ws().dir / "metrics_out";
  ASSERT_EQ(run(cli() + " metrics --corpus " + q(ws().corpus) + " --perms 200 --out " + q(dir))
                .exit_code,
            0);
  for (const char* f : {"metrics.jsonl", "correlations.csv", "correlations.json"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  std::istringstream lines(slurp(dir / "metrics.jsonl"));
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    const auto j = json::parse(line);
    EXPECT_TRUE(j.contains("id"));
    ++n;
  }
  EXPECT_EQ(n, 12u);

  const auto gdir = ws().dir / "grpo_out";
  ASSERT_EQ(run(cli() + " grpo-toy --steps 20 --seed 3 --out " + q(gdir)).exit_code, 0);
  const auto policy = io::load_matrix(gdir / "policy.npy");
  EXPECT_EQ(policy.rows(), 16u);
  std::istringstream log(slurp(gdir / "train_log.jsonl"));
  n = 0;
  while (std::getline(log, line)) {
    const auto j = json::parse(line);
    EXPECT_EQ(j["step"], n);
    ++n;
  }
  EXPECT_EQ(n, 20u);
}

// Every subcommand, run twice with the same seed, produces identical bytes.
TEST(Cli, OutputsAreDeterministic) {
  const std::vector<std::string> cmds = {
      " score --matrix " + q(ws().matrix),
      " compare --manifest " + q(ws().pairs_manifest) + " --jobs 4",
      " bon --manifest " + q(ws().bon_manifest) + " --seed 5",
      " sweep-length --manifest " + q(ws().long_manifest) + " --max-tokens 32,600",
      " metrics --corpus " + q(ws().corpus) + " --perms 300 --seed 2 --jobs 3",
      " grpo-toy --steps 15 --seed 8",
  };
  for (const auto& c : cmds) {
    const auto a = run(cli() + c);
    const auto b = run(cli() + c);
    ASSERT_EQ(a.exit_code, 0) << c;
    EXPECT_FALSE(a.out.empty()) << c;
    EXPECT_EQ(a.out, b.out) << c;
  }
}

TEST(Cli, ServeAnswersAndStopsOnSigterm) {
  const auto log = ws().dir / "serve.log";
  const auto server = launch_server("--allow-root " + q(ws().dir), log);
  const int port = server.port;
  ASSERT_NE(port, 0) << slurp(log);

  httplib::Client c("127.0.0.1", port);
  auto health = c.Get("/healthz");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  const json req = {{"id", "f"}, {"matrix_path", ws().matrix.string()}};
  auto a = c.Post("/v1/score", req.dump(), "application/json");
  auto b = c.Post("/v1/score", req.dump(), "application/json");
  ASSERT_TRUE(a && b);
  EXPECT_EQ(a->status, 200);
  // compute_ms is wall-clock time; everything else must match.
  auto ja = json::parse(a->body), jb = json::parse(b->body);
  ja.erase("compute_ms");
  jb.erase("compute_ms");
  EXPECT_EQ(ja, jb);
  EXPECT_EQ(json::parse(a->body)["value"].get<double>(),
            stable_rank(io::load_matrix(ws().matrix)));

  EXPECT_TRUE(terminate_server(server.pid));
}
