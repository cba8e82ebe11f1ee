#include "bdsde/cli.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

using namespace bdsde;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("bdsde_cli_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int line_of_error(const std::string& text) {
  try {
    cli::parse_config(text, "t.yaml");
  } catch (const cli::ConfigError& e) {
    return e.line();
  }
  return -1;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::istringstream in(cli::read_file(p));
  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> row;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) row.push_back(cell);
    rows.push_back(row);
  }
  return rows;
}

std::size_t column(const std::vector<std::string>& header, const std::string& name) {
  for (std::size_t j = 0; j < header.size(); ++j)
    if (header[j] == name) return j;
  ADD_FAILURE() << "no column " << name;
  return 0;
}

}  // namespace

TEST(Config, DefaultsAndScalarLists) {
  const auto c = cli::parse_config("command: solve\ngrid:\n  n_steps: 8\np: 1.5\n");
  EXPECT_EQ(c.command, "solve");
  EXPECT_EQ(c.n_steps, std::vector<std::size_t>{8});
  EXPECT_EQ(c.p, std::vector<double>{1.5});
  EXPECT_EQ(c.problem, "lipschitz_smooth");
  EXPECT_FALSE(c.gamma.has_value());
}

TEST(Config, ErrorsCarryLineNumbers) {
  EXPECT_EQ(line_of_error("command: solve\npaths: 64\nbogus: 1\n"), 3);
  EXPECT_EQ(line_of_error("command: solve\ngrid:\n  T: 1\n  nsteps: 4\n"), 4);
  EXPECT_EQ(line_of_error("paths: 64\np: [1.5, 2.5]\n"), 2);
  EXPECT_EQ(line_of_error("paths: 64\ngrid:\n  n_steps: [4, 1]\n"), 2);
  EXPECT_EQ(line_of_error("seed: 1\nproblem: nonexistent\n"), 2);
  EXPECT_EQ(line_of_error("seed: 1\nproblem:\n  name: linear_pricing\n  params: {zeta: 1}\n"), 2);
  EXPECT_EQ(line_of_error("seed: 1\n\npaths: many\n"), 3);
  EXPECT_GT(line_of_error("seed: [1,\n"), 0);
}

TEST(Config, EmptySweepListIsRejected) {
  EXPECT_THROW(cli::parse_config("grid:\n  n_steps: []\n"), cli::ConfigError);
  EXPECT_THROW(cli::parse_config("p: []\n"), cli::ConfigError);
  EXPECT_THROW(cli::parse_config("scales: []\n"), cli::ConfigError);
}

TEST(Config, CanonicalEmissionRoundTrips) {
  const auto c = cli::parse_config(
      "command: a-priori\nproblem:\n  name: linear_pricing\n  params: {r: 0.1, c: 0.2}\np: [1.25, 1.5]\n"
      "solver:\n  gamma: 3.5\n  tol: 1.0e-7\n");
  const auto text = cli::emit_config(c);
  const auto back = cli::parse_config(text);
  EXPECT_EQ(cli::emit_config(back), text);
  EXPECT_EQ(back.params, c.params);
  ASSERT_TRUE(back.gamma.has_value());
  EXPECT_EQ(*back.gamma, 3.5);
  EXPECT_EQ(back.tol, 1e-7);
}

TEST(Hash, Fnv1aReferenceValues) {
  EXPECT_EQ(cli::fnv1a(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(cli::fnv1a("a"), 0xaf63dc4c8601ec8cull);
  EXPECT_EQ(cli::hex64(0xabcull), "0000000000000abc");
}

TEST(Sweep, NStepsGivesOneRowPerValue) {
  const auto dir = scratch("nsteps");
  auto c = cli::parse_config(
      "command: solve-linear\nproblem:\n  name: linear_pricing\ngrid:\n  n_steps: [4, 8]\npaths: 64\n"
      "solver:\n  group_size: 8\n");
  c.output = dir.string();
  std::ostringstream log;
  const auto res = cli::run(c, log);
  EXPECT_EQ(res.exit_code, cli::kExitOk);
  const auto rows = read_csv(dir / "summary.csv");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1][column(rows[0], "n_steps")], "4");
  EXPECT_EQ(rows[2][column(rows[0], "n_steps")], "8");
  EXPECT_NE(rows[1][column(rows[0], "seed")], rows[2][column(rows[0], "seed")]);
}

TEST(Sweep, APrioriGivesOneRatioRowPerExponent) {
  const auto dir = scratch("apriori");
  auto c = cli::parse_config(
      "command: a-priori\nproblem:\n  name: monotone_cubic\n  xi_mode: smooth\ngrid:\n  n_steps: 8\n"
      "paths: 256\np: [1.25, 1.5, 1.75]\nsolver:\n  group_size: 32\n");
  c.output = dir.string();
  std::ostringstream log;
  EXPECT_EQ(cli::run(c, log).exit_code, cli::kExitOk);
  const auto rows = read_csv(dir / "summary.csv");
  ASSERT_EQ(rows.size(), 4u);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    EXPECT_EQ(rows[r][column(rows[0], "z_energy_status")], "ok");
    EXPECT_FALSE(rows[r][column(rows[0], "data_bound")].empty());
  }
}

TEST(Run, SolveLinearWithoutRatesKeepsTerminalValue) {
  const auto dir = scratch("constant");
  auto c = cli::parse_config(
      "command: solve-linear\nproblem:\n  name: linear_pricing\n  params: {r: 0, c: 0, xi: 1.75}\n"
      "grid:\n  n_steps: 8\npaths: 32\nsolver:\n  group_size: 8\nexport_paths: 32\n");
  c.output = dir.string();
  std::ostringstream log;
  ASSERT_EQ(cli::run(c, log).exit_code, cli::kExitOk);
  const auto sol = read_csv(dir / "solution_cell0.csv");
  const std::size_t y = column(sol[0], "Y1");
  ASSERT_EQ(sol.size(), 1u + 32u * 9u);
  for (std::size_t r = 1; r < sol.size(); ++r) EXPECT_NEAR(std::stod(sol[r][y]), 1.75, 1e-12);
  const auto exact = read_csv(dir / "exact_cell0.csv");
  for (std::size_t r = 1; r < exact.size(); ++r) EXPECT_EQ(exact[r][y], "1.75");
  const auto summary = read_csv(dir / "summary.csv");
  EXPECT_LE(std::stod(summary[1][column(summary[0], "rms_error")]), 1e-12);
}

TEST(Run, TanakaResidualDecreasesUnderRefinement) {
  const auto dir = scratch("tanaka");
  auto c = cli::parse_config(
      "command: verify-tanaka\ngrid:\n  n_steps: [32, 64, 128, 256, 512, 1024]\npaths: 1024\np: 2\n"
      "tanaka:\n  x0: 0\n");
  c.output = dir.string();
  std::ostringstream log;
  ASSERT_EQ(cli::run(c, log).exit_code, cli::kExitOk);
  const auto rows = read_csv(dir / "summary.csv");
  ASSERT_EQ(rows.size(), 7u);
  const std::size_t rms = column(rows[0], "residual_rms");
  for (std::size_t r = 2; r < rows.size(); ++r) EXPECT_LT(std::stod(rows[r][rms]), std::stod(rows[r - 1][rms]));
}

TEST(Run, CellFailureKeepsPartialArtifacts) {
  const auto dir = scratch("failure");
  auto c = cli::parse_config("command: solve-linear\nproblem: lipschitz_smooth\ngrid:\n  n_steps: 4\npaths: 32\n");
  c.output = dir.string();
  std::ostringstream log;
  const auto res = cli::run(c, log);
  EXPECT_EQ(res.exit_code, cli::kExitCellFailure);
  EXPECT_EQ(res.failed_cells, 1u);
  const auto rows = read_csv(dir / "summary.csv");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1][column(rows[0], "status")], "error");
  EXPECT_TRUE(fs::exists(dir / "manifest.yaml"));
}

TEST(Replay, ManifestListsEveryFileAndReproducesHashes) {
  const auto dir = scratch("replay");
  auto c = cli::parse_config(
      "command: picard-trace\nproblem:\n  name: lipschitz_smooth\n  xi_mode: smooth\ngrid:\n  n_steps: [4, 8]\n"
      "paths: 128\nsolver:\n  group_size: 32\n");
  c.output = (dir / "run").string();
  std::ostringstream log;
  set_worker_count(1);
  const auto res = cli::run(c, log);
  ASSERT_EQ(res.exit_code, cli::kExitOk);
  const YAML::Node m = YAML::LoadFile(res.manifest.string());
  std::size_t listed = 0;
  for (const auto& entry : fs::directory_iterator(dir / "run")) {
    if (entry.path().extension() != ".csv") continue;
    bool found = false;
    for (const auto& f : m["files"]) found |= f["path"].as<std::string>() == entry.path().filename().string();
    EXPECT_TRUE(found) << entry.path();
    ++listed;
  }
  EXPECT_EQ(listed, m["files"].size());
  EXPECT_EQ(m["config_hash"].as<std::string>(), cli::hex64(cli::fnv1a(m["config"].as<std::string>())));

  set_worker_count(4);
  const auto rr = cli::replay(res.manifest, dir / "again", log);
  set_worker_count(0);
  EXPECT_TRUE(rr.identical);
  EXPECT_TRUE(rr.mismatched.empty());
  EXPECT_THROW(cli::replay(res.manifest, dir / "run", log), cli::ConfigError);
}

TEST(Binary, ExitCodesAndReplayAcrossWorkerCounts) {
  const auto dir = scratch("binary");
  const std::string exe = BDSDE_CLI_PATH;
  const std::string cfg = std::string(BDSDE_CONFIG_DIR) + "/simulate.yaml";
  const std::string run_cmd = "BDSDE_WORKERS=1 BDSDE_OUTPUT_DIR=" + (dir / "ignored").string() + " " + exe +
                              " simulate-paths " + cfg + " --paths 256 --output " + (dir / "run").string() +
                              " 2>/dev/null";
  ASSERT_EQ(std::system(run_cmd.c_str()), 0);
  EXPECT_FALSE(fs::exists(dir / "ignored"));
  EXPECT_TRUE(fs::exists(dir / "run" / "paths_cell0.csv"));
  const std::string rep = exe + " replay " + (dir / "run" / "manifest.yaml").string() + " --workers 3 2>/dev/null";
  EXPECT_EQ(std::system(rep.c_str()), 0);
  EXPECT_TRUE(fs::exists(dir / "run-replay" / "summary.csv"));

  std::ofstream(dir / "bad.yaml") << "command: solve\np: 3\n";
  const std::string bad = exe + " solve " + (dir / "bad.yaml").string() + " 2>/dev/null";
  const int status = std::system(bad.c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), cli::kExitConfig);
}
