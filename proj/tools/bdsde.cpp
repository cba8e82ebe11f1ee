// bdsde: batch experiment driver.
//
//   bdsde <command> [config.yaml] [--seed N] [--paths N] [--output DIR] ...
//   bdsde replay <manifest.yaml> [--output DIR] [--workers N]
//
// Exit codes: 0 ok, 1 usage, 2 invalid config, 3 failed cells, 4 replay mismatch.

#include "bdsde/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

namespace {

using namespace bdsde;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> paths;
  std::optional<std::string> output;
  std::optional<std::string> experiment;
  std::optional<std::string> problem;
  std::vector<std::size_t> n_steps;
  std::vector<double> p;
};

void add_run_options(CLI::App* sub, Overrides& o) {
  sub->add_option("config", o.config, "YAML run configuration")->check(CLI::ExistingFile);
  sub->add_option("--seed", o.seed, "master seed");
  sub->add_option("--paths", o.paths, "number of Monte Carlo paths");
  sub->add_option("--output", o.output, "output directory (overrides BDSDE_OUTPUT_DIR)");
  sub->add_option("--experiment", o.experiment, "experiment name");
  sub->add_option("--problem", o.problem, "catalog problem name");
  sub->add_option("--n-steps", o.n_steps, "grid sizes to sweep");
  sub->add_option("--p", o.p, "exponents to sweep");
}

int run_command(const std::string& command, const Overrides& o) {
  cli::RunConfig c = o.config.empty() ? cli::RunConfig{} : cli::load_config(o.config);
  if (!c.command.empty() && c.command != command)
    std::cerr << "note: config command '" << c.command << "' replaced by '" << command << "'\n";
  c.command = command;
  if (const char* env = std::getenv("BDSDE_OUTPUT_DIR"); env && *env) c.output = env;
  if (o.output) c.output = *o.output;
  if (o.seed) c.seed = *o.seed;
  if (o.paths) c.paths = *o.paths;
  if (o.experiment) c.experiment = *o.experiment;
  if (o.problem) c.problem = *o.problem;
  if (!o.n_steps.empty()) c.n_steps = o.n_steps;
  if (!o.p.empty()) c.p = o.p;
  cli::validate(c, o.config.empty() ? "command line" : o.config);
  return cli::run(c, std::cerr).exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Backward doubly stochastic differential equations: simulation and verification experiments"};
  app.set_version_flag("--version", BDSDE_VERSION);
  app.require_subcommand(1);
  int workers = -1;
  app.add_option("--workers", workers, "worker threads (overrides BDSDE_WORKERS)")->check(CLI::NonNegativeNumber);

  Overrides o;
  std::vector<std::pair<std::string, CLI::App*>> subs;
  const std::map<std::string, std::string> help{
      {"simulate-paths", "sample W and B path bundles"},
      {"verify-tanaka", "residual of the smoothed power expansion against grid refinement"},
      {"solve-linear", "linear pricing problem: regression solver against the closed form"},
      {"solve", "regression solver on a catalog problem"},
      {"picard-trace", "Picard iteration increments and contraction ratio"},
      {"a-priori", "a priori estimate ratios across data scalings"},
      {"ladder", "truncation ladder Cauchy table"},
      {"feynman-kac", "u(t, x) from the coupled forward-backward system"}};
  for (const auto& name : cli::commands()) {
    auto* sub = app.add_subcommand(name, help.at(name));
    add_run_options(sub, o);
    sub->add_option("--workers", workers, "worker threads")->check(CLI::NonNegativeNumber);
    subs.emplace_back(name, sub);
  }
  std::string manifest;
  std::string replay_out;
  auto* rep = app.add_subcommand("replay", "rerun a manifest and compare file hashes");
  rep->add_option("manifest", manifest, "manifest.yaml of an earlier run")->required()->check(CLI::ExistingFile);
  rep->add_option("--output", replay_out, "output directory (default: <run dir>-replay)");
  rep->add_option("--workers", workers, "worker threads")->check(CLI::NonNegativeNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (workers >= 0) set_worker_count(static_cast<std::size_t>(workers));
    if (rep->parsed()) {
      namespace fs = std::filesystem;
      fs::path out = replay_out;
      if (out.empty()) {
        fs::path run_dir = fs::absolute(manifest).parent_path();
        out = run_dir.string() + "-replay";
      }
      const auto rr = cli::replay(manifest, out, std::cerr);
      for (const auto& f : rr.mismatched) std::cerr << "mismatch: " << f << "\n";
      if (!rr.identical) return cli::kExitReplayMismatch;
      return rr.run.exit_code;
    }
    for (const auto& [name, sub] : subs)
      if (sub->parsed()) return run_command(name, o);
  } catch (const cli::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return cli::kExitConfig;
  } catch (const YAML::Exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return cli::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
