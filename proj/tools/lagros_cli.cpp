#include "lagros/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

using namespace lagros;

namespace {

RunConfig resolve_config(const std::string& path) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_config(path);
  if (const char* s = std::getenv("LAGROS_SEED"); s && *s) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (*end != '\0') throw ConfigError(std::string("LAGROS_SEED must be a nonnegative integer, got '") + s + "'");
    cfg.seed = v;
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lagros: tube-certified learned robust control pipeline"};
  app.require_subcommand(1);
  app.footer("Exit codes: 0 success, 2 infeasible (planning/synthesis), 1 any other error.\n"
             "LAGROS_SEED overrides [run] seed before the config hash is computed.\n\n"
             "Config file keys (INI; unknown keys are rejected):" +
             config_reference());

  std::string config_path, out_dir = "out";
  int jobs = 1;
  bool quiet = false;
  app.add_option("--config", config_path, "INI config file (defaults if omitted)")->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "output directory")->capture_default_str();
  app.add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  app.add_flag("-q,--quiet", quiet, "suppress progress messages");

  int env_index = 0;
  std::string planner = "lagros";

  auto* synth = app.add_subcommand("synthesize-metric", "CV-STEM metric on the configured grid -> metric.txt");
  auto* plan_cmd = app.add_subcommand("plan", "tube-constrained nominal plan for one test environment");
  plan_cmd->add_option("--env", env_index, "test environment index")->capture_default_str();
  auto* demos = app.add_subcommand("gen-demos", "sample tube states and label them with the expert -> demos.csv");
  auto* train_cmd = app.add_subcommand("train", "fit the LAG-ROS and naive policies -> policy_*.txt");
  auto* roll = app.add_subcommand("rollout", "closed-loop rollout of one planner on one test environment");
  roll->add_option("--env", env_index, "test environment index")->capture_default_str();
  roll->add_option("--planner", planner, "naive | online-mp | lagros | expert")->capture_default_str();
  auto* bench = app.add_subcommand("bench", "success rate, effort and timing over [bench] trials -> bench.csv");
  auto* verify = app.add_subcommand("verify-bounds", "tube-bound check over disturbed rollouts -> bounds.csv");
  verify->add_option("--planner", planner, "naive | online-mp | lagros | expert")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    const RunConfig cfg = resolve_config(config_path);
    const RunContext ctx = make_context(cfg, out_dir, jobs, quiet ? nullptr : &std::cerr);
    if (!quiet) std::cerr << "config " << ctx.hash << " seed " << cfg.seed << " -> " << out_dir << "\n";
    if (synth->parsed()) cmd_synthesize_metric(ctx);
    else if (plan_cmd->parsed()) cmd_plan(ctx, env_index);
    else if (demos->parsed()) cmd_gen_demos(ctx);
    else if (train_cmd->parsed()) cmd_train(ctx);
    else if (roll->parsed()) cmd_rollout(ctx, parse_planner(planner), env_index);
    else if (bench->parsed()) cmd_bench(ctx);
    else if (verify->parsed()) {
      BoundsSummary s;
      cmd_verify_bounds(ctx, parse_planner(planner), &s);
      std::cout << (s.pass ? "PASS" : "FAIL") << " " << s.violating_trials << "/" << s.trials
                << " trials outside the tube, worst " << s.worst_violation << "\n";
    }
  } catch (const InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
