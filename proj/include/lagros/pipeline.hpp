#pragma once

#include "lagros/config.hpp"

#include <map>
#include <ostream>
#include <string>

namespace lagros {

inline constexpr const char* kToolVersion = "lagros 1.0.0";

// One pipeline invocation: resolved config, its hash, output directory.
struct RunContext {
  RunConfig cfg;
  std::string hash;
  std::string out_dir = "out";
  int jobs = 1;
  std::ostream* log = nullptr;
};

RunContext make_context(const RunConfig& cfg, const std::string& out_dir, int jobs, std::ostream* log = nullptr);

// Artifact names inside out_dir.
namespace artifact {
inline constexpr const char* kMetric = "metric.txt";
inline constexpr const char* kDemos = "demos.csv";
inline constexpr const char* kLagrosPolicy = "policy_lagros.txt";
inline constexpr const char* kNaivePolicy = "policy_naive.txt";
inline constexpr const char* kBench = "bench.csv";
inline constexpr const char* kBenchTrials = "bench_trials.csv";
inline constexpr const char* kBounds = "bounds.csv";
}  // namespace artifact

// Shared views of the run.
ExperimentModels load_models(const RunContext& ctx);
TubeProfile run_tube(const RunContext& ctx, const MetricTable& metric);
Environment test_environment(const RunContext& ctx, int index);
DemoOptions demo_options(const RunContext& ctx);
BenchSetup bench_setup(const RunContext& ctx, const ExperimentModels& em, const Policy* lagros, const Policy* naive);

struct BoundsSummary {
  int trials = 0;
  int violating_trials = 0;
  double worst_violation = 0.0;       // max over trials of max_t (e - r), clamped at 0
  double worst_mean_margin = 0.0;     // max over t of (mean error - r)
  bool mean_inside = true;
  bool pass = true;                   // mean inside, <= 5% violating trials, each <= 0.1
};

// Commands. Each writes its artifacts plus `<command>.manifest.json` and
// returns the manifest's output table (file -> sha256).
std::map<std::string, std::string> cmd_synthesize_metric(const RunContext& ctx);
std::map<std::string, std::string> cmd_plan(const RunContext& ctx, int env_index);
std::map<std::string, std::string> cmd_gen_demos(const RunContext& ctx);
std::map<std::string, std::string> cmd_train(const RunContext& ctx);
std::map<std::string, std::string> cmd_rollout(const RunContext& ctx, PlannerKind planner, int env_index);
std::map<std::string, std::string> cmd_bench(const RunContext& ctx);
std::map<std::string, std::string> cmd_verify_bounds(const RunContext& ctx, PlannerKind planner,
                                                     BoundsSummary* summary = nullptr);

// Violation accounting used by verify-bounds: tolerance for "inside" is the
// pinned 1e-9 numerical slack.
BoundsSummary summarize_bounds(const std::vector<RolloutResult>& results, const TubeProfile& tube);

}  // namespace lagros
