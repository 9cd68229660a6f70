#pragma once

#include "lagros/bounds.hpp"
#include "lagros/controller.hpp"
#include "lagros/learner.hpp"
#include "lagros/planner.hpp"

#include <memory>
#include <string>
#include <vector>

namespace lagros {

// Local observation o_l of one agent: ego state, goal minus state, then K slots
// of [relative position, relative velocity, type] for the nearest obstacles and
// other agents within `radius` (type 1 obstacle, 2 agent, 0 empty slot).
struct ObserveOptions {
  double radius = 2.0;
  int K = 4;
};

int observation_dim(const SystemModel& model, const ObserveOptions& opt);
Vec observe_local(const SystemModel& model, const Vec& x, int agent, const Environment& env,
                  const ObserveOptions& opt);

// Policy input [x_i, o_l, t] of agent i.
Vec policy_input(const SystemModel& model, const Vec& x, int agent, const Environment& env,
                 const ObserveOptions& opt, double t);

// Per-agent expert: u* of each agent block against its own nominal block,
// mapped into the input set when the model can (opposing thrusters).
Vec expert_control(const SystemModel& team, const SystemModel& agent, const MetricTable& metric, const Vec& x,
                   const Vec& xd, const Vec& ud, double t);

class ControlSource {
 public:
  virtual ~ControlSource() = default;
  virtual Vec control(double t, const Vec& x) = 0;
  // reference the tracking error is measured against
  virtual Vec reference(double t) const = 0;
  virtual std::string name() const = 0;
};

struct ExperimentModels {
  SystemModel team;   // what is simulated
  SystemModel agent;  // one agent block; the metric and policies act per agent
  MetricTable metric;
};

// (c) LAG-ROS and (a) naive imitation: one network evaluation per agent.
// The network never sees t beyond t_clip (the demo horizon; the nominal is
// constant afterwards). `nominal` only serves as the error reference.
std::unique_ptr<ControlSource> make_policy_source(const ExperimentModels& em, const Policy& policy,
                                                  const Environment& env, const ObserveOptions& obs,
                                                  const NominalTrajectory& nominal, double t_clip,
                                                  const std::string& name);

// u* tracking a precomputed nominal.
std::unique_ptr<ControlSource> make_expert_source(const ExperimentModels& em, const NominalTrajectory& nominal);

struct OnlineMpOptions {
  PlannerOptions planner;      // T is the full task horizon
  double horizon = 0.0;        // seconds per re-solve; 0 or >= remaining: shrink to the task end
  double replan_period = 0.1;  // seconds between re-solves
  double terminal_weight = 1e3;  // soft goal when the horizon stops short of the task end
};

// (b) robust tube MP with online planning: the nominal is re-solved in a
// receding fashion from the current nominal state, warm-started from the
// previous solution, and u* tracks the latest one.
std::unique_ptr<ControlSource> baseline_online_mp(const ExperimentModels& em, const Environment& env,
                                                  const TubeProfile& tube, const OnlineMpOptions& opt);

struct RolloutOptions {
  double dt = 0.002;
  double control_period = 0.02;
  double T = 9.0;    // nominal horizon (effort on failure integrates to T)
  double T_h = 9.0;  // success horizon
  DisturbanceSpec disturbance;
  double blowup = 1e6;
};

struct RolloutResult {
  Trajectory traj;
  std::vector<double> error;  // largest per-agent ||x - x_d|| at each sample
  double effort = 0.0;
  bool success = false;
  double t_star = std::numeric_limits<double>::quiet_NaN();
  std::vector<bool> agent_success;
  bool collided = false;
  double collision_time = std::numeric_limits<double>::quiet_NaN();
  bool diverged = false;
  std::vector<double> compute_dt;  // wall-clock seconds per control call
  TubeReport tube;
  SafetyReport safety;
};

RolloutResult rollout(const ExperimentModels& em, ControlSource& source, const Environment& env,
                      const TubeProfile& tube, const RolloutOptions& opt);

// Trapezoid integral of ||u||^2 over [t0, t1] on the samples (linear between).
double control_effort(const Trajectory& tr, double t0, double t1);

enum class PlannerKind { kNaive, kOnlineMp, kLagros, kExpert };
const char* to_string(PlannerKind k);
PlannerKind parse_planner(const std::string& s);

struct BenchRow {
  PlannerKind planner = PlannerKind::kLagros;
  double d_bar = 0.0;
  int trials = 0;
  double success_rate = 0.0, agent_success_rate = 0.0;
  double mean_effort = 0.0, sd_effort = 0.0;
  double mean_dt = 0.0, p95_dt = 0.0, max_dt = 0.0;
  double tube_inside_rate = 0.0, max_violation = 0.0;
  int collisions = 0;
};

struct TrialRecord {
  PlannerKind planner;
  double d_bar;
  int trial;
  int env_id;
  bool success;
  double t_star, effort, max_violation;
  bool collided;
};

BenchRow aggregate(PlannerKind k, double d_bar, const std::vector<RolloutResult>& results);

struct BenchSetup {
  ExperimentModels em;
  TubeProfile tube;
  RolloutOptions rollout;  // disturbance kind and hold interval; magnitude comes from the sweep
  ObserveOptions obs;
  PlannerOptions planner;  // offline nominal (error reference, expert)
  OnlineMpOptions online;
  const Policy* lagros = nullptr;
  const Policy* naive = nullptr;
  double t_clip = 0.0;
  std::function<Environment(int trial)> environment;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  std::vector<TrialRecord> trials;
  std::vector<RolloutResult> results;  // same order as trials
};

// Every planner sees the same environments and disturbance realizations.
BenchReport benchmark(const BenchSetup& setup, const std::vector<PlannerKind>& planners, int n_trials,
                      std::uint64_t seed, const std::vector<double>& d_sweep, int jobs);

// planner,d_bar,success_rate,mean_effort,mean_dt,p95_dt
std::string bench_csv(const std::vector<BenchRow>& rows);
// per-trial records and the auxiliary columns (deterministic: no timings)
std::string trials_csv(const BenchReport& report);

}  // namespace lagros
