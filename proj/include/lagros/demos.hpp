#pragma once

#include "lagros/learner.hpp"
#include "lagros/planner.hpp"
#include "lagros/simbench.hpp"

#include <string>
#include <vector>

namespace lagros {

// Uniform in the closed Euclidean ball of radius r about xd.
Vec sample_tube_state(const Vec& xd, double r, std::mt19937_64& rng);

// Randomized environments: starts and goals per agent, obstacle count and
// placement. The cart-pole case uses start 0 and goal |p_f| in [goal_lo, goal_hi]
// with a random sign (mirror_goal).
struct EnvRandomization {
  Vec start_lo, start_hi;  // position box per agent
  Vec goal_lo, goal_hi;
  bool mirror_goal = false;
  int obstacles_min = 0, obstacles_max = 0;
  double obstacle_radius = 0.5;
  double clearance = 0.3;       // extra free space kept around starts and goals
  Vec ws_lo, ws_hi;             // empty: unbounded
  double agent_separation = 0.0;
  int max_attempts = 1000;
};

Environment sample_environment(const SystemModel& team, const EnvRandomization& r, std::mt19937_64& rng, int id);

struct DemoSample {
  int env_id = 0, traj_id = 0;  // traj_id: agent index within the environment
  Vec x, o_ell;
  double t = 0.0;
  Vec u_star;
  Vec xd, ud;  // nominal at t (relabel audits, naive baseline labels)
};

struct DatasetHeader {
  std::string model;
  int n = 0, m = 0, obs_dim = 0, agents = 1;
  TubeProfile tube;
  double eps_target = 0.0;
  double T = 0.0;
  int envs = 0, per_traj = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  int resampled = 0;  // environments replaced because the planner failed
};

struct Dataset {
  DatasetHeader header;
  std::vector<DemoSample> records;

  // rows [x, o_l, t] and labels u* (or u_d for the naive baseline)
  RowMat inputs() const;
  RowMat labels_u_star() const;
  RowMat labels_u_d() const;

  void save(const std::string& path) const;
  static Dataset load(const std::string& path);
};

struct DemoOptions {
  int envs = 100;
  int per_traj = 100;  // D
  PlannerOptions planner;
  ObserveOptions obs;
  EnvRandomization randomization;
  int max_resamples = 10;  // per environment
  std::uint64_t seed = 0;
  int jobs = 1;
};

// Plans each environment in the tube-eroded set, then samples D stratified
// times and one in-tube state per agent and time, labeled with u*.
Dataset generate(const ExperimentModels& em, const TubeProfile& tube, const DemoOptions& opt,
                 std::vector<NominalTrajectory>* nominals = nullptr);

// Stratified times (j + U_j) T / D.
std::vector<double> stratified_times(double T, int D, std::mt19937_64& rng);

}  // namespace lagros
