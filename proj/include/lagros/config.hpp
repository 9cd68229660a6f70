#pragma once

#include "lagros/cvstem.hpp"
#include "lagros/demos.hpp"
#include "lagros/learner.hpp"
#include "lagros/planner.hpp"
#include "lagros/simbench.hpp"

#include <string>
#include <vector>

namespace lagros {

// Everything a pipeline run depends on. Every field has a default; a config
// file only lists what it changes.
struct RunConfig {
  // [run]
  std::string name = "cartpole";
  std::uint64_t seed = 1;

  // [model]
  std::string model = "cartpole";  // cartpole | planar
  int agents = 1;
  bool thrusters = true;  // planar: four nonnegative thrusters instead of two signed forces

  // [tube]
  double alpha = 0.6;
  double eps_ell = 0.01;
  double d_eps = 0.75;   // b_bar eps_ell + d_bar; d_bar is what remains after the learning term
  double r_inf = 3.15;   // steady-state radius; 0 derives it from the synthesized metric
  double R0 = 0.0;

  // [metric]
  int grid_points = 120;
  std::uint64_t grid_seed = 17;
  Vec xd_lo = (Vec(4) << -2, -0.2, -1, -0.5).finished();
  Vec xd_hi = (Vec(4) << 2, 0.2, 1, 0.5).finished();
  Vec ud_lo = Vec::Constant(1, -2.0), ud_hi = Vec::Constant(1, 2.0);
  double grid_radius = 0.5;
  CvstemOptions cvstem;

  PlannerOptions planner = [] {
    PlannerOptions p;
    p.max_rounds = 100;
    p.restarts = 1;
    return p;
  }();
  EnvRandomization env = [] {
    EnvRandomization r;
    r.start_lo = r.start_hi = Vec::Zero(1);
    r.goal_lo = Vec::Constant(1, 3.5);
    r.goal_hi = Vec::Constant(1, 5.0);
    r.mirror_goal = true;
    return r;
  }();

  // [demos]
  int envs = 100;
  int per_traj = 100;
  int max_resamples = 10;

  ObserveOptions obs = [] {
    ObserveOptions o;
    o.K = 0;
    return o;
  }();
  TrainOptions train;

  RolloutOptions rollout = [] {
    RolloutOptions r;
    r.dt = 0.001;
    r.control_period = 0.005;
    r.disturbance.kind = DisturbanceKind::kPiecewiseRandom;
    return r;
  }();

  // [bench]
  int trials = 20;
  std::vector<PlannerKind> planners = {PlannerKind::kNaive, PlannerKind::kOnlineMp, PlannerKind::kLagros};
  Vec d_sweep;  // empty: the tube's d_bar only
  std::uint64_t env_stream = 2;  // test environments come from a stream the demos never use
  OnlineMpOptions online;

  double d_bar() const;  // d_eps - b_bar eps_ell
  SystemModel agent_model() const;
  SystemModel team_model() const;
};

// Parses `[section]` / `key = value` text ('#' and ';' start comments). Unknown
// sections or keys, malformed values and duplicate keys are errors.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

// Canonical `section.key = value` listing of every field (defaults included);
// the config hash is its SHA-256, so equal settings hash equally however the
// file was written.
std::string canonical_config(const RunConfig& c);
std::string config_hash(const RunConfig& c);

// One line per key with its default and meaning (for --help).
std::string config_reference();

}  // namespace lagros
