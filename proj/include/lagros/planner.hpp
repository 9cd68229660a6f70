#pragma once

#include "lagros/bounds.hpp"
#include "lagros/dynamics.hpp"

#include <limits>
#include <string>
#include <vector>

namespace lagros {

struct Obstacle {
  Vec center;  // position_dim
  double radius = 0.0;
};

// Global environment o_g. States are full (team) states; the workspace box and
// obstacles act on each agent's position coordinates.
struct Environment {
  int id = 0;
  Vec x0, xf;
  std::vector<Obstacle> obstacles;
  Vec ws_lo, ws_hi;              // empty: unbounded
  double agent_separation = 0.0;  // minimum pairwise agent distance

  void validate(const SystemModel& model) const;
  void save(const std::string& path) const;
  static Environment load(const std::string& path);
};

// X-bar(o_g, t): obstacles inflated by r, workspace shrunk by r, separation + 2r.
struct ErodedSet {
  std::vector<Obstacle> obstacles;
  Vec ws_lo, ws_hi;
  double agent_separation = 0.0;
};

ErodedSet erode(const Environment& env, const TubeProfile& tube, double t);
ErodedSet erode_by(const Environment& env, double r);

// Smallest signed clearance of x in the set (>= 0 inside; closed set).
double set_margin(const SystemModel& model, const ErodedSet& set, const Vec& x);

struct PlannerOptions {
  double T = 9.0;
  int knots = 60;
  int substeps = 4;       // RK4 substeps inside one knot interval
  double c1 = 1.0;        // weight of the integrated ||u||^2
  double c2 = 0.0;        // weight of the performance cost P = ||x - x_f||^2
  int max_rounds = 30;
  int restarts = 3;
  double trust_radius = 2.0;
  double penalty = 1e4;   // exact-penalty weight on defects and constraint violation
  double defect_tol = 1e-6;
  double tol = 1e-7;      // relative predicted-decrease tolerance
  double t0 = 0.0;        // absolute start time; erosion uses r(t0 + tau)
  double terminal_weight = 0.0;  // > 0: soft terminal cost instead of x(T) = x_f
  bool erode = true;
  bool require_converged = true;  // throw instead of returning an inexact plan
  std::uint64_t seed = 0;
};

struct NominalTrajectory {
  double t0 = 0.0, T = 0.0;
  int substeps = 1;
  std::vector<Vec> x, u;  // knots: x has N+1 entries, u has N
  Environment env;
  TubeProfile tube;
  double cost = 0.0;
  double max_defect = 0.0;
  double eroded_margin = 0.0;  // min over knots of set_margin in X-bar
  bool converged = false;
  int rounds = 0;
  std::vector<double> merit_history;  // accepted iterates

  int knots() const { return static_cast<int>(u.size()); }
  double dt() const { return T / knots(); }

  // Dense samples of the knot-to-knot flow; rebuilt from the knots.
  void densify(const SystemModel& model);
  Vec x_at(double t) const;  // cubic Hermite between dense samples; held outside [t0, t0+T]
  Vec u_at(double t) const;  // zero-order hold; zero after t0+T (goals are equilibria)

  void save_csv(const std::string& path) const;
  static NominalTrajectory load_csv(const std::string& path, const SystemModel& model);

 private:
  std::vector<Vec> xs_, fl_, fr_;  // dense states, derivatives at both ends of each substep
};

struct PlanGuess {
  std::vector<Vec> x, u;
};

NominalTrajectory plan(const SystemModel& model, const Environment& env, const TubeProfile& tube,
                       const PlannerOptions& opt, const PlanGuess* guess = nullptr);

// Flow map of one knot interval under constant input (disturbance-free).
Vec knot_flow(const SystemModel& model, const Vec& x, const Vec& u, double t, double dt, int substeps);

struct SafetyReport {
  bool safe = true;
  double worst_margin = std::numeric_limits<double>::infinity();
  double first_violation_time = std::numeric_limits<double>::quiet_NaN();
  std::string what;
};

// Whether a rollout stays in the original admissible set X at every sample.
SafetyReport check_theorem3(const SystemModel& model, const Environment& env, const Trajectory& rollout);

}  // namespace lagros
