#pragma once

#include "lagros/common.hpp"

#include <string>
#include <vector>

namespace lagros {

enum class InputConstraint { kNone, kNonnegative, kBox };

struct InputSet {
  InputConstraint kind = InputConstraint::kNone;
  Vec lo, hi;  // used by kBox
};

// Control-affine model xdot = f(x,t) + B(x,t) u (+ d). Several identical agents
// may be stacked block-diagonally; each agent block begins with its position
// coordinates (position_dim of them), followed by the remaining state.
struct SystemModel {
  using Drift = std::function<Vec(const Vec&, double)>;
  using InputMatrix = std::function<Mat(const Vec&, double)>;

  std::string name;
  int n = 0;
  int m = 0;
  Drift f;
  InputMatrix B;
  InputSet input;
  double b_bar = 0.0;
  double d_bar = 0.0;

  int agents = 1;
  int position_dim = 0;
  // agent state is [q, qdot] with q the first half (used for initial guesses)
  bool second_order = false;

  // Optional map to an input with the same B(x) u that lies in the input set
  // (possible when actuators come in opposing pairs); empty means identity.
  std::function<Vec(const Vec&)> realize;

  int agent_n() const { return n / agents; }
  int agent_m() const { return m / agents; }

  Vec eval(const Vec& x, const Vec& u, double t) const { return f(x, t) + B(x, t) * u; }
};

struct CartPoleParams {
  double g = 9.8, mc = 1.0, m = 0.1, mu_c = 0.5, mu_p = 0.002, l = 0.5;
  // sgn(pdot) in the Coulomb cart friction is smoothed to tanh(pdot / v_s)
  double v_smooth = 0.05;
};

struct PlanarParams {
  double mass = 1.0, drag = 1.0;
  // four nonnegative thrusters along +x, -x, +y, -y instead of a free 2-vector force
  bool thrusters = true;
};

SystemModel make_cart_pole(const CartPoleParams& p = {}, double d_bar = 0.0);
SystemModel make_planar_agent(const PlanarParams& p = {}, double d_bar = 0.0);
SystemModel make_linear(const Mat& F, const Mat& G, double d_bar = 0.0);
// Block-diagonal team of `count` copies of an agent model.
SystemModel make_team(const SystemModel& agent, int count);

// Model restricted to agent block i of a team (shares the agent dynamics).
Vec agent_block(const Vec& v, int i, int block);

Vec eval_f(const SystemModel& model, const Vec& x, double t);

// Central-difference Jacobian of f(x) + B(x) u w.r.t. x.
Mat jacobian(const SystemModel& model, const Vec& x, const Vec& u, double t);

// A with A (x - xd) = f(x) + B(x) ud - f(xd) - B(xd) ud. Gauss-Legendre line
// integral of the Jacobian plus a rank-one secant correction for the residual.
Mat sdc_factorize(const SystemModel& model, const Vec& x, const Vec& xd, const Vec& ud,
                  double t);

Vec realize_input(const SystemModel& model, const Vec& u);

double max_input_norm(const SystemModel& model, const std::vector<Vec>& samples);

enum class DisturbanceKind { kZero, kConstantRandomDirection, kPiecewiseRandom };

struct DisturbanceSpec {
  DisturbanceKind kind = DisturbanceKind::kZero;
  double magnitude = 0.0;
  double hold_interval = 0.1;
  std::uint64_t seed = 0;
};

// Deterministic in (spec.seed, t); ||d|| <= magnitude holds exactly.
Vec sample_disturbance(const DisturbanceSpec& spec, int dim, double t);

struct Trajectory {
  std::vector<double> t;
  std::vector<Vec> x, u, d;
  std::size_t size() const { return t.size(); }
};

using ControlLaw = std::function<Vec(double t, const Vec& x)>;

struct IntegrateOptions {
  double control_period = 0.0;  // 0: re-evaluate the law every step
  double blowup = 1e6;
  // called after every accepted step; returning false stops the run
  std::function<bool(double t, const Vec& x)> observer;
};

Vec rk4_step(const SystemModel& model, const Vec& x, const Vec& u, const Vec& d, double t,
             double dt);

Trajectory integrate_rk4(const SystemModel& model, const Vec& x0, const ControlLaw& law,
                         const DisturbanceSpec& dist, double dt, double T,
                         const IntegrateOptions& opt = {});

void write_trajectory_csv(const Trajectory& tr, const std::string& path);

}  // namespace lagros
