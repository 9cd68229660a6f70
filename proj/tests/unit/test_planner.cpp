#include "lagros/planner.hpp"

#include <gtest/gtest.h>

#include <chrono>

using namespace lagros;

namespace {

SystemModel double_integrator() {
  Mat F(2, 2), G(2, 1);
  F << 0, 1, 0, 0;
  G << 0, 1;
  auto m = make_linear(F, G);
  m.position_dim = 1;
  return m;
}

TubeProfile no_tube() { return TubeProfile{}; }

Environment planar_env(const Vec& start, const Vec& goal) {
  Environment env;
  env.x0 = Vec::Zero(4);
  env.xf = Vec::Zero(4);
  env.x0.head(2) = start;
  env.xf.head(2) = goal;
  env.ws_lo = Vec::Constant(2, -1.0);
  env.ws_hi = Vec::Constant(2, 6.0);
  return env;
}

}  // namespace

TEST(Planner, ErosionArithmetic) {
  Environment env;
  env.obstacles.push_back({Vec::Zero(2), 0.5});
  env.ws_lo = Vec::Zero(2);
  env.ws_hi = Vec::Constant(2, 5.0);
  env.agent_separation = 0.5;
  const auto same = erode(env, no_tube(), 3.0);
  EXPECT_EQ(same.obstacles[0].radius, 0.5);
  EXPECT_EQ(same.ws_hi, env.ws_hi);

  const auto tube = profile_with_limit(0.125, 0.3, std::sqrt(2.0), 0.01, 0.02);
  const auto X = erode_by(env, 0.125);
  EXPECT_DOUBLE_EQ(X.obstacles[0].radius, 0.625);
  EXPECT_DOUBLE_EQ(X.agent_separation, 0.75);
  EXPECT_DOUBLE_EQ(X.ws_lo[0], 0.125);
  EXPECT_NEAR(erode(env, tube, 1e3).obstacles[0].radius, 0.625, 1e-15);

  const auto agent = make_planar_agent();
  Vec x = Vec::Zero(4);
  x[0] = 0.6;  // 0.6 from the obstacle center
  EXPECT_GE(set_margin(agent, erode_by(env, 0.0), x), -1e-15 - 0.6);  // outside the workspace box is separate
  Environment free = env;
  free.ws_lo.resize(0);
  free.ws_hi.resize(0);
  EXPECT_GT(set_margin(agent, erode_by(free, 0.0), x), 0.0);
  EXPECT_LT(set_margin(agent, erode_by(free, 0.125), x), 0.0);

  EXPECT_THROW(erode_by(env, 2.6), InfeasibleError);
}

TEST(Planner, StartEqualsGoalIsTrivial) {
  const auto model = make_cart_pole();
  Environment env;
  env.x0 = Vec::Zero(4);
  env.xf = Vec::Zero(4);
  PlannerOptions opt;
  opt.knots = 20;
  opt.restarts = 1;
  const auto nt = plan(model, env, no_tube(), opt);
  EXPECT_NEAR(nt.cost, 0.0, 1e-12);
  for (const auto& u : nt.u) EXPECT_LT(u.norm(), 1e-8);
  for (const auto& x : nt.x) EXPECT_LT(x.norm(), 1e-8);
}

TEST(Planner, DoubleIntegratorMatchesCubic) {
  const auto model = double_integrator();
  Environment env;
  env.x0 = Vec::Zero(2);
  env.xf = Vec(Vec::Zero(2));
  env.xf[0] = 1.0;
  PlannerOptions opt;
  opt.T = 1.0;
  opt.knots = 200;
  opt.restarts = 1;
  const auto nt = plan(model, env, no_tube(), opt);
  EXPECT_LE(nt.max_defect, 1e-6);
  for (int k = 0; k <= opt.knots; ++k) {
    const double t = k * nt.dt();
    EXPECT_NEAR(nt.x[k][0], 3 * t * t - 2 * t * t * t, 1e-4) << t;
  }
  EXPECT_NEAR(nt.cost, 12.0, 1e-2);  // int (6 - 12 t)^2 dt
}

TEST(Planner, CartPoleReachesGoal) {
  const auto model = make_cart_pole();
  Environment env;
  env.x0 = Vec::Zero(4);
  env.xf = Vec::Zero(4);
  env.xf[0] = 3.0;
  PlannerOptions opt;
  opt.restarts = 1;
  opt.max_rounds = 100;
  const auto t0 = std::chrono::steady_clock::now();
  const auto nt = plan(model, env, profile_with_limit(3.15, 0.6, 1.0, 0.0, 0.75), opt);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_TRUE(nt.converged);
  EXPECT_LE(nt.max_defect, 1e-6);
  EXPECT_LT((nt.x.back() - env.xf).norm(), 1e-9);
  for (std::size_t i = 1; i < nt.merit_history.size(); ++i) EXPECT_LE(nt.merit_history[i], nt.merit_history[i - 1]);
  // dense nominal follows the dynamics between knots
  const auto tr = integrate_rk4(model, env.x0, [&](double t, const Vec&) { return nt.u_at(t); }, DisturbanceSpec{},
                                1e-3, 1.0);
  EXPECT_LT((tr.x.back() - nt.x_at(1.0)).norm(), 1e-5);
  std::printf("cart-pole plan: cost %.4f rounds %d time %.3fs\n", nt.cost, nt.rounds, secs);
}

TEST(Planner, AvoidsErodedObstacle) {
  const auto model = make_planar_agent();
  Vec s(2), g(2);
  s << 0, 0;
  g << 4, 4;
  auto env = planar_env(s, g);
  env.obstacles.push_back({Vec::Constant(2, 2.0), 0.5});
  const auto tube = profile_with_limit(0.125, 0.3, std::sqrt(2.0), 0.01, 0.02);
  PlannerOptions opt;
  opt.T = 30.0;
  opt.knots = 60;
  const auto nt = plan(model, env, tube, opt);
  EXPECT_GE(nt.eroded_margin, -1e-6);
  for (int k = 0; k <= opt.knots; ++k) {
    const double t = k * nt.dt();
    EXPECT_GE((nt.x[k].head(2) - env.obstacles[0].center).norm(), 0.5 + r_ell(tube, t) - 1e-6);
  }
  for (const auto& u : nt.u) EXPECT_GE(u.minCoeff(), -1e-9);
  std::printf("planar plan: cost %.5f rounds %d\n", nt.cost, nt.rounds);
}

TEST(Planner, TwoAgentsKeepSeparation) {
  const auto team = make_team(make_planar_agent(), 2);
  Environment env;
  env.x0 = Vec::Zero(8);
  env.xf = Vec::Zero(8);
  env.x0.segment(0, 2) << 0, 2;
  env.xf.segment(0, 2) << 4, 2;
  env.x0.segment(4, 2) << 4, 2.1;
  env.xf.segment(4, 2) << 0, 2.1;
  env.ws_lo = Vec::Constant(2, -1.0);
  env.ws_hi = Vec::Constant(2, 6.0);
  env.agent_separation = 0.5;
  const auto tube = profile_with_limit(0.125, 0.3, std::sqrt(2.0), 0.01, 0.02);
  PlannerOptions opt;
  opt.T = 30.0;
  const auto nt = plan(team, env, tube, opt);
  EXPECT_GE(nt.eroded_margin, -1e-6);
  for (int k = 0; k <= opt.knots; ++k)
    EXPECT_GE((nt.x[k].segment(0, 2) - nt.x[k].segment(4, 2)).norm(), 0.5 + 2 * r_ell(tube, k * nt.dt()) - 1e-6);
}

TEST(Planner, CsvRoundTrip) {
  const auto model = double_integrator();
  Environment env;
  env.x0 = Vec::Zero(2);
  env.xf = Vec::Ones(2);
  env.xf[1] = 0.0;
  PlannerOptions opt;
  opt.T = 2.0;
  opt.knots = 10;
  opt.restarts = 1;
  const auto nt = plan(model, env, no_tube(), opt);
  const std::string path = ::testing::TempDir() + "nominal.csv";
  nt.save_csv(path);
  const auto back = NominalTrajectory::load_csv(path, model);
  for (double t : {0.0, 0.37, 1.2, 1.99, 2.5}) {
    EXPECT_EQ(back.x_at(t), nt.x_at(t));
    EXPECT_EQ(back.u_at(t), nt.u_at(t));
  }
  const std::string epath = ::testing::TempDir() + "env.cfg";
  Environment e2 = planar_env(Vec::Zero(2), Vec::Ones(2));
  e2.obstacles.push_back({Vec::Constant(2, 0.5), 0.25});
  e2.save(epath);
  const auto e3 = Environment::load(epath);
  EXPECT_EQ(e3.xf, e2.xf);
  EXPECT_EQ(e3.obstacles[0].radius, 0.25);
}

TEST(Planner, TheoremThreeCheck) {
  const auto model = make_planar_agent();
  auto env = planar_env(Vec::Zero(2), Vec::Constant(2, 4.0));
  env.obstacles.push_back({Vec::Constant(2, 2.0), 0.5});
  Trajectory tr;
  tr.t = {0.0, 1.0, 2.0};
  Vec a = Vec::Zero(4), b = Vec::Zero(4), c = Vec::Zero(4);
  b.head(2) << 2.5, 2.0;  // exactly on the obstacle boundary
  c.head(2) << 2.2, 2.0;  // inside
  tr.x = {a, b};
  EXPECT_THROW(check_theorem3(model, env, tr), DomainError);
  tr.x = {a, b, b};
  EXPECT_TRUE(check_theorem3(model, env, tr).safe);
  tr.x = {a, b, c};
  const auto rep = check_theorem3(model, env, tr);
  EXPECT_FALSE(rep.safe);
  EXPECT_EQ(rep.first_violation_time, 2.0);
}
