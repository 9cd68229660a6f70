#include "lagros/demos.hpp"

#include <gtest/gtest.h>

#include <cstdio>

using namespace lagros;

namespace {

const ExperimentModels& planar() {
  static const ExperimentModels em = [] {
    Vec lo(4), hi(4);
    lo << 0, 0, -1, -1;
    hi << 5, 5, 1, 1;
    CvstemOptions opt;
    opt.alpha = 0.3;
    const auto agent = make_planar_agent();
    auto grid = sample_grid(40, lo, hi, Vec::Zero(4), Vec::Constant(4, 2.0), 0.3, 5);
    return ExperimentModels{make_team(agent, 1), agent, synthesize(agent, grid, opt)};
  }();
  return em;
}

DemoOptions small_options() {
  DemoOptions o;
  o.envs = 3;
  o.per_traj = 6;
  o.planner.T = 6.0;
  o.planner.knots = 24;
  o.planner.restarts = 1;
  o.seed = 11;
  auto& r = o.randomization;
  r.start_lo = Vec::Constant(2, 0.5);
  r.start_hi = Vec::Constant(2, 1.5);
  r.goal_lo = Vec::Constant(2, 3.5);
  r.goal_hi = Vec::Constant(2, 4.5);
  r.ws_lo = Vec::Zero(2);
  r.ws_hi = Vec::Constant(2, 5.0);
  r.obstacles_max = 1;
  return o;
}

TubeProfile small_tube() { return profile_with_limit(0.125, 0.3, planar().agent.b_bar, 0.01, 0.02); }

}  // namespace

TEST(TubeSampling, RadialMomentOfBall) {
  auto rng = make_rng(3);
  const int n = 4, N = 100000;
  const double r = 2.0;
  const Vec c = Vec::Constant(n, 0.7);
  double sum = 0.0;
  for (int i = 0; i < N; ++i) {
    const double d = (sample_tube_state(c, r, rng) - c).norm();
    ASSERT_LE(d, r * (1 + 1e-12));
    sum += d;
  }
  EXPECT_NEAR(sum / N, r * n / (n + 1.0), 0.01 * r * n / (n + 1.0));
  EXPECT_EQ(sample_tube_state(c, 0.0, rng), c);
}

TEST(TubeSampling, StratifiedTimesCoverHorizon) {
  auto rng = make_rng(4);
  const double T = 9.0;
  const int D = 50;
  const auto ts = stratified_times(T, D, rng);
  ASSERT_EQ(ts.size(), static_cast<std::size_t>(D));
  double prev = 0.0;
  for (int j = 0; j < D; ++j) {
    EXPECT_GE(ts[j], j * T / D);
    EXPECT_LT(ts[j], (j + 1) * T / D);
    EXPECT_LE(ts[j] - prev, 2 * T / D);
    prev = ts[j];
  }
  EXPECT_LE(T - prev, 2 * T / D);
}

TEST(Demos, LabelsAreExpertAtSampledStates) {
  const auto& em = planar();
  std::vector<NominalTrajectory> noms;
  const auto ds = generate(em, small_tube(), small_options(), &noms);
  ASSERT_EQ(ds.records.size(), 18u);
  ASSERT_EQ(noms.size(), 3u);
  for (const auto& s : ds.records) {
    EXPECT_LE((s.x - s.xd).norm(), r_ell(small_tube(), s.t) * (1 + 1e-12));
    EXPECT_EQ(s.xd, noms[s.env_id].x_at(s.t));
    // relabel audit: the stored label is reproduced bit for bit
    const Vec u = realize_input(em.agent, u_star(em.agent, em.metric, s.x, s.xd, s.ud, s.t).u);
    EXPECT_EQ(u, s.u_star);
    EXPECT_TRUE((s.u_star.array() >= 0.0).all());
  }
  const RowMat Z = ds.inputs();
  EXPECT_EQ(Z.cols(), 4 + ds.header.obs_dim + 1);
  EXPECT_EQ(ds.labels_u_star().cols(), 4);
}

TEST(Demos, ZeroTubeGivesNominalLabels) {
  const auto& em = planar();
  TubeProfile zero = small_tube();
  zero.d_bar = 0.0;
  zero.eps_ell = 0.0;
  auto opt = small_options();
  opt.envs = 1;
  const auto ds = generate(em, zero, opt);
  for (const auto& s : ds.records) {
    EXPECT_EQ(s.x, s.xd);
    EXPECT_LT((s.u_star - realize_input(em.agent, s.ud)).norm(), 1e-9);
  }
}

TEST(Demos, DeterministicAndRoundTrips) {
  const auto& em = planar();
  auto opt = small_options();
  const auto a = generate(em, small_tube(), opt);
  opt.jobs = 2;
  const auto b = generate(em, small_tube(), opt);
  const std::string pa = testing::TempDir() + "demos_a.csv", pb = testing::TempDir() + "demos_b.csv";
  a.save(pa);
  b.save(pb);
  EXPECT_EQ(sha256_file(pa), sha256_file(pb));
  const auto c = Dataset::load(pa);
  ASSERT_EQ(c.records.size(), a.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(c.records[i].x, a.records[i].x);
    EXPECT_EQ(c.records[i].u_star, a.records[i].u_star);
    EXPECT_EQ(c.records[i].t, a.records[i].t);
  }
  EXPECT_EQ(c.header.seed, a.header.seed);
  std::remove(pa.c_str());
  std::remove(pb.c_str());
}

TEST(Demos, EnvironmentsRespectClearance) {
  const auto& em = planar();
  auto opt = small_options();
  opt.randomization.obstacles_min = opt.randomization.obstacles_max = 2;
  auto rng = make_rng(8);
  for (int i = 0; i < 20; ++i) {
    const auto env = sample_environment(em.team, opt.randomization, rng, i);
    ASSERT_EQ(env.obstacles.size(), 2u);
    for (const auto& o : env.obstacles) {
      EXPECT_GE((o.center - env.x0.head(2)).norm(), o.radius + opt.randomization.clearance);
      EXPECT_GE((o.center - env.xf.head(2)).norm(), o.radius + opt.randomization.clearance);
    }
  }
}
