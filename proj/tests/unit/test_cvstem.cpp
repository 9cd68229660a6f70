#include "lagros/cvstem.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cstdio>

using namespace lagros;

namespace {

SystemModel scalar_model() { return make_linear(Mat::Constant(1, 1, -1.0), Mat::Ones(1, 1)); }

std::vector<GridPoint> scalar_grid(int count) {
  std::vector<GridPoint> g;
  for (int k = 0; k < count; ++k) {
    GridPoint p;
    p.xd = Vec::Constant(1, 0.1 * k);
    p.x = Vec::Constant(1, 0.1 * k + 0.05);
    p.ud = Vec::Zero(1);
    g.push_back(p);
  }
  return g;
}

std::vector<GridPoint> cart_pole_grid(int count, std::uint64_t seed) {
  Vec lo(4), hi(4);
  lo << -2, -0.2, -1, -0.5;
  hi = -lo;
  return sample_grid(count, lo, hi, Vec::Constant(1, -2.0), Vec::Constant(1, 2.0), 0.5, seed);
}

double eig_min(const Mat& M) { return Eigen::SelfAdjointEigenSolver<Mat>(M).eigenvalues().minCoeff(); }
double eig_max(const Mat& M) { return Eigen::SelfAdjointEigenSolver<Mat>(M).eigenvalues().maxCoeff(); }

}  // namespace

TEST(Cvstem, ScalarStableSystemNeedsNoConditioning) {
  for (double alpha : {0.2, 0.6, 1.0}) {
    CvstemOptions opt;
    opt.alpha = alpha;
    const auto t = synthesize(scalar_model(), scalar_grid(5), opt);
    EXPECT_NEAR(t.chi, 1.0, 1e-5) << alpha;
    EXPECT_EQ(verify_certificate(scalar_model(), t).failing_points, 0);
  }
}

TEST(Cvstem, UnreachableRateIsInfeasible) {
  // 2(alpha - 1) w + beta <= 2 nu fails for w >= 1 when alpha = 3, nu <= 1
  CvstemOptions opt;
  opt.alpha = 3.0;
  opt.nu_max = 1.0;
  try {
    synthesize(scalar_model(), scalar_grid(3), opt);
    FAIL() << "expected infeasibility";
  } catch (const InfeasibleError& e) {
    EXPECT_NE(std::string(e.what()).find("grid point 0"), std::string::npos) << e.what();
  }
  opt.structure = MetricStructure::kPerPoint;
  EXPECT_THROW(synthesize(scalar_model(), scalar_grid(3), opt), InfeasibleError);
}

TEST(Cvstem, RejectsBadOptions) {
  CvstemOptions opt;
  opt.alpha = -1.0;
  EXPECT_THROW(synthesize(scalar_model(), scalar_grid(2), opt), DomainError);
  opt.alpha = 0.5;
  opt.nu_min = 0.0;
  EXPECT_THROW(synthesize(scalar_model(), scalar_grid(2), opt), DomainError);
  EXPECT_THROW(synthesize(scalar_model(), {}, CvstemOptions{}), DomainError);
}

TEST(Cvstem, DuplicatePointsGetIdenticalMetrics) {
  auto grid = cart_pole_grid(3, 1);
  grid.push_back(grid[1]);
  CvstemOptions opt;
  opt.structure = MetricStructure::kPerPoint;
  const auto t = synthesize(make_cart_pole(), grid, opt);
  EXPECT_EQ(t.W[1], t.W[3]);
}

TEST(Cvstem, CartPoleCertificateHoldsAtEveryGridPoint) {
  const auto model = make_cart_pole();
  const auto t = synthesize(model, cart_pole_grid(60, 3), CvstemOptions{});
  const auto rep = verify_certificate(model, t);
  EXPECT_EQ(rep.failing_points, 0);
  EXPECT_GE(rep.min_conditioning_margin, -1e-7);
  EXPECT_GE(rep.min_contraction_margin, -1e-6);
  EXPECT_GE(t.chi, 1.0);
}

TEST(Cvstem, EvalAtGridPointIsScaledInverse) {
  CvstemOptions opt;
  opt.structure = MetricStructure::kPerPoint;
  const auto t = synthesize(make_cart_pole(), cart_pole_grid(4, 5), opt);
  for (std::size_t i = 0; i < t.points.size(); ++i) {
    const auto& p = t.points[i];
    const auto e = t.eval_M(p.x, p.xd, p.ud, p.t);
    EXPECT_LT((e.M - t.nu * t.W[i].inverse()).norm(), 1e-9 * e.M.norm());
    EXPECT_FALSE(e.extrapolated);
  }
}

TEST(Cvstem, BlendedMetricStaysWithinBounds) {
  CvstemOptions opt;
  opt.structure = MetricStructure::kPerPoint;
  opt.interpolation = Interpolation::kInverseDistance;
  const auto t = synthesize(make_cart_pole(), cart_pole_grid(6, 7), opt);
  auto rng = make_rng(8);
  for (int k = 0; k < 50; ++k) {
    const auto& a = t.points[rng() % t.points.size()];
    const auto& b = t.points[rng() % t.points.size()];
    const auto M = t.eval_M(0.5 * (a.x + b.x), 0.5 * (a.xd + b.xd), 0.5 * (a.ud + b.ud), 0.0).M;
    EXPECT_GE(eig_min(M), 1.0 / t.omega_hi() * (1 - 1e-9));
    EXPECT_LE(eig_max(M), 1.0 / t.omega_lo() * (1 + 1e-9));
  }
}

TEST(Cvstem, FarQueryIsFlaggedAsExtrapolated) {
  const auto t = synthesize(make_cart_pole(), cart_pole_grid(10, 9), CvstemOptions{});
  Vec far = Vec::Constant(4, 50.0);
  EXPECT_TRUE(t.eval_M(far, far, Vec::Zero(1), 0.0).extrapolated);
}

TEST(Cvstem, MdotVanishesForConstantMetric) {
  const auto t = constant_metric(2.0 * Mat::Identity(2, 2), 3.0, 2.0, 0.5, Mat::Identity(1, 1));
  FlowContext flow;
  flow.xdot = Vec::Ones(2);
  flow.xd_dot = -Vec::Ones(2);
  EXPECT_EQ(eval_Mdot(t, Vec::Zero(2), Vec::Ones(2), Vec::Zero(1), 0.3, flow).norm(), 0.0);
}

TEST(Cvstem, MdotMatchesSlopeOfTimeLinearTable) {
  // W(t) = W0 + t W1 sampled at integer times; the two-neighbor inverse-distance
  // blend along t is exactly linear interpolation.
  MetricTable t;
  t.alpha = 0.5;
  t.nu = 2.0;
  t.chi = 10.0;
  t.R = Mat::Identity(1, 1);
  t.structure = MetricStructure::kPerPoint;
  t.interpolation = Interpolation::kInverseDistance;
  t.blend_neighbors = 2;
  Mat W0(2, 2), W1(2, 2);
  W0 << 2, 0.3, 0.3, 1.5;
  W1 << 0.4, 0.1, 0.1, 0.2;
  for (int k = 0; k < 5; ++k) {
    GridPoint p{Vec::Zero(2), Vec::Zero(2), Vec::Zero(1), double(k)};
    t.points.push_back(p);
    t.W.push_back(W0 + k * W1);
  }
  t.finalize();
  FlowContext flow;  // time only
  for (double s : {0.3, 1.5, 2.7}) {
    const Mat Wi = (W0 + s * W1).inverse();
    const Mat expect = -t.nu * Wi * W1 * Wi;
    EXPECT_LT((eval_Mdot(t, Vec::Zero(2), Vec::Zero(2), Vec::Zero(1), s, flow) - expect).norm(), 1e-5) << s;
  }
}

TEST(Cvstem, SteadyStateBound) {
  auto t = constant_metric(Mat::Identity(1, 1), 1.0, 1.0, 0.6, Mat::Identity(1, 1));
  EXPECT_EQ(steady_state_bound(t, 0.0, 0.0, 1.0), 0.0);
  // published cart-pole tube: (d_eps / alpha) sqrt(chi) = 3.15 with d_eps = 0.75
  t.chi = std::pow(3.15 * 0.6 / 0.75, 2);
  EXPECT_NEAR(steady_state_bound(t, 0.0, 0.75, 1.0), 3.15, 1e-12);
  EXPECT_NEAR(steady_state_bound(t, 0.0, 1.5, 1.0), 2.0 * steady_state_bound(t, 0.0, 0.75, 1.0), 1e-12);
}

TEST(Cvstem, ShrinkingAlphaNeverRaisesChi) {
  const auto model = make_cart_pole();
  const auto grid = cart_pole_grid(20, 11);
  double prev = 0.0;
  for (double alpha : {0.2, 0.4, 0.6, 0.8}) {
    CvstemOptions opt;
    opt.alpha = alpha;
    const double chi = synthesize(model, grid, opt).chi;
    EXPECT_GE(chi, prev * (1 - 1e-4)) << alpha;
    prev = chi;
  }
}

TEST(Cvstem, SaveLoadRoundTrip) {
  CvstemOptions opt;
  opt.structure = MetricStructure::kPerPoint;
  const auto t = synthesize(make_cart_pole(), cart_pole_grid(5, 13), opt);
  const std::string path = ::testing::TempDir() + "metric_roundtrip.csv";
  t.save(path);
  const auto u = MetricTable::load(path);
  EXPECT_EQ(u.chi, t.chi);
  EXPECT_EQ(u.nu, t.nu);
  EXPECT_EQ(u.alpha, t.alpha);
  ASSERT_EQ(u.W.size(), t.W.size());
  for (std::size_t i = 0; i < t.W.size(); ++i) {
    EXPECT_EQ(u.W[i], t.W[i]);
    EXPECT_EQ(u.points[i].x, t.points[i].x);
  }
  std::remove(path.c_str());
  EXPECT_THROW(MetricTable::load(path), Error);
}
