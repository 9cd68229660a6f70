#include "lagros/dynamics.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace lagros;

namespace {

double cart_pole_energy(const Vec& x, const CartPoleParams& p) {
  const double th = x[1], dp = x[2], dth = x[3];
  return 0.5 * (p.mc + p.m) * dp * dp + p.m * p.l * dp * dth * std::cos(th) +
         0.5 * (4.0 / 3.0) * p.m * p.l * p.l * dth * dth + p.m * p.g * p.l * std::cos(th);
}

Vec random_state(std::mt19937_64& rng, int n, double scale) { return scale * gaussian_vec(n, rng); }

}  // namespace

TEST(Dynamics, EquilibriaHaveZeroDrift) {
  EXPECT_LT(eval_f(make_cart_pole(), Vec::Zero(4), 0).norm(), 1e-15);
  Vec x(4);
  x << 1, 2, 0, 0;
  EXPECT_LT(eval_f(make_planar_agent(), x, 0).norm(), 1e-15);
}

TEST(Dynamics, CartPoleMatchesLagrangeSolve) {
  // At rest the friction terms vanish; values from solving the 2x2 Lagrange
  // system [[mc+m, m l c], [m l c, 4/3 m l^2]] [pdd; thdd] = [0; m g l s].
  auto cp = make_cart_pole();
  Vec x(4);
  x << 0, 0.1, 0, 0;
  const Vec f = eval_f(cp, x, 0);
  EXPECT_NEAR(f[0], 0.0, 1e-15);
  EXPECT_NEAR(f[1], 0.0, 1e-15);
  EXPECT_NEAR(f[2], -0.07117831516049843, 1e-12);
  EXPECT_NEAR(f[3], 1.573785304801626, 1e-12);
  const Mat B = cp.B(x, 0);
  EXPECT_NEAR(B(2, 0), 0.9748987901531883, 1e-12);
  EXPECT_NEAR(B(3, 0), -1.4550425353903957, 1e-12);
}

TEST(Dynamics, NonFiniteStateIsDomainError) {
  Vec x = Vec::Zero(4);
  x[1] = std::nan("");
  EXPECT_THROW(eval_f(make_cart_pole(), x, 0), DomainError);
}

TEST(Dynamics, InputBoundCoversSampledStates) {
  auto rng = make_rng(3);
  for (const auto& model : {make_cart_pole(), make_planar_agent()}) {
    for (int k = 0; k < 2000; ++k) {
      const Vec x = random_state(rng, model.n, 3.0);
      EXPECT_LE(Eigen::JacobiSVD<Mat>(model.B(x, 0)).singularValues()(0), model.b_bar);
    }
  }
}

TEST(Sdc, LinearSystemGivesF) {
  Mat F(2, 2), G(2, 1);
  F << 0, 1, -2, -3;
  G << 0, 1;
  auto lin = make_linear(F, G);
  auto rng = make_rng(1);
  for (int k = 0; k < 20; ++k) {
    const Vec x = random_state(rng, 2, 2.0), xd = random_state(rng, 2, 2.0);
    EXPECT_LT((sdc_factorize(lin, x, xd, Vec::Ones(1), 0) - F).norm(), 1e-8);
  }
}

TEST(Sdc, CoincidentPointGivesJacobian) {
  auto cp = make_cart_pole();
  Vec x(4);
  x << 0.3, 0.2, -0.4, 0.1;
  const Vec ud = Vec::Constant(1, 0.7);
  const Mat A = sdc_factorize(cp, x, x, ud, 0);
  EXPECT_TRUE(A.allFinite());
  EXPECT_LT((A - jacobian(cp, x, ud, 0)).norm(), 1e-6);
}

TEST(Sdc, ResidualIdentityOnRandomPairs) {
  auto rng = make_rng(11);
  for (const auto& model : {make_cart_pole(), make_planar_agent()}) {
    double worst = 0.0;
    for (int k = 0; k < 10000; ++k) {
      const Vec x = random_state(rng, model.n, 1.5), xd = random_state(rng, model.n, 1.5);
      const Vec ud = random_state(rng, model.m, 2.0);
      const Mat A = sdc_factorize(model, x, xd, ud, 0);
      const Vec direct = model.eval(x, ud, 0) - model.eval(xd, ud, 0);
      const double res = (A * (x - xd) - direct).norm() / (1.0 + (x - xd).norm());
      worst = std::max(worst, res);
    }
    EXPECT_LE(worst, 1e-8) << model.name;
  }
}

TEST(Rk4, ZeroDynamicsStayConstant) {
  auto lin = make_linear(Mat::Zero(3, 3), Mat::Zero(3, 1));
  Vec x0(3);
  x0 << 1, -2, 3;
  auto tr = integrate_rk4(lin, x0, [](double, const Vec&) { return Vec::Zero(1); }, {}, 0.01, 1.0);
  for (const auto& x : tr.x) EXPECT_EQ(x, x0);
  EXPECT_EQ(tr.size(), 101u);
}

TEST(Rk4, ScalarDecayMatchesExponential) {
  auto lin = make_linear(-Mat::Identity(1, 1), Mat::Zero(1, 1));
  auto tr = integrate_rk4(lin, Vec::Ones(1), [](double, const Vec&) { return Vec::Zero(1); }, {}, 1e-3, 1.0);
  EXPECT_NEAR(tr.t.back(), 1.0, 1e-12);
  EXPECT_NEAR(tr.x.back()[0], std::exp(-1.0), 1e-6);
}

TEST(Rk4, FourthOrderConvergence) {
  auto cp = make_cart_pole();
  Vec x0(4);
  x0 << 0, 0.3, 0.5, -0.2;
  auto zero = [](double, const Vec&) { return Vec::Zero(1); };
  const double T = 1.0, h = 0.02;
  const Vec ref = integrate_rk4(cp, x0, zero, {}, h / 8, T).x.back();
  const double e1 = (integrate_rk4(cp, x0, zero, {}, h, T).x.back() - ref).norm();
  const double e2 = (integrate_rk4(cp, x0, zero, {}, h / 2, T).x.back() - ref).norm();
  EXPECT_GT(e1 / e2, 12.0);
  EXPECT_LT(e1 / e2, 20.0);
}

TEST(Rk4, FrictionlessCartPoleConservesEnergy) {
  CartPoleParams p;
  p.mu_c = p.mu_p = 0.0;
  auto cp = make_cart_pole(p);
  Vec x0(4);
  x0 << 0, 0.5, 0.3, -0.2;
  auto tr = integrate_rk4(cp, x0, [](double, const Vec&) { return Vec::Zero(1); }, {}, 1e-3, 10.0);
  const double E0 = cart_pole_energy(x0, p);
  double drift = 0.0;
  for (const auto& x : tr.x) drift = std::max(drift, std::abs(cart_pole_energy(x, p) - E0));
  EXPECT_LT(drift, 1e-4);
}

TEST(Rk4, BlowUpRaisesDivergence) {
  auto lin = make_linear(Mat::Identity(1, 1), Mat::Zero(1, 1));
  IntegrateOptions opt;
  opt.blowup = 10.0;
  try {
    integrate_rk4(lin, Vec::Ones(1), [](double, const Vec&) { return Vec::Zero(1); }, {}, 1e-3, 5.0, opt);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_NEAR(e.time, std::log(10.0), 2e-3);
  }
}

TEST(Rk4, ControlHeldBetweenUpdates) {
  auto lin = make_linear(Mat::Zero(1, 1), Mat::Identity(1, 1));
  int calls = 0;
  IntegrateOptions opt;
  opt.control_period = 0.1;
  auto tr = integrate_rk4(lin, Vec::Zero(1), [&](double t, const Vec&) { ++calls; return Vec::Constant(1, t); },
                          {}, 0.01, 1.0, opt);
  EXPECT_EQ(calls, 10);
  EXPECT_EQ(tr.u[15][0], tr.u[10][0]);
}

TEST(Disturbance, ZeroKind) {
  DisturbanceSpec s;
  EXPECT_EQ(sample_disturbance(s, 4, 1.3), Vec::Zero(4));
}

TEST(Disturbance, BoundHeldExactlyAndPiecewiseConstant) {
  DisturbanceSpec s;
  s.kind = DisturbanceKind::kPiecewiseRandom;
  s.magnitude = 0.4;
  s.hold_interval = 0.1;
  s.seed = 5;
  for (int k = 0; k < 5000; ++k) {
    const double t = k * 1e-3;
    const Vec d = sample_disturbance(s, 4, t);
    EXPECT_LE(d.norm(), 0.4);
    const double start = std::floor(t / 0.1 + 1e-9) * 0.1;
    EXPECT_EQ(d, sample_disturbance(s, 4, start));
  }
  EXPECT_NE(sample_disturbance(s, 4, 0.05), sample_disturbance(s, 4, 0.15));
}

TEST(Disturbance, DeterministicGivenSeedAndTime) {
  DisturbanceSpec s;
  s.kind = DisturbanceKind::kConstantRandomDirection;
  s.magnitude = 0.75;
  s.seed = 9;
  EXPECT_EQ(sample_disturbance(s, 4, 0.0), sample_disturbance(s, 4, 7.3));
  DisturbanceSpec other = s;
  other.seed = 10;
  EXPECT_NE(sample_disturbance(s, 4, 0.0), sample_disturbance(other, 4, 0.0));
}
