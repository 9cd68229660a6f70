#include "lagros/qp.hpp"

#include <gtest/gtest.h>

using namespace lagros;

namespace {

SpMat sparse(const Mat& M) { return M.sparseView(); }

QpProblem make(const Mat& P, const Vec& q, const Mat& A, const Vec& b, const Mat& G, const Vec& h) {
  QpProblem p;
  p.P = sparse(P);
  p.q = q;
  p.A = sparse(A);
  p.b = b;
  p.G = sparse(G);
  p.h = h;
  return p;
}

}  // namespace

TEST(Qp, UnconstrainedMinimum) {
  Mat P(2, 2);
  P << 2, 0.5, 0.5, 1;
  Vec q(2);
  q << -1, 2;
  auto s = solve_qp(make(P, q, Mat(0, 2), Vec(0), Mat(0, 2), Vec(0)));
  ASSERT_EQ(s.status, QpStatus::kOptimal);
  EXPECT_LT((s.z - P.ldlt().solve(-q)).norm(), 1e-9);
}

TEST(Qp, ProjectionOntoHalfspace) {
  // min 1/2||z - c||^2  s.t.  a'z <= beta
  Vec c(3), a(3);
  c << 1, 2, 3;
  a << 1, 1, 1;
  const double beta = 1.0;
  auto s = solve_qp(make(Mat::Identity(3, 3), -c, Mat(0, 3), Vec(0), a.transpose(), Vec::Constant(1, beta)));
  ASSERT_EQ(s.status, QpStatus::kOptimal);
  const Vec expect = c - (a.dot(c) - beta) / a.squaredNorm() * a;
  EXPECT_LT((s.z - expect).norm(), 1e-8);
}

TEST(Qp, RandomProblemsSatisfyKkt) {
  auto rng = make_rng(5);
  for (int k = 0; k < 20; ++k) {
    const int n = 6, me = 2, mi = 8;
    Mat L = Mat::NullaryExpr(n, n, [&] { return std::normal_distribution<double>()(rng); });
    Mat P = L * L.transpose() / n;
    if (k % 3 == 0) P.setZero();  // LP-like: bounded by a box below
    Vec q = gaussian_vec(n, rng);
    Mat A = Mat::NullaryExpr(me, n, [&] { return std::normal_distribution<double>()(rng); });
    Vec z0 = 0.3 * gaussian_vec(n, rng);
    Vec b = A * z0;
    Mat G(mi + 2 * n, n);
    G.topRows(mi) = Mat::NullaryExpr(mi, n, [&] { return std::normal_distribution<double>()(rng); });
    G.middleRows(mi, n) = Mat::Identity(n, n);
    G.bottomRows(n) = -Mat::Identity(n, n);
    Vec h(mi + 2 * n);
    h.head(mi) = G.topRows(mi) * z0 + Vec::Constant(mi, 0.5);
    h.tail(2 * n).setConstant(3.0);
    auto s = solve_qp(make(P, q, A, b, G, h));
    ASSERT_EQ(s.status, QpStatus::kOptimal) << k;
    EXPECT_LT((A * s.z - b).lpNorm<Eigen::Infinity>(), 1e-8);
    EXPECT_LT((G * s.z - h).maxCoeff(), 1e-8);
    EXPECT_GE(s.lambda.minCoeff(), 0.0);
    EXPECT_LT((P * s.z + q + A.transpose() * s.y + G.transpose() * s.lambda).lpNorm<Eigen::Infinity>(), 1e-7);
    EXPECT_LT(std::abs(s.lambda.dot(h - G * s.z)), 1e-7);
  }
}

TEST(Qp, DetectsInfeasibleInequalities) {
  Mat G(2, 1);
  G << 1, -1;
  Vec h(2);
  h << -1, -1;  // z <= -1 and z >= 1
  auto s = solve_qp(make(Mat::Identity(1, 1), Vec::Zero(1), Mat(0, 1), Vec(0), G, h));
  EXPECT_EQ(s.status, QpStatus::kInfeasible);
}
