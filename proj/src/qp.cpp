#include "lagros/qp.hpp"

#include <Eigen/SparseCholesky>

#include <cmath>
#include <limits>
#include <cstdio>
#include <cstdlib>
#include <vector>

namespace lagros {

void QpProblem::validate() const {
  const int n = num_vars();
  if (n <= 0) throw DomainError("QpProblem: no variables");
  if (P.rows() != n || P.cols() != n) throw DomainError("QpProblem: P has wrong shape");
  if (A.cols() != n || A.rows() != b.size()) throw DomainError("QpProblem: A/b shape mismatch");
  if (G.cols() != n || G.rows() != h.size()) throw DomainError("QpProblem: G/h shape mismatch");
  require_finite(q, "QpProblem q");
  require_finite(b, "QpProblem b");
  require_finite(h, "QpProblem h");
}

const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::kOptimal: return "optimal";
    case QpStatus::kInfeasible: return "infeasible";
    case QpStatus::kMaxIterations: return "max-iterations";
  }
  return "?";
}

namespace {

// Reduced system  [P + G'WG + reg I   A'     ] [dz]   [r1]
//                 [A                 -reg I  ] [dy] = [r2]
// with W = diag(lambda / s).
class Kkt {
 public:
  Kkt(const QpProblem& p, double reg) : p_(p), reg_(reg), n_(p.num_vars()), me_(p.A.rows()) {}

  bool factor(const Vec& w) {
    w_ = w;
    std::vector<Eigen::Triplet<double>> trip;
    SpMat GtWG = p_.G.transpose() * w.asDiagonal() * p_.G;
    auto add = [&](const SpMat& S, int r0, int c0, double s) {
      for (int k = 0; k < S.outerSize(); ++k)
        for (SpMat::InnerIterator it(S, k); it; ++it) trip.emplace_back(r0 + it.row(), c0 + it.col(), s * it.value());
    };
    trip.reserve(p_.P.nonZeros() + GtWG.nonZeros() + 2 * p_.A.nonZeros() + n_ + me_);
    add(p_.P, 0, 0, 1.0);
    add(GtWG, 0, 0, 1.0);
    add(p_.A, n_, 0, 1.0);
    add(SpMat(p_.A.transpose()), 0, n_, 1.0);
    for (int i = 0; i < n_; ++i) trip.emplace_back(i, i, reg_);
    for (int i = 0; i < me_; ++i) trip.emplace_back(n_ + i, n_ + i, -reg_);
    K_.resize(n_ + me_, n_ + me_);
    K_.setFromTriplets(trip.begin(), trip.end());
    if (!analyzed_) {
      ldlt_.analyzePattern(K_);
      analyzed_ = true;
    }
    // a zero pivot means the regularization was swamped by a rank-deficient
    // block; raise it (refinement still targets the exact system)
    const double dmax = 1.0 + K_.diagonal().cwiseAbs().maxCoeff();
    for (double bump = 0.0; bump <= 1e-6; bump = bump == 0.0 ? 1e-14 : bump * 100.0) {
      if (bump > 0.0)
        for (int i = 0; i < n_ + me_; ++i) K_.coeffRef(i, i) += (i < n_ ? bump : -bump) * dmax;
      ldlt_.factorize(K_);
      if (ldlt_.info() == Eigen::Success) return true;
    }
    return false;
  }

  // Solves the unregularized system with iterative refinement.
  void solve(const Vec& r1, const Vec& r2, Vec& dz, Vec& dy) const {
    Vec rhs(n_ + me_);
    rhs << r1, r2;
    Vec sol = ldlt_.solve(rhs);
    for (int pass = 0; pass < 2; ++pass) {
      const Vec res = rhs - apply(sol);
      if (res.lpNorm<Eigen::Infinity>() <= 1e-12 * (1.0 + rhs.lpNorm<Eigen::Infinity>())) break;
      sol += ldlt_.solve(res);
    }
    dz = sol.head(n_);
    dy = sol.tail(me_);
  }

 private:
  Vec apply(const Vec& v) const {
    const Vec z = v.head(n_), y = v.tail(me_);
    Vec out(n_ + me_);
    out.head(n_) = p_.P * z + p_.G.transpose() * (w_.asDiagonal() * (p_.G * z)) + p_.A.transpose() * y;
    out.tail(me_) = p_.A * z;
    return out;
  }

  const QpProblem& p_;
  double reg_;
  int n_, me_;
  SpMat K_;
  Vec w_;
  bool analyzed_ = false;
  Eigen::SimplicialLDLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt_;
};

double step_to_boundary(const Vec& v, const Vec& dv) {
  double a = 1.0;
  for (int i = 0; i < v.size(); ++i)
    if (dv[i] < 0) a = std::min(a, -v[i] / dv[i]);
  return a;
}

}  // namespace

QpSolution solve_qp(const QpProblem& p, const QpOptions& opt) {
  p.validate();
  const int n = p.num_vars();
  const int mi = static_cast<int>(p.G.rows());
  QpSolution sol;
  Vec z = Vec::Zero(n), y = Vec::Zero(p.A.rows());
  Vec s = Vec::Ones(mi), lam = Vec::Ones(mi);

  Kkt kkt(p, opt.reg);
  static const bool trace = std::getenv("LAGROS_QP_TRACE") != nullptr;
  {
    // start from  [P + G'G  A'; A 0] [z; y] = [-q + G'h; b]; the residual
    // G z - h splits into slack and multiplier, both shifted to be positive
    if (!kkt.factor(Vec::Ones(mi))) throw Error("QP: KKT factorization failed");
    kkt.solve(-p.q + p.G.transpose() * p.h, p.b, z, y);
    if (mi > 0) {
      const Vec r = p.G * z - p.h;
      s = -r;
      lam = r;
      const double as = -s.minCoeff(), al = -lam.minCoeff();
      if (as >= 0) s.array() += 1.0 + as;
      if (al >= 0) lam.array() += 1.0 + al;
    }
  }

  auto inf = [](const Vec& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; };
  const double scale_q0 = 1.0 + inf(p.q);
  const double scale_b0 = 1.0 + std::max(inf(p.b), inf(p.h));
  double best_res = std::numeric_limits<double>::infinity();
  int stall = 0;
  // best iterate by max(pr, dr, gr); late iterations can lose accuracy once
  // lambda ./ s spans many decades, so fall back to it if they do
  double best_merit = std::numeric_limits<double>::infinity(), best_prdr = best_merit, best_gr = best_merit;
  Vec bz, by, bs, bl;
  for (int it = 0; it < opt.max_iter; ++it) {
    sol.iterations = it;
    const Vec rd = p.P * z + p.q + p.A.transpose() * y + p.G.transpose() * lam;
    const Vec re = p.A * z - p.b;
    const Vec ri = p.G * z + s - p.h;
    const double mu = mi ? s.dot(lam) / mi : 0.0;
    const double pres = std::max(re.size() ? re.lpNorm<Eigen::Infinity>() : 0.0,
                                 mi ? ri.lpNorm<Eigen::Infinity>() : 0.0);
    const double dres = rd.lpNorm<Eigen::Infinity>();
    const double obj = 0.5 * z.dot(p.P * z) + p.q.dot(z);
    sol.primal_residual = pres;
    sol.dual_residual = dres;
    sol.gap = mi ? s.dot(lam) : 0.0;
    if (trace) std::fprintf(stderr, "qp %3d obj %.12g pres %.3g dres %.3g mu %.3g\n", it, obj, pres, dres, mu);
    // residuals relative to the size of the terms that make them up
    const Vec Pz = p.P * z;
    const double scale_q = std::max({scale_q0, inf(Pz), inf(p.A.transpose() * y), inf(p.G.transpose() * lam)});
    const double scale_b = std::max({scale_b0, inf(p.A * z), inf(p.G * z)});
    const double pr = pres / scale_b, dr = dres / scale_q, gr = sol.gap / (1.0 + std::abs(obj));
    const double merit = std::max({pr, dr, gr});
    if (merit < best_merit) {
      best_merit = merit;
      best_prdr = std::max(pr, dr);
      best_gr = gr;
      bz = z, by = y, bs = s, bl = lam;
    } else if (std::max(pr, dr) > 1e4 * std::max(best_res, opt.tol)) {
      break;  // diverging: restore the best iterate below
    }
    if (pr <= opt.tol && dr <= opt.tol && gr <= opt.tol) {
      sol.status = QpStatus::kOptimal;
      break;
    }
    // once complementarity is exhausted, stop when the residuals no longer improve
    const double res = std::max(pr, dr);
    if (res < 0.5 * best_res) {
      best_res = res;
      stall = 0;
    } else if (++stall >= 5 && gr <= opt.tol) {
      if (res <= std::sqrt(opt.tol) * 1e-2) sol.status = QpStatus::kOptimal;
      break;
    }
    // infeasibility certificate: lambda large with G'lambda + A'y ~ 0, h'lambda + b'y < 0
    if (mi && lam.lpNorm<Eigen::Infinity>() > 1e10) {
      const double nrm = lam.lpNorm<Eigen::Infinity>();
      const Vec ry = (p.G.transpose() * lam + p.A.transpose() * y) / nrm;
      const double c = (p.h.dot(lam) + p.b.dot(y)) / nrm;
      if (ry.lpNorm<Eigen::Infinity>() < 1e-6 && c < -1e-8) {
        sol.status = QpStatus::kInfeasible;
        break;
      }
    }

    const Vec w = lam.cwiseQuotient(s);
    if (!kkt.factor(w)) throw Error("QP: KKT factorization failed");
    // step for complementarity target S lam = sigma mu - ds dlam
    auto direction = [&](const Vec& rsl, Vec& dz, Vec& dy, Vec& ds, Vec& dl) {
      // dl = (lam .* (ri + G dz) - rsl) ./ s ;  ds = -ri - G dz
      const Vec t = (lam.cwiseProduct(ri) - rsl).cwiseQuotient(s);
      kkt.solve(-rd - p.G.transpose() * t, -re, dz, dy);
      const Vec Gdz = p.G * dz;
      ds = -ri - Gdz;
      dl = (lam.cwiseProduct(ri + Gdz) - rsl).cwiseQuotient(s);
    };
    Vec dz, dy, ds, dl;
    direction(s.cwiseProduct(lam), dz, dy, ds, dl);
    double a_aff = mi ? std::min(step_to_boundary(s, ds), step_to_boundary(lam, dl)) : 1.0;
    if (mi) {
      const double mu_aff = (s + a_aff * ds).dot(lam + a_aff * dl) / mi;
      const double sigma = std::pow(mu_aff / mu, 3);
      const Vec rsl = s.cwiseProduct(lam) + ds.cwiseProduct(dl) - Vec::Constant(mi, sigma * mu);
      direction(rsl, dz, dy, ds, dl);
    }
    const double a = mi ? std::min(1.0, 0.99 * std::min(step_to_boundary(s, ds), step_to_boundary(lam, dl))) : 1.0;
    z += a * dz;
    y += a * dy;
    s += a * ds;
    lam += a * dl;
    sol.iterations = it + 1;
  }
  if (sol.status == QpStatus::kMaxIterations && best_merit < std::numeric_limits<double>::infinity()) {
    z = bz, y = by, s = bs, lam = bl;
    // accept a slightly inexact optimum: residuals tight, gap loose
    if (best_prdr <= 10.0 * opt.tol && best_gr <= std::sqrt(opt.tol)) sol.status = QpStatus::kOptimal;
    sol.primal_residual = std::max(p.A.rows() ? (p.A * z - p.b).lpNorm<Eigen::Infinity>() : 0.0,
                                   mi ? (p.G * z + s - p.h).lpNorm<Eigen::Infinity>() : 0.0);
    sol.dual_residual = (p.P * z + p.q + p.A.transpose() * y + p.G.transpose() * lam).lpNorm<Eigen::Infinity>();
    sol.gap = mi ? s.dot(lam) : 0.0;
  }
  sol.z = z;
  sol.y = y;
  sol.lambda = lam;
  sol.objective = 0.5 * z.dot(p.P * z) + p.q.dot(z);
  return sol;
}

}  // namespace lagros
