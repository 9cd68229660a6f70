#include "lagros/sdp.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <optional>

namespace lagros {

Mat LmiBlock::eval(const Vec& y) const {
  Mat S = F0;
  for (const auto& [i, Fi] : terms) S += y[i] * Fi;
  return S;
}

void LmiProblem::validate() const {
  if (num_vars <= 0) throw DomainError("LmiProblem: no variables");
  if (c.size() != num_vars) throw DomainError("LmiProblem: objective size mismatch");
  if (lower.size() && lower.size() != num_vars) throw DomainError("LmiProblem: lower bound size");
  if (upper.size() && upper.size() != num_vars) throw DomainError("LmiProblem: upper bound size");
  for (const auto& b : blocks) {
    if (b.F0.rows() != b.F0.cols()) throw DomainError("LmiProblem: non-square block");
    if (!b.F0.isApprox(b.F0.transpose(), 1e-12)) throw DomainError("LmiProblem: asymmetric F0");
    for (const auto& [i, Fi] : b.terms) {
      if (i < 0 || i >= num_vars) throw DomainError("LmiProblem: variable index out of range");
      if (Fi.rows() != b.dim() || Fi.cols() != b.dim()) throw DomainError("LmiProblem: block dimension mismatch");
      if (!Fi.isApprox(Fi.transpose(), 1e-12) && Fi.norm() > 0) throw DomainError("LmiProblem: asymmetric Fi");
    }
  }
}

const char* to_string(SdpStatus s) {
  switch (s) {
    case SdpStatus::kOptimal: return "optimal";
    case SdpStatus::kInfeasible: return "infeasible";
    case SdpStatus::kMaxIterations: return "max-iterations";
  }
  return "?";
}

namespace {

std::vector<LmiBlock> with_box(const LmiProblem& p) {
  std::vector<LmiBlock> out = p.blocks;
  auto scalar_block = [](double f0, int i, double coef) {
    LmiBlock b;
    b.F0 = Mat::Constant(1, 1, f0);
    b.terms.push_back({i, Mat::Constant(1, 1, coef)});
    return b;
  };
  for (int i = 0; i < p.num_vars; ++i) {
    if (p.lower.size() && std::isfinite(p.lower[i])) out.push_back(scalar_block(-p.lower[i], i, 1.0));
    if (p.upper.size() && std::isfinite(p.upper[i])) out.push_back(scalar_block(p.upper[i], i, -1.0));
  }
  return out;
}

double min_eig(const Mat& S) {
  if (S.rows() == 1) return S(0, 0);
  Eigen::SelfAdjointEigenSolver<Mat> es(S, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

// Largest a in (0, inf] with X + a dX PSD, given X positive definite.
double max_step(const Mat& X, const Mat& dX) {
  if (X.rows() == 1) return dX(0, 0) < 0 ? -X(0, 0) / dX(0, 0) : std::numeric_limits<double>::infinity();
  Eigen::LLT<Mat> llt(X);
  Mat S = llt.matrixL().solve(dX);
  S = llt.matrixL().solve(S.transpose()).transpose();
  const double lmin = min_eig(0.5 * (S + S.transpose()));
  return lmin < 0 ? -1.0 / lmin : std::numeric_limits<double>::infinity();
}

double inner(const Mat& A, const Mat& B) { return A.cwiseProduct(B).sum(); }

struct IpmResult {
  Vec y;
  SdpStatus status = SdpStatus::kMaxIterations;
  int iterations = 0;
  double gap = 0.0;
  bool diverged = false;
};

// Infeasible-start primal-dual path following with the HKM direction and a
// Mehrotra predictor-corrector. Works on: min c'y s.t. Z_b = F0_b + sum y_i F_ib >= 0.
IpmResult ipm(const std::vector<LmiBlock>& blocks, const Vec& c, int nv, const SdpOptions& opt) {
  const int nb = static_cast<int>(blocks.size());
  std::vector<Mat> X(nb), Z(nb), Zinv(nb), dX(nb), dZ(nb), dXa(nb), dZa(nb), Rd(nb);
  Vec y = Vec::Zero(nv);
  int N = 0;
  double f0_norm = 0.0;
  for (int b = 0; b < nb; ++b) {
    const auto& blk = blocks[b];
    const int d = blk.dim();
    N += d;
    f0_norm = std::max(f0_norm, blk.F0.norm());
    double xi = std::max(10.0, std::sqrt(double(d))), eta = std::max(10.0, std::sqrt(double(d)));
    eta = std::max(eta, blk.F0.norm());
    for (const auto& [i, Fi] : blk.terms) {
      const double fn = Fi.norm();
      xi = std::max(xi, (1.0 + std::abs(c[i])) / (1.0 + fn));
      eta = std::max(eta, fn);
    }
    X[b] = xi * Mat::Identity(d, d);
    Z[b] = eta * Mat::Identity(d, d);
  }
  const double c_norm = c.norm();
  double x0_trace = 0.0;
  for (int b = 0; b < nb; ++b) x0_trace += X[b].trace();

  IpmResult res;
  std::optional<IpmResult> accepted;
  int stall = 0;
  for (int it = 0; it < opt.max_iter; ++it) {
    res.iterations = it;
    // residuals and measures
    Vec rp = c;
    double rd_norm2 = 0.0, gap = 0.0, pobj = 0.0, x_trace = 0.0;
    for (int b = 0; b < nb; ++b) {
      const auto& blk = blocks[b];
      for (const auto& [i, Fi] : blk.terms) rp[i] -= inner(Fi, X[b]);
      Rd[b] = blk.eval(y) - Z[b];
      rd_norm2 += Rd[b].squaredNorm();
      gap += inner(X[b], Z[b]);
      pobj -= inner(blk.F0, X[b]);
      x_trace += X[b].trace();
    }
    const double dobj = c.dot(y);
    const double mu = gap / N;
    const double relgap = gap / (1.0 + std::abs(pobj) + std::abs(dobj));
    const double pinf = rp.norm() / (1.0 + c_norm);
    const double dinf = std::sqrt(rd_norm2) / (1.0 + f0_norm);
    res.y = y;
    res.gap = relgap;
    if (std::getenv("LAGROS_SDP_TRACE"))
      std::fprintf(stderr, "it %d relgap %.3e pinf %.3e dinf %.3e mu %.3e dobj %.6g xtr %.3e\n", it, relgap, pinf, dinf, mu, dobj, x_trace);
    if (relgap <= opt.gap_tol && pinf <= opt.feas_tol && dinf <= opt.feas_tol) {
      double viol = std::numeric_limits<double>::infinity();
      for (int b = 0; b < nb; ++b) viol = std::min(viol, min_eig(blocks[b].eval(y)));
      if (viol >= -opt.feas_tol) {
        // keep polishing a little: iterations are cheap and converge superlinearly
        res.status = SdpStatus::kOptimal;
        if (!accepted || relgap < accepted->gap) {
          accepted = res;
          stall = 0;
        } else if (++stall >= 3) {
          return *accepted;
        }
        if (relgap <= 1e-2 * opt.gap_tol) return res;
        res.status = SdpStatus::kMaxIterations;
      } else if (accepted) {
        return *accepted;
      }
    } else if (accepted) {
      return *accepted;
    }
    if (x_trace > 1e12 * x0_trace || y.norm() > 1e14) {
      if (accepted) return *accepted;
      res.diverged = true;
      return res;
    }

    for (int b = 0; b < nb; ++b) {
      Eigen::LLT<Mat> llt(Z[b]);
      Zinv[b] = llt.solve(Mat::Identity(Z[b].rows(), Z[b].cols()));
      Zinv[b] = 0.5 * (Zinv[b] + Zinv[b].transpose());
    }
    // Schur complement M_ij = sum_b <F_i, X F_j Z^-1>
    Mat M = Mat::Zero(nv, nv);
    for (int b = 0; b < nb; ++b) {
      const auto& blk = blocks[b];
      for (const auto& [j, Fj] : blk.terms) {
        const Mat G = X[b] * Fj * Zinv[b];
        for (const auto& [i, Fi] : blk.terms) M(i, j) += inner(Fi, G);
      }
    }
    M = 0.5 * (M + M.transpose());
    Eigen::LLT<Mat> schur(M);
    Eigen::LDLT<Mat> schur_ldlt;
    const bool use_llt = schur.info() == Eigen::Success;
    if (!use_llt) {
      M.diagonal().array() += 1e-12 * (1.0 + M.diagonal().cwiseAbs().maxCoeff());
      schur_ldlt.compute(M);
    }

    auto direction = [&](double sigma, const std::vector<Mat>* corr, std::vector<Mat>& dXo,
                         std::vector<Mat>& dZo, Vec& dy) {
      Vec rhs = -rp;
      std::vector<Mat> T(nb);
      for (int b = 0; b < nb; ++b) {
        T[b] = sigma * mu * Zinv[b] - X[b] * Rd[b] * Zinv[b];
        if (corr) T[b] -= (*corr)[b];
        const Mat Tx = T[b] - X[b];
        for (const auto& [i, Fi] : blocks[b].terms) rhs[i] += inner(Fi, Tx);
      }
      auto schur_solve = [&](const Vec& r) { return use_llt ? Vec(schur.solve(r)) : Vec(schur_ldlt.solve(r)); };
      dy = schur_solve(rhs);
      for (int pass = 0; pass < 2; ++pass) dy += schur_solve(rhs - M * dy);
      for (int b = 0; b < nb; ++b) {
        dZo[b] = Rd[b];
        for (const auto& [i, Fi] : blocks[b].terms) dZo[b] += dy[i] * Fi;
        Mat dx = T[b] + X[b] * Rd[b] * Zinv[b] - X[b] - X[b] * dZo[b] * Zinv[b];
        dXo[b] = 0.5 * (dx + dx.transpose());
      }
    };
    auto steps = [&](const std::vector<Mat>& dXo, const std::vector<Mat>& dZo) {
      double ap = std::numeric_limits<double>::infinity(), ad = ap;
      for (int b = 0; b < nb; ++b) {
        ap = std::min(ap, max_step(X[b], dXo[b]));
        ad = std::min(ad, max_step(Z[b], dZo[b]));
      }
      return std::pair<double, double>(ap, ad);
    };

    Vec dya, dy;
    direction(0.0, nullptr, dXa, dZa, dya);
    auto [apa, ada] = steps(dXa, dZa);
    apa = std::min(1.0, apa);
    ada = std::min(1.0, ada);
    double mu_aff = 0.0;
    for (int b = 0; b < nb; ++b) mu_aff += inner(X[b] + apa * dXa[b], Z[b] + ada * dZa[b]);
    mu_aff /= N;
    const double sigma = std::min(1.0, std::pow(std::max(mu_aff, 0.0) / mu, 3));
    std::vector<Mat> corr(nb);
    for (int b = 0; b < nb; ++b) corr[b] = dXa[b] * dZa[b] * Zinv[b];
    direction(sigma, &corr, dX, dZ, dy);
    auto [ap, ad] = steps(dX, dZ);
    const double gamma = 0.95;
    ap = std::min(1.0, gamma * ap);
    ad = std::min(1.0, gamma * ad);
    for (int b = 0; b < nb; ++b) {
      X[b] += ap * dX[b];
      Z[b] += ad * dZ[b];
      X[b] = 0.5 * (X[b] + X[b].transpose());
      Z[b] = 0.5 * (Z[b] + Z[b].transpose());
    }
    y += ad * dy;
  }
  if (accepted) return *accepted;
  res.iterations = opt.max_iter;
  return res;
}

}  // namespace

double check_feasible(const LmiProblem& problem, const Vec& y) {
  double v = std::numeric_limits<double>::infinity();
  for (const auto& b : with_box(problem)) v = std::min(v, min_eig(b.eval(y)));
  return v;
}

SdpSolution solve(const LmiProblem& problem, const SdpOptions& opt) {
  problem.validate();
  const auto blocks = with_box(problem);
  const int nv = problem.num_vars;
  SdpSolution sol;
  IpmResult r = ipm(blocks, problem.c, nv, opt);
  sol.iterations = r.iterations;
  sol.y = r.y;
  sol.gap = r.gap;
  sol.status = r.status;
  if (r.status != SdpStatus::kOptimal) {
    // phase I: min t s.t. F(y) + t I >= 0, |y| <= big_m, t >= -1
    std::vector<LmiBlock> p1;
    for (const auto& b : blocks) {
      LmiBlock nb = b;
      nb.terms.push_back({nv, Mat::Identity(b.dim(), b.dim())});
      p1.push_back(std::move(nb));
    }
    auto scalar_block = [](double f0, int i, double coef) {
      LmiBlock b;
      b.F0 = Mat::Constant(1, 1, f0);
      b.terms.push_back({i, Mat::Constant(1, 1, coef)});
      return b;
    };
    for (int i = 0; i < nv; ++i) {
      p1.push_back(scalar_block(opt.big_m, i, 1.0));
      p1.push_back(scalar_block(opt.big_m, i, -1.0));
    }
    p1.push_back(scalar_block(1.0, nv, 1.0));
    Vec c1 = Vec::Zero(nv + 1);
    c1[nv] = 1.0;
    IpmResult r1 = ipm(p1, c1, nv + 1, opt);
    sol.iterations += r1.iterations;
    if (r1.status == SdpStatus::kOptimal && r1.y[nv] > opt.feas_tol) {
      sol.status = SdpStatus::kInfeasible;
      sol.y = r1.y.head(nv);
    } else {
      sol.status = SdpStatus::kMaxIterations;
    }
  }
  sol.objective = problem.c.dot(sol.y);
  sol.violation = check_feasible(problem, sol.y);
  return sol;
}

}  // namespace lagros
