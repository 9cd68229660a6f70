#pragma once

#include "lagros/common.hpp"

#include <Eigen/SparseCore>

namespace lagros {

using SpMat = Eigen::SparseMatrix<double>;

// min 1/2 z'Pz + q'z  s.t.  Az = b,  Gz <= h.  P symmetric PSD (full storage).
struct QpProblem {
  SpMat P, A, G;
  Vec q, b, h;
  int num_vars() const { return static_cast<int>(q.size()); }
  void validate() const;
};

enum class QpStatus { kOptimal, kInfeasible, kMaxIterations };

struct QpOptions {
  double tol = 1e-9;
  int max_iter = 80;
  double reg = 1e-10;  // quasi-definite regularization, removed by refinement
};

struct QpSolution {
  Vec z, y, lambda;  // primal, equality duals, inequality duals
  double objective = 0.0;
  QpStatus status = QpStatus::kMaxIterations;
  int iterations = 0;
  double primal_residual = 0.0, dual_residual = 0.0, gap = 0.0;
};

// Mehrotra predictor-corrector interior point on the reduced quasi-definite
// KKT system, factorized with a sparse LDL'.
QpSolution solve_qp(const QpProblem& p, const QpOptions& opt = {});

const char* to_string(QpStatus s);

}  // namespace lagros
