#pragma once

#include "lagros/common.hpp"

#include <utility>
#include <vector>

namespace lagros {

// F0 + sum_i y_i F_i >= 0 (PSD). Only variables with a nonzero coefficient are listed.
struct LmiBlock {
  Mat F0;
  std::vector<std::pair<int, Mat>> terms;

  int dim() const { return static_cast<int>(F0.rows()); }
  Mat eval(const Vec& y) const;
};

struct LmiProblem {
  int num_vars = 0;
  Vec c;  // minimize c^T y
  std::vector<LmiBlock> blocks;
  // optional box; empty vectors mean unbounded, +-inf entries allowed
  Vec lower, upper;

  void validate() const;
};

enum class SdpStatus { kOptimal, kInfeasible, kMaxIterations };

struct SdpOptions {
  double feas_tol = 1e-7;
  double gap_tol = 1e-6;
  int max_iter = 200;
  double big_m = 1e7;  // phase-I box on the variables
};

struct SdpSolution {
  Vec y;
  double objective = 0.0;
  SdpStatus status = SdpStatus::kMaxIterations;
  double violation = 0.0;  // min over blocks of lambda_min at y
  int iterations = 0;
  double gap = 0.0;
};

SdpSolution solve(const LmiProblem& problem, const SdpOptions& opt = {});

// min over blocks (box bounds included) of the smallest eigenvalue at y
double check_feasible(const LmiProblem& problem, const Vec& y);

const char* to_string(SdpStatus s);

}  // namespace lagros
