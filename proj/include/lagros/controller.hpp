#pragma once

#include "lagros/cvstem.hpp"

namespace lagros {

enum class GainMode { kQpOptimal, kFallback, kTargetOnly };

struct GainResult {
  Mat K;       // m x n
  Vec u;       // u_d + K e
  GainMode mode = GainMode::kTargetOnly;
  // slack of the scalar condition  e'(Mdot + 2 sym(M A + M B K))e <= -2 alpha e'M e,
  // divided by e'M e (a decay-rate excess, independent of the metric scale);
  // nonnegative when the condition holds
  double margin = 0.0;
  bool extrapolated = false;
};

struct ControllerOptions {
  double degenerate_tol = 1e-9;  // ||phi_g|| below this switches to the fallback gain
  double fd_step = 1e-4;
};

// Min-norm tracking control: u* = u_d + v with v the smallest correction that
// enforces the scalar contraction condition along e = x - x_d.
GainResult u_star(const SystemModel& model, const MetricTable& table, const Vec& x, const Vec& xd,
                  const Vec& ud, double t, const ControllerOptions& opt = {});

// K = -R^-1 B' M
Mat fallback_gain(const SystemModel& model, const MetricTable& table, const Vec& x, const Vec& xd,
                  const Vec& ud, double t);

// Normalized margin (see GainResult) of an arbitrary gain at the query point.
double contraction_margin(const SystemModel& model, const MetricTable& table, const Vec& x,
                          const Vec& xd, const Vec& ud, double t, const Mat& K,
                          const ControllerOptions& opt = {});

const char* to_string(GainMode m);

}  // namespace lagros
