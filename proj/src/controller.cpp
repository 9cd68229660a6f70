#include "lagros/controller.hpp"

namespace lagros {

namespace {

struct ScalarCondition {
  Vec e;
  Mat M, B;
  double eMe = 0.0;
  double phi_f = 0.0;  // e'Mdot e + 2 e'M (f(x)+B(x)ud - f(xd)-B(xd)ud) + 2 alpha e'M e
  Vec phi_g;           // 2 B' M e
  bool extrapolated = false;
};

ScalarCondition scalar_condition(const SystemModel& model, const MetricTable& table, const Vec& x,
                                 const Vec& xd, const Vec& ud, double t, const ControllerOptions& opt) {
  require_finite(x, "controller state");
  require_finite(xd, "controller target state");
  require_finite(ud, "controller target input");
  ScalarCondition c;
  c.e = x - xd;
  const MetricEval me = table.eval_M(x, xd, ud, t);
  c.M = me.M;
  c.extrapolated = me.extrapolated;
  c.B = model.B(x, t);
  const Vec fx = model.f(x, t) + c.B * ud;
  const Vec fxd = model.eval(xd, ud, t);
  const Vec Me = c.M * c.e;
  c.eMe = c.e.dot(Me);
  c.phi_f = 2.0 * Me.dot(fx - fxd) + 2.0 * table.alpha * c.eMe;
  if (table.structure != MetricStructure::kShared) {
    FlowContext flow;
    flow.xdot = fx;
    flow.xd_dot = fxd;
    c.phi_f += c.e.dot(eval_Mdot(table, x, xd, ud, t, flow, opt.fd_step) * c.e);
  }
  c.phi_g = 2.0 * c.B.transpose() * Me;
  return c;
}

double normalized_margin(const ScalarCondition& c, const Vec& v) {
  if (c.eMe <= 0.0) return 0.0;
  return -(c.phi_f + c.phi_g.dot(v)) / c.eMe;
}

}  // namespace

const char* to_string(GainMode m) {
  switch (m) {
    case GainMode::kQpOptimal: return "qp-optimal";
    case GainMode::kFallback: return "fallback";
    case GainMode::kTargetOnly: return "target-only";
  }
  return "?";
}

Mat fallback_gain(const SystemModel& model, const MetricTable& table, const Vec& x, const Vec& xd,
                  const Vec& ud, double t) {
  const Mat M = table.eval_M(x, xd, ud, t).M;
  const Mat B = model.B(x, t);
  return -table.R.llt().solve(B.transpose() * M);
}

GainResult u_star(const SystemModel& model, const MetricTable& table, const Vec& x, const Vec& xd,
                  const Vec& ud, double t, const ControllerOptions& opt) {
  GainResult r;
  const int n = model.n, m = model.m;
  if ((x - xd).squaredNorm() == 0.0) {
    require_finite(x, "controller state");
    require_finite(ud, "controller target input");
    r.K = Mat::Zero(m, n);
    r.u = ud;
    r.mode = GainMode::kTargetOnly;
    return r;
  }
  const ScalarCondition c = scalar_condition(model, table, x, xd, ud, t, opt);
  r.extrapolated = c.extrapolated;
  if (c.phi_f <= 0.0) {
    // unforced decay already fast enough: the minimum-norm correction is zero
    r.K = Mat::Zero(m, n);
    r.u = ud;
    r.mode = GainMode::kQpOptimal;
    r.margin = normalized_margin(c, Vec::Zero(m));
    return r;
  }
  const double g2 = c.phi_g.squaredNorm();
  if (std::sqrt(g2) < opt.degenerate_tol) {
    r.K = -table.R.llt().solve(c.B.transpose() * c.M);
    r.mode = GainMode::kFallback;
  } else {
    const Vec v = -c.phi_f / g2 * c.phi_g;
    r.K = v * c.e.transpose() / c.e.squaredNorm();
    r.mode = GainMode::kQpOptimal;
  }
  const Vec v = r.K * c.e;
  r.u = ud + v;
  r.margin = normalized_margin(c, v);
  return r;
}

double contraction_margin(const SystemModel& model, const MetricTable& table, const Vec& x,
                          const Vec& xd, const Vec& ud, double t, const Mat& K,
                          const ControllerOptions& opt) {
  const ScalarCondition c = scalar_condition(model, table, x, xd, ud, t, opt);
  return normalized_margin(c, K * c.e);
}

}  // namespace lagros
