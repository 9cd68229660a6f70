#pragma once

#include "lagros/cvstem.hpp"
#include "lagros/dynamics.hpp"

#include <limits>

namespace lagros {

struct TubeProfile {
  double R0 = 0.0;
  double omega_lo = 1.0, omega_hi = 1.0;
  double alpha = 1.0;
  double b_bar = 0.0, eps_ell = 0.0, d_bar = 0.0;

  void validate() const;
  double d_eps() const { return b_bar * eps_ell + d_bar; }
  double steady_state() const;
};

// R0 sqrt(w_hi) e^{-a t} + (b eps + d)/a sqrt(w_hi/w_lo) (1 - e^{-a t})
double r_ell(const TubeProfile& p, double t);

TubeProfile profile_from_metric(const MetricTable& table, double b_bar, double eps_ell,
                                double d_bar, double R0 = 0.0);

// Profile whose steady-state radius is r_inf for the given (b eps + d) and alpha;
// encodes a published tube such as 3.15 (1 - e^{-0.6 t}) through chi = w_hi / w_lo.
TubeProfile profile_with_limit(double r_inf, double alpha, double b_bar, double eps_ell,
                               double d_bar);

// sqrt(e0' M e0): straight-chord geodesic energy at t = 0
double initial_energy(const MetricTable& table, const Vec& x0, const Vec& xd0, const Vec& ud0);

struct NaiveBoundParams {
  double e0 = 0.0, L = 1.0, b_bar = 0.0, eps_ell = 0.0, d_bar = 0.0;
};

// e0 e^{L t} + (b eps + d)/L (e^{L t} - 1)
double naive_bound(const NaiveBoundParams& p, double t);

struct TubeReport {
  double max_violation = -std::numeric_limits<double>::infinity();
  double argmax_t = 0.0;
  double inside_fraction = 1.0;
  double first_exit_time = std::numeric_limits<double>::quiet_NaN();  // NaN: never left
  bool inside() const { return max_violation <= 0.0; }
};

using NominalFn = std::function<Vec(double t)>;

// Violation = max_t (||x - x_d|| - r_ell(t)); with agents > 1 the error is the
// largest per-agent block error.
TubeReport verify_tube(const Trajectory& tr, const NominalFn& xd, const TubeProfile& profile,
                       int agents = 1);

using PolicyFn = std::function<Vec(const Vec& x, double t)>;

// Largest sampled ratio ||g(x1) - g(x2)|| / ||x1 - x2|| of g = f + B u_d(x, t)
// over local pairs in the box, times `inflate`.
double estimate_lipschitz(const SystemModel& model, const PolicyFn& ud, const Vec& lo, const Vec& hi,
                          int samples, std::uint64_t seed, double inflate = 1.2, double t = 0.0);

void write_bound_csv(const std::string& path, const TubeProfile& tube, const NaiveBoundParams& naive,
                     double T, int points);

}  // namespace lagros
