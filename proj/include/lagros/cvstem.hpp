#pragma once

#include "lagros/dynamics.hpp"
#include "lagros/sdp.hpp"

#include <string>
#include <vector>

namespace lagros {

struct GridPoint {
  Vec x, xd, ud;
  double t = 0.0;
};

enum class MetricStructure { kShared, kPerPoint };
enum class Interpolation { kNearest, kInverseDistance };

struct CvstemOptions {
  double alpha = 0.6;
  Mat R;                 // input weight; identity when empty
  double nu_min = 1e-6;
  double nu_max = 1e5;
  double beta = 0.05;    // stands in for -dW/dt in the synthesis LMI
  MetricStructure structure = MetricStructure::kShared;
  Interpolation interpolation = Interpolation::kNearest;
  int blend_neighbors = 4;
  SdpOptions sdp;
};

struct MetricEval {
  Mat M;
  bool extrapolated = false;
};

class MetricTable {
 public:
  double alpha = 0.0, nu = 1.0, chi = 1.0, beta = 0.0;
  Mat R;
  MetricStructure structure = MetricStructure::kShared;
  Interpolation interpolation = Interpolation::kNearest;
  int blend_neighbors = 4;
  std::vector<GridPoint> points;
  std::vector<Mat> W;  // per point, I <= W <= chi I

  double omega_lo() const { return 1.0 / nu; }
  double omega_hi() const { return chi / nu; }
  int n() const { return W.empty() ? 0 : static_cast<int>(W[0].rows()); }

  // builds the lookup box used for the extrapolation flag
  void finalize();

  MetricEval eval_M(const Vec& x, const Vec& xd, const Vec& ud, double t) const;
  Mat eval_W(const Vec& x, const Vec& xd, const Vec& ud, double t, bool* extrapolated = nullptr) const;

  void save(const std::string& path) const;
  static MetricTable load(const std::string& path);

 private:
  Vec key(const Vec& x, const Vec& xd, const Vec& ud, double t) const;
  bool use_time_ = false;
  Vec lo_, hi_;
};

// Single metric M = nu W^-1 in which the scalar system is contracting with the
// given coefficients; handy for tests and for planar agents.
MetricTable constant_metric(const Mat& W, double nu, double chi, double alpha, const Mat& R);

// Minimizes chi subject to the contraction and conditioning LMIs at every grid
// point. Throws InfeasibleError naming the first infeasible point.
MetricTable synthesize(const SystemModel& model, const std::vector<GridPoint>& grid,
                       const CvstemOptions& opt);

// Flow used to differentiate M along closed-loop motion.
struct FlowContext {
  Vec xdot, xd_dot, ud_dot;
  double tdot = 1.0;
};

Mat eval_Mdot(const MetricTable& table, const Vec& x, const Vec& xd, const Vec& ud, double t,
              const FlowContext& flow, double h = 1e-4);

double steady_state_bound(const MetricTable& table, double eps_ell, double d_bar, double b_bar);

struct CertificateReport {
  double min_conditioning_margin = 0.0;  // min over points of lambda_min(W - I), lambda_min(chi I - W)
  double min_contraction_margin = 0.0;   // min over points of -lambda_max(contraction LMI)
  int failing_points = 0;
};

// Independent eigenvalue check of both LMIs at every grid point.
CertificateReport verify_certificate(const SystemModel& model, const MetricTable& table,
                                     double tol = 1e-6);

// Random grid: targets uniform in the box, inputs uniform, states uniform in a
// ball of the given radius around the target.
std::vector<GridPoint> sample_grid(int count, const Vec& xd_lo, const Vec& xd_hi,
                                   const Vec& ud_lo, const Vec& ud_hi, double radius,
                                   std::uint64_t seed);

}  // namespace lagros
