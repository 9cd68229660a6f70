#include "lagros/bounds.hpp"

#include <cmath>
#include <fstream>

namespace lagros {

void TubeProfile::validate() const {
  if (!(alpha > 0)) throw DomainError("tube profile: alpha must be positive");
  if (!(omega_lo > 0) || omega_hi < omega_lo) throw DomainError("tube profile: need omega_hi >= omega_lo > 0");
  if (R0 < 0 || b_bar < 0 || eps_ell < 0 || d_bar < 0) throw DomainError("tube profile: negative parameter");
}

double TubeProfile::steady_state() const { return d_eps() / alpha * std::sqrt(omega_hi / omega_lo); }

double r_ell(const TubeProfile& p, double t) {
  const double decay = std::exp(-p.alpha * t);
  return p.R0 * std::sqrt(p.omega_hi) * decay +
         p.d_eps() / p.alpha * std::sqrt(p.omega_hi / p.omega_lo) * (1.0 - decay);
}

TubeProfile profile_from_metric(const MetricTable& table, double b_bar, double eps_ell, double d_bar,
                                double R0) {
  TubeProfile p;
  p.R0 = R0;
  p.omega_lo = table.omega_lo();
  p.omega_hi = table.omega_hi();
  p.alpha = table.alpha;
  p.b_bar = b_bar;
  p.eps_ell = eps_ell;
  p.d_bar = d_bar;
  p.validate();
  return p;
}

TubeProfile profile_with_limit(double r_inf, double alpha, double b_bar, double eps_ell, double d_bar) {
  TubeProfile p;
  p.alpha = alpha;
  p.b_bar = b_bar;
  p.eps_ell = eps_ell;
  p.d_bar = d_bar;
  const double de = p.d_eps();
  if (de <= 0.0) {
    if (r_inf != 0.0) throw DomainError("profile_with_limit: nonzero radius needs b eps + d > 0");
    p.validate();
    return p;
  }
  const double ratio = r_inf * alpha / de;  // sqrt(omega_hi / omega_lo)
  if (ratio < 1.0)
    throw DomainError("profile_with_limit: radius " + fmt_double(r_inf) +
                      " is below (b eps + d)/alpha; lower the disturbance or raise the radius");
  p.omega_lo = 1.0;
  p.omega_hi = ratio * ratio;
  p.validate();
  return p;
}

double initial_energy(const MetricTable& table, const Vec& x0, const Vec& xd0, const Vec& ud0) {
  const Vec e = x0 - xd0;
  if (e.squaredNorm() == 0.0) return 0.0;
  return std::sqrt(e.dot(table.eval_M(x0, xd0, ud0, 0.0).M * e));
}

double naive_bound(const NaiveBoundParams& p, double t) {
  const double g = std::exp(p.L * t);
  return p.e0 * g + (p.b_bar * p.eps_ell + p.d_bar) / p.L * (g - 1.0);
}

TubeReport verify_tube(const Trajectory& tr, const NominalFn& xd, const TubeProfile& profile, int agents) {
  TubeReport rep;
  std::size_t inside = 0;
  for (std::size_t k = 0; k < tr.size(); ++k) {
    const double t = tr.t[k];
    const Vec e = tr.x[k] - xd(t);
    double err = 0.0;
    const int block = static_cast<int>(e.size()) / agents;
    for (int i = 0; i < agents; ++i) err = std::max(err, e.segment(i * block, block).norm());
    const double v = err - r_ell(profile, t);
    if (v > rep.max_violation) {
      rep.max_violation = v;
      rep.argmax_t = t;
    }
    if (v <= 0.0)
      ++inside;
    else if (std::isnan(rep.first_exit_time))
      rep.first_exit_time = t;
  }
  rep.inside_fraction = tr.size() ? double(inside) / tr.size() : 1.0;
  return rep;
}

double estimate_lipschitz(const SystemModel& model, const PolicyFn& ud, const Vec& lo, const Vec& hi,
                          int samples, std::uint64_t seed, double inflate, double t) {
  auto rng = make_rng(seed, 0, 0x11f);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const int n = model.n;
  const double scale = (hi - lo).norm();
  auto g = [&](const Vec& x) { return model.eval(x, ud(x, t), t); };
  double best = 0.0;
  for (int s = 0; s < samples; ++s) {
    Vec x1(n);
    for (int i = 0; i < n; ++i) x1[i] = lo[i] + (hi[i] - lo[i]) * u01(rng);
    Vec dir = gaussian_vec(n, rng);
    const Vec x2 = x1 + 1e-3 * scale * dir / dir.norm();
    best = std::max(best, (g(x1) - g(x2)).norm() / (x1 - x2).norm());
  }
  return best * inflate;
}

void write_bound_csv(const std::string& path, const TubeProfile& tube, const NaiveBoundParams& naive,
                     double T, int points) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << "t,r_ell,naive_bound\n";
  for (int k = 0; k <= points; ++k) {
    const double t = T * k / points;
    out << fmt_double(t) << "," << fmt_double(r_ell(tube, t)) << "," << fmt_double(naive_bound(naive, t)) << "\n";
  }
}

}  // namespace lagros
