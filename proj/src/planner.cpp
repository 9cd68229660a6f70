#include "lagros/planner.hpp"

#include "lagros/qp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace lagros {

namespace {

Vec parse_vec(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    v.push_back(std::stod(item));
  }
  return Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::string join(const Vec& v) {
  std::string out;
  for (int i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt_double(v[i]);
  return out;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
}

Vec position(const SystemModel& model, const Vec& x, int agent) {
  return x.segment(agent * model.agent_n(), model.position_dim);
}

}  // namespace

void Environment::validate(const SystemModel& model) const {
  if (x0.size() != model.n || xf.size() != model.n) throw DomainError("environment: state dimension mismatch");
  require_finite(x0, "environment x0");
  require_finite(xf, "environment xf");
  for (const auto& o : obstacles) {
    if (o.center.size() != model.position_dim) throw DomainError("environment: obstacle dimension mismatch");
    require_finite(o.center, "obstacle center");
    if (!(o.radius >= 0) || !std::isfinite(o.radius)) throw DomainError("environment: bad obstacle radius");
  }
  if (ws_lo.size() || ws_hi.size()) {
    if (ws_lo.size() != model.position_dim || ws_hi.size() != model.position_dim)
      throw DomainError("environment: workspace dimension mismatch");
    for (int a = 0; a < model.agents; ++a)
      for (const Vec* x : {&x0, &xf}) {
        const Vec p = position(model, *x, a);
        if ((p.array() < ws_lo.array()).any() || (p.array() > ws_hi.array()).any())
          throw DomainError("environment: start or goal outside the workspace");
      }
  }
}

void Environment::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << "# lagros-env v1\n";
  out << "id = " << id << "\nx0 = " << join(x0) << "\nxf = " << join(xf) << "\n";
  if (ws_lo.size()) out << "ws_lo = " << join(ws_lo) << "\nws_hi = " << join(ws_hi) << "\n";
  out << "separation = " << fmt_double(agent_separation) << "\n";
  for (const auto& o : obstacles)
    out << "[obstacle]\ncenter = " << join(o.center) << "\nradius = " << fmt_double(o.radius) << "\n";
}

Environment Environment::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("missing environment file " + path);
  Environment env;
  std::string line;
  bool in_obstacle = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line == "[obstacle]") {
      env.obstacles.emplace_back();
      in_obstacle = true;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string k = trim(line.substr(0, eq)), v = trim(line.substr(eq + 1));
    if (in_obstacle && k == "center") env.obstacles.back().center = parse_vec(v);
    else if (in_obstacle && k == "radius") env.obstacles.back().radius = std::stod(v);
    else if (!in_obstacle && k == "id") env.id = std::stoi(v);
    else if (!in_obstacle && k == "x0") env.x0 = parse_vec(v);
    else if (!in_obstacle && k == "xf") env.xf = parse_vec(v);
    else if (!in_obstacle && k == "ws_lo") env.ws_lo = parse_vec(v);
    else if (!in_obstacle && k == "ws_hi") env.ws_hi = parse_vec(v);
    else if (!in_obstacle && k == "separation") env.agent_separation = std::stod(v);
    else throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown key '" + k + "'");
  }
  return env;
}

ErodedSet erode_by(const Environment& env, double r) {
  ErodedSet s;
  s.obstacles = env.obstacles;
  for (auto& o : s.obstacles) o.radius += r;
  if (env.ws_lo.size()) {
    s.ws_lo = env.ws_lo.array() + r;
    s.ws_hi = env.ws_hi.array() - r;
    if ((s.ws_lo.array() > s.ws_hi.array()).any())
      throw InfeasibleError("eroded workspace is empty (tube radius " + fmt_double(r) + ")");
  }
  s.agent_separation = env.agent_separation > 0 ? env.agent_separation + 2.0 * r : 0.0;
  return s;
}

ErodedSet erode(const Environment& env, const TubeProfile& tube, double t) { return erode_by(env, r_ell(tube, t)); }

double set_margin(const SystemModel& model, const ErodedSet& set, const Vec& x) {
  double m = std::numeric_limits<double>::infinity();
  if (model.position_dim == 0) return m;
  for (int a = 0; a < model.agents; ++a) {
    const Vec p = position(model, x, a);
    for (const auto& o : set.obstacles) m = std::min(m, (p - o.center).norm() - o.radius);
    if (set.ws_lo.size()) m = std::min({m, (p - set.ws_lo).minCoeff(), (set.ws_hi - p).minCoeff()});
    if (set.agent_separation > 0)
      for (int b = a + 1; b < model.agents; ++b)
        m = std::min(m, (p - position(model, x, b)).norm() - set.agent_separation);
  }
  return m;
}

Vec knot_flow(const SystemModel& model, const Vec& x, const Vec& u, double t, double dt, int substeps) {
  const double h = dt / substeps;
  const Vec d = Vec::Zero(model.n);
  Vec y = x;
  for (int s = 0; s < substeps; ++s) y = rk4_step(model, y, u, d, t + s * h, h);
  return y;
}

// ---------------------------------------------------------------------------
// sequential convex programming

namespace {

struct Iterate {
  std::vector<Vec> x, u;
};

class Scp {
 public:
  Scp(const SystemModel& model, const Environment& env, const TubeProfile& tube, const PlannerOptions& opt)
      : model_(model), env_(env), opt_(opt), n_(model.n), m_(model.m), N_(opt.knots), dt_(opt.T / opt.knots) {
    sets_.reserve(N_ + 1);
    for (int k = 0; k <= N_; ++k) sets_.push_back(erode_by(env, opt.erode ? r_ell(tube, opt.t0 + k * dt_) : 0.0));
    hard_end_ = !(opt.terminal_weight > 0);
  }

  double cost(const Iterate& z) const {
    double c = 0.0;
    for (int k = 0; k < N_; ++k) {
      c += opt_.c1 * dt_ * z.u[k].squaredNorm();
      if (opt_.c2 > 0) c += opt_.c2 * dt_ * (z.x[k] - env_.xf).squaredNorm();
    }
    if (!hard_end_) c += opt_.terminal_weight * (z.x[N_] - env_.xf).squaredNorm();
    return c;
  }

  double defect(const Iterate& z, std::vector<Vec>* flows = nullptr) const {
    double worst = 0.0;
    for (int k = 0; k < N_; ++k) {
      const Vec phi = flow(z.x[k], z.u[k], k);
      worst = std::max(worst, (z.x[k + 1] - phi).lpNorm<Eigen::Infinity>());
      if (flows) flows->push_back(phi);
    }
    return worst;
  }

  // sum of constraint violations (l1) and defect l1 norm
  double infeasibility(const Iterate& z) const {
    double s = 0.0;
    for (int k = 0; k < N_; ++k) s += (z.x[k + 1] - flow(z.x[k], z.u[k], k)).lpNorm<1>();
    for (int k = 0; k <= N_; ++k) s += geometric_violation(z.x[k], k);
    return s;
  }

  double merit(const Iterate& z) const { return cost(z) + opt_.penalty * infeasibility(z); }

  double min_margin(const Iterate& z) const {
    double m = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= N_; ++k) m = std::min(m, set_margin(model_, sets_[k], z.x[k]));
    return m;
  }

  struct Outcome {
    Iterate z;
    std::vector<double> merits;
    bool converged = false;
    int rounds = 0;
  };

  Outcome run(Iterate z) const {
    Outcome out;
    double radius = opt_.trust_radius;
    double J = merit(z);
    out.merits.push_back(J);
    for (int round = 0; round < opt_.max_rounds; ++round) {
      out.rounds = round + 1;
      Iterate cand;
      double predicted = 0.0;
      if (!subproblem(z, radius, cand, predicted)) {
        radius *= 0.5;
        if (radius < 1e-9) break;
        continue;
      }
      const double Jc = merit(cand);
      const double pred = J - predicted, act = J - Jc;
      const double scale = 1.0 + std::abs(J);
      if (trace_)
        std::fprintf(stderr, "scp %2d radius %.3g J %.10g pred %.3g act %.3g defect %.3g qp_it %d\n", round, radius, J,
                     pred, act, defect(z), last_qp_iters_);
      if (pred <= opt_.tol * scale) {
        out.converged = infeasibility(z) <= opt_.defect_tol && defect(z) <= opt_.defect_tol;
        break;
      }
      const double rho = act / pred;
      if (rho > 0.0 && act > 0.0) {
        z = std::move(cand);
        J = Jc;
        out.merits.push_back(J);
        if (rho > 0.75) radius = std::min(2.0 * radius, 1e3);
        else if (rho < 0.25) radius *= 0.5;
        if (act <= opt_.tol * scale && defect(z) <= opt_.defect_tol && infeasibility(z) <= opt_.defect_tol) {
          out.converged = true;
          break;
        }
      } else {
        radius *= 0.5;
        if (radius < 1e-9) break;
      }
    }
    if (!out.converged) out.converged = defect(z) <= opt_.defect_tol && infeasibility(z) <= opt_.defect_tol &&
                                        out.merits.size() > 1;
    out.z = std::move(z);
    return out;
  }

  Vec flow(const Vec& x, const Vec& u, int k) const {
    return knot_flow(model_, x, u, opt_.t0 + k * dt_, dt_, opt_.substeps);
  }

 private:
  struct Row {
    std::vector<std::pair<int, double>> coef;
    double rhs;
  };

  double geometric_violation(const Vec& x, int k) const {
    if (model_.position_dim == 0) return 0.0;
    const ErodedSet& s = sets_[k];
    double v = 0.0;
    for (int a = 0; a < model_.agents; ++a) {
      const Vec p = position(model_, x, a);
      for (const auto& o : s.obstacles) v += std::max(0.0, o.radius - (p - o.center).norm());
      if (s.ws_lo.size())
        v += (s.ws_lo - p).cwiseMax(0.0).sum() + (p - s.ws_hi).cwiseMax(0.0).sum();
      if (s.agent_separation > 0)
        for (int b = a + 1; b < model_.agents; ++b)
          v += std::max(0.0, s.agent_separation - (p - position(model_, x, b)).norm());
    }
    return v;
  }

  int xi(int k) const { return k * (3 * n_ + m_); }
  int ui(int k) const { return xi(k) + n_; }
  int vpi(int k) const { return ui(k) + m_; }
  int vni(int k) const { return vpi(k) + n_; }
  int base_vars() const { return N_ * (3 * n_ + m_) + n_; }

  // Supporting-hyperplane rows a'z <= b + sigma for the eroded set at knot k.
  void geometric_rows(const Vec& xbar, int k, std::vector<Row>& rows) const {
    if (model_.position_dim == 0) return;
    const ErodedSet& s = sets_[k];
    const int pd = model_.position_dim, na = model_.agent_n();
    auto unit = [&](const Vec& d, int salt) -> Vec {
      const double nd = d.norm();
      if (nd > 1e-9) return d / nd;
      Vec e = Vec::Zero(d.size());  // deterministic tie-break when on the center
      e[salt % d.size()] = 1.0;
      return e;
    };
    for (int a = 0; a < model_.agents; ++a) {
      const Vec p = position(model_, xbar, a);
      const int off = xi(k) + a * na;
      for (std::size_t j = 0; j < s.obstacles.size(); ++j) {
        const auto& o = s.obstacles[j];
        const Vec nh = unit(p - o.center, static_cast<int>(j));
        Row r;
        for (int d = 0; d < pd; ++d) r.coef.push_back({off + d, -nh[d]});
        r.rhs = -o.radius - nh.dot(o.center);
        rows.push_back(r);
      }
      if (s.ws_lo.size())
        for (int d = 0; d < pd; ++d) {
          rows.push_back({{{off + d, 1.0}}, s.ws_hi[d]});
          rows.push_back({{{off + d, -1.0}}, -s.ws_lo[d]});
        }
      if (s.agent_separation > 0)
        for (int b = a + 1; b < model_.agents; ++b) {
          const Vec nh = unit(p - position(model_, xbar, b), a + b);
          const int offb = xi(k) + b * na;
          Row r;
          for (int d = 0; d < pd; ++d) {
            r.coef.push_back({off + d, -nh[d]});
            r.coef.push_back({offb + d, nh[d]});
          }
          r.rhs = -s.agent_separation;
          rows.push_back(r);
        }
    }
  }

  // Convex subproblem around zbar; returns the model merit of the solution.
  bool subproblem(const Iterate& zbar, double radius, Iterate& out, double& model_merit) const {
    std::vector<Row> soft;
    for (int k = 0; k <= N_; ++k) geometric_rows(zbar.x[k], k, soft);
    const int nb = base_vars(), ns = static_cast<int>(soft.size()), nv = nb + ns;

    std::vector<Eigen::Triplet<double>> Pt, At, Gt;
    Vec q = Vec::Zero(nv);
    for (int k = 0; k < N_; ++k) {
      for (int i = 0; i < m_; ++i) Pt.emplace_back(ui(k) + i, ui(k) + i, 2.0 * opt_.c1 * dt_);
      if (opt_.c2 > 0)
        for (int i = 0; i < n_; ++i) {
          Pt.emplace_back(xi(k) + i, xi(k) + i, 2.0 * opt_.c2 * dt_);
          q[xi(k) + i] -= 2.0 * opt_.c2 * dt_ * env_.xf[i];
        }
      q.segment(vpi(k), 2 * n_).setConstant(opt_.penalty);
    }
    if (!hard_end_)
      for (int i = 0; i < n_; ++i) {
        Pt.emplace_back(xi(N_) + i, xi(N_) + i, 2.0 * opt_.terminal_weight);
        q[xi(N_) + i] -= 2.0 * opt_.terminal_weight * env_.xf[i];
      }
    q.tail(ns).setConstant(opt_.penalty);

    // equalities
    std::vector<double> b;
    int row = 0;
    for (int i = 0; i < n_; ++i, ++row) {
      At.emplace_back(row, xi(0) + i, 1.0);
      b.push_back(env_.x0[i]);
    }
    if (hard_end_)
      for (int i = 0; i < n_; ++i, ++row) {
        At.emplace_back(row, xi(N_) + i, 1.0);
        b.push_back(env_.xf[i]);
      }
    for (int k = 0; k < N_; ++k) {
      const Vec phi = flow(zbar.x[k], zbar.u[k], k);
      Mat Ax(n_, n_), Bu(n_, m_);
      for (int j = 0; j < n_; ++j) {
        const double h = 1e-6 * std::max(1.0, std::abs(zbar.x[k][j]));
        Vec xp = zbar.x[k], xm = zbar.x[k];
        xp[j] += h;
        xm[j] -= h;
        Ax.col(j) = (flow(xp, zbar.u[k], k) - flow(xm, zbar.u[k], k)) / (2 * h);
      }
      for (int j = 0; j < m_; ++j) {
        const double h = 1e-6 * std::max(1.0, std::abs(zbar.u[k][j]));
        Vec up = zbar.u[k], um = zbar.u[k];
        up[j] += h;
        um[j] -= h;
        Bu.col(j) = (flow(zbar.x[k], up, k) - flow(zbar.x[k], um, k)) / (2 * h);
      }
      const Vec c = phi - Ax * zbar.x[k] - Bu * zbar.u[k];
      for (int i = 0; i < n_; ++i, ++row) {
        At.emplace_back(row, xi(k + 1) + i, 1.0);
        for (int j = 0; j < n_; ++j)
          if (Ax(i, j) != 0.0) At.emplace_back(row, xi(k) + j, -Ax(i, j));
        for (int j = 0; j < m_; ++j)
          if (Bu(i, j) != 0.0) At.emplace_back(row, ui(k) + j, -Bu(i, j));
        At.emplace_back(row, vpi(k) + i, -1.0);
        At.emplace_back(row, vni(k) + i, 1.0);
        b.push_back(c[i]);
      }
    }

    // inequalities
    std::vector<double> h;
    int g = 0;
    auto bound = [&](int var, double coef, double rhs) {
      Gt.emplace_back(g++, var, coef);
      h.push_back(rhs);
    };
    for (int k = 0; k < N_; ++k) {
      for (int i = 0; i < 2 * n_; ++i) bound(vpi(k) + i, -1.0, 0.0);
      for (int i = 0; i < m_; ++i) {
        const double ub = zbar.u[k][i];
        bound(ui(k) + i, 1.0, ub + radius);
        bound(ui(k) + i, -1.0, -(ub - radius));
        if (model_.input.kind == InputConstraint::kNonnegative) bound(ui(k) + i, -1.0, 0.0);
        if (model_.input.kind == InputConstraint::kBox) {
          bound(ui(k) + i, 1.0, model_.input.hi[i]);
          bound(ui(k) + i, -1.0, -model_.input.lo[i]);
        }
      }
    }
    for (int k = 1; k <= (hard_end_ ? N_ - 1 : N_); ++k)
      for (int i = 0; i < n_; ++i) {
        bound(xi(k) + i, 1.0, zbar.x[k][i] + radius);
        bound(xi(k) + i, -1.0, -(zbar.x[k][i] - radius));
      }
    for (int j = 0; j < ns; ++j) {
      for (const auto& [var, c] : soft[j].coef) Gt.emplace_back(g, var, c);
      Gt.emplace_back(g, nb + j, -1.0);
      h.push_back(soft[j].rhs);
      ++g;
      bound(nb + j, -1.0, 0.0);
    }

    QpProblem p;
    p.P.resize(nv, nv);
    p.P.setFromTriplets(Pt.begin(), Pt.end());
    p.q = q;
    p.A.resize(row, nv);
    p.A.setFromTriplets(At.begin(), At.end());
    p.b = Eigen::Map<Vec>(b.data(), row);
    p.G.resize(g, nv);
    p.G.setFromTriplets(Gt.begin(), Gt.end());
    p.h = Eigen::Map<Vec>(h.data(), g);
    QpOptions qo;
    qo.max_iter = 100;
    const QpSolution s = solve_qp(p, qo);
    last_qp_iters_ = s.iterations;
    if (s.status != QpStatus::kOptimal) {
      if (trace_) std::fprintf(stderr, "scp qp %s after %d iterations\n", to_string(s.status), s.iterations);
      return false;
    }

    out.x.resize(N_ + 1);
    out.u.resize(N_);
    for (int k = 0; k <= N_; ++k) out.x[k] = s.z.segment(xi(k), n_);
    for (int k = 0; k < N_; ++k) out.u[k] = s.z.segment(ui(k), m_);
    // the model merit uses the exact quadratic cost plus the linearized penalties
    double lin = 0.0;
    for (int k = 0; k < N_; ++k) lin += s.z.segment(vpi(k), 2 * n_).sum();
    lin += s.z.tail(ns).sum();
    model_merit = cost(out) + opt_.penalty * lin;
    return true;
  }

  const SystemModel& model_;
  const Environment& env_;
  const PlannerOptions& opt_;
  int n_, m_, N_;
  double dt_;
  bool hard_end_;
  std::vector<ErodedSet> sets_;
  bool trace_ = std::getenv("LAGROS_SCP_TRACE") != nullptr;
  mutable int last_qp_iters_ = 0;
};

Iterate straight_line(const SystemModel& model, const Environment& env, int N, double T, int restart,
                      std::uint64_t seed) {
  Iterate z;
  z.x.resize(N + 1);
  z.u.assign(N, Vec::Zero(model.m));
  for (int k = 0; k <= N; ++k) z.x[k] = env.x0 + (env.xf - env.x0) * (double(k) / N);
  if (model.second_order) {
    // rest-to-rest smoothstep for the configuration, with matching velocities
    const int na = model.agent_n(), h = na / 2;
    for (int k = 0; k <= N; ++k) {
      const double s = double(k) / N, w = s * s * (3 - 2 * s), dw = 6 * s * (1 - s) / T;
      for (int a = 0; a < model.agents; ++a) {
        const int o = a * na;
        const Vec dq = env.xf.segment(o, h) - env.x0.segment(o, h);
        z.x[k].segment(o, h) = env.x0.segment(o, h) + w * dq;
        z.x[k].segment(o + h, h) =
            env.x0.segment(o + h, h) + s * (env.xf.segment(o + h, h) - env.x0.segment(o + h, h)) + dw * dq;
      }
    }
  }
  if (restart == 0) return z;
  // randomized restart: bend each agent's path sideways (planar) or jitter the inputs
  auto rng = make_rng(seed, static_cast<std::uint64_t>(restart), 0x5c9);
  std::uniform_real_distribution<double> amp(-1.5, 1.5);
  if (model.position_dim == 2) {
    const int na = model.agent_n();
    for (int a = 0; a < model.agents; ++a) {
      const Vec d = position(model, env.xf, a) - position(model, env.x0, a);
      Vec perp(2);
      if (d.norm() > 1e-9) perp << -d[1] / d.norm(), d[0] / d.norm();
      else perp << 1.0, 0.0;
      const double A = amp(rng);
      for (int k = 1; k < N; ++k) z.x[k].segment(a * na, 2) += A * std::sin(M_PI * k / N) * perp;
    }
  } else {
    std::normal_distribution<double> nd(0.0, 0.5);
    for (auto& u : z.u)
      for (int i = 0; i < u.size(); ++i) u[i] = nd(rng);
  }
  if (model.input.kind == InputConstraint::kNonnegative)
    for (auto& u : z.u) u = u.cwiseMax(0.0);
  return z;
}

}  // namespace

NominalTrajectory plan(const SystemModel& model, const Environment& env, const TubeProfile& tube,
                       const PlannerOptions& opt, const PlanGuess* guess) {
  env.validate(model);
  tube.validate();
  if (opt.knots < 1 || opt.substeps < 1 || !(opt.T > 0)) throw DomainError("planner: need T > 0 and knots, substeps >= 1");
  const Scp scp(model, env, tube, opt);

  Scp::Outcome best;
  double best_cost = std::numeric_limits<double>::infinity();
  bool have = false;
  const int tries = guess ? 1 : std::max(1, opt.restarts);
  for (int r = 0; r < tries; ++r) {
    Iterate init;
    if (guess) {
      if (static_cast<int>(guess->x.size()) != opt.knots + 1 || static_cast<int>(guess->u.size()) != opt.knots)
        throw DomainError("planner: warm start has the wrong number of knots");
      init.x = guess->x;
      init.u = guess->u;
      init.x.front() = env.x0;
    } else {
      init = straight_line(model, env, opt.knots, opt.T, r, opt.seed);
    }
    Scp::Outcome o = scp.run(std::move(init));
    const double c = scp.cost(o.z);
    // feasible-and-converged beats anything else, then lower cost
    const bool better = !have || (o.converged && !best.converged) || (o.converged == best.converged && c < best_cost);
    if (better) {
      best = std::move(o);
      best_cost = c;
      have = true;
    }
  }

  NominalTrajectory nt;
  nt.t0 = opt.t0;
  nt.T = opt.T;
  nt.substeps = opt.substeps;
  nt.x = best.z.x;
  nt.u = best.z.u;
  nt.env = env;
  nt.tube = tube;
  nt.cost = best_cost;
  nt.max_defect = scp.defect(best.z);
  nt.eroded_margin = scp.min_margin(best.z);
  nt.converged = best.converged;
  nt.rounds = best.rounds;
  nt.merit_history = best.merits;
  if (opt.require_converged && !nt.converged) {
    throw InfeasibleError("planner: no feasible plan after " + std::to_string(opt.max_rounds) +
                          " rounds (max defect " + fmt_double(nt.max_defect) + ", eroded margin " +
                          fmt_double(nt.eroded_margin) + ")");
  }
  nt.densify(model);
  return nt;
}

void NominalTrajectory::densify(const SystemModel& model) {
  xs_.clear();
  fl_.clear();
  fr_.clear();
  const double h = dt() / substeps;
  const Vec d = Vec::Zero(model.n);
  for (int k = 0; k < knots(); ++k) {
    Vec y = x[k];
    for (int s = 0; s < substeps; ++s) {
      const double t = t0 + k * dt() + s * h;
      xs_.push_back(y);
      fl_.push_back(model.eval(y, u[k], t));
      y = rk4_step(model, y, u[k], d, t, h);
      fr_.push_back(model.eval(y, u[k], t + h));
    }
  }
  xs_.push_back(x.back());
}

Vec NominalTrajectory::x_at(double t) const {
  if (xs_.empty()) throw Error("nominal trajectory has no dense samples");
  const double tau = t - t0;
  if (tau <= 0.0) return xs_.front();
  if (tau >= T) return xs_.back();
  const double h = dt() / substeps;
  const int j = std::min(static_cast<int>(tau / h), static_cast<int>(fl_.size()) - 1);
  const double s = (tau - j * h) / h;
  const double h00 = (1 + 2 * s) * (1 - s) * (1 - s), h10 = s * (1 - s) * (1 - s);
  const double h01 = s * s * (3 - 2 * s), h11 = s * s * (s - 1);
  return h00 * xs_[j] + h10 * h * fl_[j] + h01 * xs_[j + 1] + h11 * h * fr_[j];
}

Vec NominalTrajectory::u_at(double t) const {
  const double tau = t - t0;
  if (tau >= T) return Vec::Zero(u.front().size());
  const int k = std::clamp(static_cast<int>(std::floor(tau / dt() + 1e-9)), 0, knots() - 1);
  return u[k];
}

void NominalTrajectory::save_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << "# lagros-nominal v1\n";
  out << "t0," << fmt_double(t0) << "\nT," << fmt_double(T) << "\nknots," << knots() << "\nsubsteps," << substeps
      << "\ncost," << fmt_double(cost) << "\nmax_defect," << fmt_double(max_defect) << "\neroded_margin,"
      << fmt_double(eroded_margin) << "\nenv_id," << env.id << "\n";
  const int n = static_cast<int>(x[0].size()), m = static_cast<int>(u[0].size());
  out << "t";
  for (int i = 0; i < n; ++i) out << ",x" << i;
  for (int i = 0; i < m; ++i) out << ",u" << i;
  out << "\n";
  for (int k = 0; k <= knots(); ++k) {
    out << fmt_double(t0 + k * dt());
    for (int i = 0; i < n; ++i) out << "," << fmt_double(x[k][i]);
    for (int i = 0; i < m; ++i) out << "," << fmt_double(k < knots() ? u[k][i] : 0.0);
    out << "\n";
  }
}

NominalTrajectory NominalTrajectory::load_csv(const std::string& path, const SystemModel& model) {
  std::ifstream in(path);
  if (!in) throw Error("missing nominal trajectory " + path + " (run plan)");
  std::string line;
  std::getline(in, line);
  if (line != "# lagros-nominal v1") throw Error("unsupported nominal file " + path);
  NominalTrajectory nt;
  int N = 0;
  while (std::getline(in, line)) {
    if (line.rfind("t,", 0) == 0) break;
    const auto c = line.find(',');
    const std::string k = line.substr(0, c), v = line.substr(c + 1);
    if (k == "t0") nt.t0 = std::stod(v);
    else if (k == "T") nt.T = std::stod(v);
    else if (k == "knots") N = std::stoi(v);
    else if (k == "substeps") nt.substeps = std::stoi(v);
    else if (k == "cost") nt.cost = std::stod(v);
    else if (k == "max_defect") nt.max_defect = std::stod(v);
    else if (k == "eroded_margin") nt.eroded_margin = std::stod(v);
    else if (k == "env_id") nt.env.id = std::stoi(v);
  }
  for (int k = 0; k <= N; ++k) {
    if (!std::getline(in, line)) throw Error("truncated nominal file " + path);
    const Vec row = parse_vec(line);
    if (row.size() != 1 + model.n + model.m) throw Error("bad nominal row in " + path);
    nt.x.push_back(row.segment(1, model.n));
    if (k < N) nt.u.push_back(row.tail(model.m));
  }
  nt.converged = true;
  nt.densify(model);
  return nt;
}

SafetyReport check_theorem3(const SystemModel& model, const Environment& env, const Trajectory& rollout) {
  if (rollout.t.size() != rollout.x.size()) throw DomainError("check_theorem3: t/x length mismatch");
  SafetyReport rep;
  const ErodedSet X = erode_by(env, 0.0);
  for (std::size_t k = 0; k < rollout.size(); ++k) {
    const double m = set_margin(model, X, rollout.x[k]);
    if (m < rep.worst_margin) rep.worst_margin = m;
    if (m < 0.0 && rep.safe) {
      rep.safe = false;
      rep.first_violation_time = rollout.t[k];
      rep.what = "left the admissible set by " + fmt_double(-m) + " at t=" + fmt_double(rollout.t[k]);
    }
  }
  return rep;
}

}  // namespace lagros
