#include "lagros/dynamics.hpp"

#include <cmath>
#include <fstream>

namespace lagros {

namespace {

// 8-point Gauss-Legendre on [-1, 1]
constexpr double kGlNodes[8] = {-0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
                                -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
                                0.7966664774136267,  0.9602898564975363};
constexpr double kGlWeights[8] = {0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
                                  0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
                                  0.2223810344533745, 0.1012285362903763};

}  // namespace

SystemModel make_cart_pole(const CartPoleParams& p, double d_bar) {
  SystemModel s;
  s.name = "cartpole";
  s.n = 4;
  s.m = 1;
  s.position_dim = 1;
  s.second_order = true;
  s.d_bar = d_bar;
  const double M = p.mc + p.m;
  s.f = [p, M](const Vec& x, double) {
    const double th = x[1], dp = x[2], dth = x[3];
    const double sn = std::sin(th), cs = std::cos(th);
    const double fric = p.mu_c * (p.v_smooth > 0 ? std::tanh(dp / p.v_smooth) : (dp > 0) - (dp < 0));
    const double D = p.l * (4.0 / 3.0 - p.m * cs * cs / M);
    const double thdd =
        (p.g * sn + cs * (-p.m * p.l * dth * dth * sn + fric) / M - p.mu_p * dth / (p.m * p.l)) / D;
    const double pdd = (p.m * p.l * (dth * dth * sn - thdd * cs) - fric) / M;
    Vec out(4);
    out << dp, dth, pdd, thdd;
    return out;
  };
  s.B = [p, M](const Vec& x, double) {
    const double cs = std::cos(x[1]);
    const double D = p.l * (4.0 / 3.0 - p.m * cs * cs / M);
    const double thF = -cs / (M * D);
    const double pF = (1.0 - p.m * p.l * cs * thF) / M;
    Mat b(4, 1);
    b << 0.0, 0.0, pF, thF;
    return b;
  };
  // B depends on the pole angle only
  std::vector<Vec> samples;
  for (int k = 0; k <= 3600; ++k) {
    Vec x = Vec::Zero(4);
    x[1] = 2.0 * M_PI * k / 3600.0;
    samples.push_back(x);
  }
  s.b_bar = max_input_norm(s, samples) * (1.0 + 1e-9);
  return s;
}

SystemModel make_planar_agent(const PlanarParams& p, double d_bar) {
  SystemModel s;
  s.name = "planar";
  s.n = 4;
  s.position_dim = 2;
  s.second_order = true;
  s.d_bar = d_bar;
  Mat T;
  if (p.thrusters) {
    T.resize(2, 4);
    T << 1, -1, 0, 0, 0, 0, 1, -1;
    s.input.kind = InputConstraint::kNonnegative;
    // net thrust per axis is what matters; fire only the thruster that points the right way
    s.realize = [](const Vec& u) {
      Vec out(4);
      for (int a = 0; a < 2; ++a) {
        const double net = u[2 * a] - u[2 * a + 1];
        out[2 * a] = std::max(net, 0.0);
        out[2 * a + 1] = std::max(-net, 0.0);
      }
      return out;
    };
  } else {
    T = Mat::Identity(2, 2);
  }
  s.m = static_cast<int>(T.cols());
  T /= p.mass;
  s.f = [p](const Vec& x, double) {
    Vec out(4);
    const Eigen::Vector2d v = x.segment<2>(2);
    out.head<2>() = v;
    out.tail<2>() = -p.drag / p.mass * v.norm() * v;
    return out;
  };
  s.B = [T](const Vec&, double) {
    Mat b = Mat::Zero(4, T.cols());
    b.bottomRows(2) = T;
    return b;
  };
  s.b_bar = Eigen::JacobiSVD<Mat>(T).singularValues()(0) * (1.0 + 1e-9);
  return s;
}

SystemModel make_linear(const Mat& F, const Mat& G, double d_bar) {
  SystemModel s;
  s.name = "linear";
  s.n = static_cast<int>(F.rows());
  s.m = static_cast<int>(G.cols());
  s.d_bar = d_bar;
  s.f = [F](const Vec& x, double) -> Vec { return F * x; };
  s.B = [G](const Vec&, double) -> Mat { return G; };
  s.b_bar = G.size() ? Eigen::JacobiSVD<Mat>(G).singularValues()(0) * (1.0 + 1e-9) : 0.0;
  return s;
}

Vec agent_block(const Vec& v, int i, int block) { return v.segment(i * block, block); }

SystemModel make_team(const SystemModel& agent, int count) {
  SystemModel s = agent;
  s.name = agent.name + "_team";
  s.agents = agent.agents * count;
  s.n = agent.n * count;
  s.m = agent.m * count;
  const int na = agent.n, ma = agent.m;
  s.f = [agent, count, na](const Vec& x, double t) {
    Vec out(na * count);
    for (int i = 0; i < count; ++i) out.segment(i * na, na) = agent.f(x.segment(i * na, na), t);
    return out;
  };
  s.B = [agent, count, na, ma](const Vec& x, double t) {
    Mat b = Mat::Zero(na * count, ma * count);
    for (int i = 0; i < count; ++i) b.block(i * na, i * ma, na, ma) = agent.B(x.segment(i * na, na), t);
    return b;
  };
  if (agent.realize) {
    s.realize = [agent, count, ma](const Vec& u) {
      Vec out(u.size());
      for (int i = 0; i < count; ++i) out.segment(i * ma, ma) = agent.realize(u.segment(i * ma, ma));
      return out;
    };
  }
  if (agent.input.kind == InputConstraint::kBox) {
    s.input.lo = agent.input.lo.replicate(count, 1);
    s.input.hi = agent.input.hi.replicate(count, 1);
  }
  return s;
}

Vec realize_input(const SystemModel& model, const Vec& u) { return model.realize ? model.realize(u) : u; }

Vec eval_f(const SystemModel& model, const Vec& x, double t) {
  require_finite(x, "eval_f state");
  if (!std::isfinite(t)) throw DomainError("eval_f: non-finite time");
  if (x.size() != model.n) throw DomainError("eval_f: state dimension mismatch");
  Vec out = model.f(x, t);
  require_finite(out, "eval_f result");
  return out;
}

Mat jacobian(const SystemModel& model, const Vec& x, const Vec& u, double t) {
  Mat J(model.n, model.n);
  Vec xp = x, xm = x;
  for (int i = 0; i < model.n; ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(x[i]));
    xp[i] = x[i] + h;
    xm[i] = x[i] - h;
    J.col(i) = (model.eval(xp, u, t) - model.eval(xm, u, t)) / (xp[i] - xm[i]);
    xp[i] = xm[i] = x[i];
  }
  return J;
}

Mat sdc_factorize(const SystemModel& model, const Vec& x, const Vec& xd, const Vec& ud, double t) {
  require_finite(x, "sdc state");
  require_finite(xd, "sdc target state");
  require_finite(ud, "sdc target input");
  const Vec e = x - xd;
  Mat A = Mat::Zero(model.n, model.n);
  for (int k = 0; k < 8; ++k) {
    const double c = 0.5 * (kGlNodes[k] + 1.0);
    A += 0.5 * kGlWeights[k] * jacobian(model, xd + c * e, ud, t);
  }
  const double e2 = e.squaredNorm();
  if (e2 > 0.0) {
    // quadrature and differencing error, pushed into the e direction only
    const Vec r = model.eval(x, ud, t) - model.eval(xd, ud, t) - A * e;
    A += r * e.transpose() / e2;
  }
  return A;
}

double max_input_norm(const SystemModel& model, const std::vector<Vec>& samples) {
  double best = 0.0;
  for (const Vec& x : samples) {
    const Mat b = model.B(x, 0.0);
    best = std::max(best, Eigen::JacobiSVD<Mat>(b).singularValues()(0));
  }
  return best;
}

Vec sample_disturbance(const DisturbanceSpec& spec, int dim, double t) {
  if (spec.kind == DisturbanceKind::kZero || spec.magnitude <= 0.0) return Vec::Zero(dim);
  std::uint64_t interval = 0;
  if (spec.kind == DisturbanceKind::kPiecewiseRandom) {
    if (spec.hold_interval <= 0.0) throw DomainError("disturbance hold interval must be positive");
    interval = static_cast<std::uint64_t>(std::floor(t / spec.hold_interval + 1e-9));
  }
  auto rng = make_rng(spec.seed, interval, 0xd157);
  Vec d = gaussian_vec(dim, rng);
  d *= spec.magnitude / d.norm();
  while (d.norm() > spec.magnitude) d *= 1.0 - 1e-15;
  return d;
}

Vec rk4_step(const SystemModel& model, const Vec& x, const Vec& u, const Vec& d, double t,
             double dt) {
  const Vec k1 = model.eval(x, u, t) + d;
  const Vec k2 = model.eval(x + 0.5 * dt * k1, u, t + 0.5 * dt) + d;
  const Vec k3 = model.eval(x + 0.5 * dt * k2, u, t + 0.5 * dt) + d;
  const Vec k4 = model.eval(x + dt * k3, u, t + dt) + d;
  return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Trajectory integrate_rk4(const SystemModel& model, const Vec& x0, const ControlLaw& law,
                         const DisturbanceSpec& dist, double dt, double T,
                         const IntegrateOptions& opt) {
  if (!(dt > 0.0) || !(T >= dt - 1e-12)) throw DomainError("integrate_rk4: need dt > 0 and T >= dt");
  require_finite(x0, "integrate_rk4 initial state");
  const long steps = std::lround(T / dt);
  const long ctrl_every =
      opt.control_period > 0.0 ? std::max(1L, std::lround(opt.control_period / dt)) : 1L;
  Trajectory tr;
  tr.t.reserve(steps + 1);
  Vec x = x0, u;
  for (long k = 0; k <= steps; ++k) {
    const double t = k * dt;
    if (k % ctrl_every == 0 || k == steps) {
      if (k < steps || u.size() == 0) u = law(t, x);
    }
    const Vec d = sample_disturbance(dist, model.n, t);
    tr.t.push_back(t);
    tr.x.push_back(x);
    tr.u.push_back(u);
    tr.d.push_back(d);
    if (k == steps) break;
    x = rk4_step(model, x, u, d, t, dt);
    if (!x.allFinite() || x.norm() > opt.blowup)
      throw DivergenceError("state blow-up during integration", (k + 1) * dt);
    if (opt.observer && !opt.observer((k + 1) * dt, x)) {
      tr.t.push_back((k + 1) * dt);
      tr.x.push_back(x);
      tr.u.push_back(u);
      tr.d.push_back(sample_disturbance(dist, model.n, (k + 1) * dt));
      break;
    }
  }
  return tr;
}

void write_trajectory_csv(const Trajectory& tr, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  if (tr.size() == 0) return;
  out << "t";
  for (int i = 0; i < tr.x[0].size(); ++i) out << ",x" << i;
  for (int i = 0; i < tr.u[0].size(); ++i) out << ",u" << i;
  for (int i = 0; i < tr.d[0].size(); ++i) out << ",d" << i;
  out << "\n";
  for (std::size_t k = 0; k < tr.size(); ++k) {
    out << fmt_double(tr.t[k]);
    for (int i = 0; i < tr.x[k].size(); ++i) out << "," << fmt_double(tr.x[k][i]);
    for (int i = 0; i < tr.u[k].size(); ++i) out << "," << fmt_double(tr.u[k][i]);
    for (int i = 0; i < tr.d[k].size(); ++i) out << "," << fmt_double(tr.d[k][i]);
    out << "\n";
  }
}

}  // namespace lagros
