#include "lagros/demos.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>

namespace lagros {

namespace {

std::string join(const Vec& v) {
  std::string s;
  for (int i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt_double(v[i]);
  return s;
}

Vec parse_vec(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (item.find_first_not_of(" \t\r") != std::string::npos) v.push_back(std::stod(item));
  return Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Vec uniform_in(const Vec& lo, const Vec& hi, std::mt19937_64& rng) {
  Vec p(lo.size());
  for (int i = 0; i < p.size(); ++i) p[i] = std::uniform_real_distribution<double>(lo[i], hi[i])(rng);
  return p;
}

}  // namespace

Vec sample_tube_state(const Vec& xd, double r, std::mt19937_64& rng) {
  if (!(r >= 0.0) || !std::isfinite(r)) throw DomainError("sample_tube_state: radius must be finite and >= 0");
  require_finite(xd, "sample_tube_state center");
  const int n = static_cast<int>(xd.size());
  Vec dir = gaussian_vec(n, rng);
  while (dir.norm() == 0.0) dir = gaussian_vec(n, rng);
  // radius r U^(1/n) makes the point uniform in the ball
  const double rho = r * std::pow(std::uniform_real_distribution<double>(0.0, 1.0)(rng), 1.0 / n);
  Vec x = xd + (rho / dir.norm()) * dir;
  // the rounding of xd + v can leave the ball by an ulp; pull back onto it
  const double e = (x - xd).norm();
  if (e > r) x = xd + (x - xd) * (r / e);
  return x;
}

std::vector<double> stratified_times(double T, int D, std::mt19937_64& rng) {
  if (D < 1 || !(T > 0.0)) throw DomainError("stratified_times: need T > 0 and D >= 1");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> t(D);
  for (int j = 0; j < D; ++j) t[j] = (j + u(rng)) * T / D;
  return t;
}

Environment sample_environment(const SystemModel& team, const EnvRandomization& r, std::mt19937_64& rng, int id) {
  const int pd = team.position_dim, na = team.agent_n();
  if (r.start_lo.size() != pd || r.start_hi.size() != pd || r.goal_lo.size() != pd || r.goal_hi.size() != pd)
    throw ConfigError("environment randomization: start/goal boxes need " + std::to_string(pd) + " entries");
  if (r.obstacles_max > 0 && r.ws_lo.size() != pd)
    throw ConfigError("environment randomization: obstacles need a workspace box");
  for (int attempt = 0; attempt < r.max_attempts; ++attempt) {
    Environment env;
    env.id = id;
    env.x0 = Vec::Zero(team.n);
    env.xf = Vec::Zero(team.n);
    env.ws_lo = r.ws_lo;
    env.ws_hi = r.ws_hi;
    env.agent_separation = team.agents > 1 ? r.agent_separation : 0.0;
    std::vector<Vec> points;
    for (int a = 0; a < team.agents; ++a) {
      const Vec s = uniform_in(r.start_lo, r.start_hi, rng);
      Vec g = uniform_in(r.goal_lo, r.goal_hi, rng);
      if (r.mirror_goal && std::uniform_int_distribution<int>(0, 1)(rng)) g = -g;
      env.x0.segment(a * na, pd) = s;
      env.xf.segment(a * na, pd) = g;
      points.push_back(s);
      points.push_back(g);
    }
    bool ok = true;
    // starts and goals of different agents must be apart
    const double sep = env.agent_separation + r.clearance;
    for (int a = 0; a < team.agents && ok; ++a)
      for (int b = a + 1; b < team.agents && ok; ++b)
        ok = (points[2 * a] - points[2 * b]).norm() >= sep && (points[2 * a + 1] - points[2 * b + 1]).norm() >= sep;
    if (!ok) continue;
    const int count = r.obstacles_max > 0 ? std::uniform_int_distribution<int>(r.obstacles_min, r.obstacles_max)(rng) : 0;
    for (int k = 0; k < count && ok; ++k) {
      Obstacle o{uniform_in(r.ws_lo, r.ws_hi, rng), r.obstacle_radius};
      for (const Vec& p : points) ok = ok && (p - o.center).norm() >= o.radius + r.clearance;
      env.obstacles.push_back(std::move(o));
    }
    if (!ok) continue;
    env.validate(team);
    return env;
  }
  throw InfeasibleError("sample_environment: no admissible environment after " + std::to_string(r.max_attempts) +
                        " attempts");
}

Dataset generate(const ExperimentModels& em, const TubeProfile& tube, const DemoOptions& opt,
                 std::vector<NominalTrajectory>* nominals) {
  if (opt.envs < 1 || opt.per_traj < 1) throw ConfigError("demos: need envs >= 1 and per_traj >= 1");
  tube.validate();
  const SystemModel& team = em.team;
  const int na = team.agent_n(), ma = team.agent_m();
  std::vector<std::vector<DemoSample>> per_env(opt.envs);
  std::vector<NominalTrajectory> noms(opt.envs);
  std::vector<int> resampled(opt.envs, 0);

  parallel_for(opt.envs, opt.jobs, [&](int i) {
    auto rng = make_rng(opt.seed, 1, static_cast<std::uint64_t>(i));
    NominalTrajectory nom;
    Environment env;
    for (int attempt = 0;; ++attempt) {
      env = sample_environment(team, opt.randomization, rng, i);
      PlannerOptions po = opt.planner;
      po.seed = opt.seed * 1000003ULL + static_cast<std::uint64_t>(i);
      try {
        nom = plan(team, env, tube, po);
        break;
      } catch (const InfeasibleError& e) {
        if (attempt + 1 >= opt.max_resamples)
          throw InfeasibleError("demos: environment " + std::to_string(i) + " still infeasible after " +
                                std::to_string(opt.max_resamples) + " resamples: " + e.what());
        ++resampled[i];
      }
    }
    const auto times = stratified_times(nom.T, opt.per_traj, rng);
    auto& out = per_env[i];
    for (double t : times) {
      const Vec xd = nom.x_at(t), ud = nom.u_at(t);
      const double r = r_ell(tube, t);
      Vec x(team.n);
      for (int a = 0; a < team.agents; ++a) x.segment(a * na, na) = sample_tube_state(xd.segment(a * na, na), r, rng);
      for (int a = 0; a < team.agents; ++a) {
        DemoSample s;
        s.env_id = i;
        s.traj_id = a;
        s.t = t;
        s.x = x.segment(a * na, na);
        s.xd = xd.segment(a * na, na);
        s.ud = ud.segment(a * ma, ma);
        if ((s.x - s.xd).norm() > r * (1.0 + 1e-12)) throw Error("demos: sample left the tube");
        s.o_ell = observe_local(team, x, a, env, opt.obs);
        s.u_star = realize_input(em.agent, u_star(em.agent, em.metric, s.x, s.xd, s.ud, t).u);
        if (!s.u_star.allFinite()) throw DomainError("demos: non-finite label");
        out.push_back(std::move(s));
      }
    }
    noms[i] = std::move(nom);
  });

  Dataset ds;
  auto& h = ds.header;
  h.model = team.name;
  h.n = na;
  h.m = ma;
  h.obs_dim = observation_dim(team, opt.obs);
  h.agents = team.agents;
  h.tube = tube;
  h.eps_target = tube.eps_ell;
  h.T = opt.planner.T;
  h.envs = opt.envs;
  h.per_traj = opt.per_traj;
  h.seed = opt.seed;
  for (int i = 0; i < opt.envs; ++i) {
    h.resampled += resampled[i];
    for (auto& s : per_env[i]) ds.records.push_back(std::move(s));
  }
  if (nominals) *nominals = std::move(noms);
  return ds;
}

RowMat Dataset::inputs() const {
  const int w = header.n + header.obs_dim + 1;
  RowMat Z(static_cast<Eigen::Index>(records.size()), w);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    Z.row(static_cast<Eigen::Index>(i)) << r.x.transpose(), r.o_ell.transpose(), r.t;
  }
  return Z;
}

RowMat Dataset::labels_u_star() const {
  RowMat U(static_cast<Eigen::Index>(records.size()), header.m);
  for (std::size_t i = 0; i < records.size(); ++i) U.row(static_cast<Eigen::Index>(i)) = records[i].u_star.transpose();
  return U;
}

RowMat Dataset::labels_u_d() const {
  RowMat U(static_cast<Eigen::Index>(records.size()), header.m);
  for (std::size_t i = 0; i < records.size(); ++i) U.row(static_cast<Eigen::Index>(i)) = records[i].ud.transpose();
  return U;
}

void Dataset::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write dataset " + path);
  const auto& h = header;
  const auto& tb = h.tube;
  out << "# lagros-dataset v1\n";
  out << "# model = " << h.model << "\n";
  out << "# n = " << h.n << "\n# m = " << h.m << "\n# obs_dim = " << h.obs_dim << "\n# agents = " << h.agents << "\n";
  out << "# tube = " << fmt_double(tb.R0) << "," << fmt_double(tb.omega_lo) << "," << fmt_double(tb.omega_hi) << ","
      << fmt_double(tb.alpha) << "," << fmt_double(tb.b_bar) << "," << fmt_double(tb.eps_ell) << ","
      << fmt_double(tb.d_bar) << "\n";
  out << "# eps_target = " << fmt_double(h.eps_target) << "\n# T = " << fmt_double(h.T) << "\n";
  out << "# envs = " << h.envs << "\n# per_traj = " << h.per_traj << "\n# seed = " << h.seed << "\n";
  out << "# config_hash = " << h.config_hash << "\n# resampled = " << h.resampled << "\n";
  out << "env,traj";
  for (int i = 0; i < h.n; ++i) out << ",x" << i;
  for (int i = 0; i < h.obs_dim; ++i) out << ",o" << i;
  out << ",t";
  for (int i = 0; i < h.m; ++i) out << ",u" << i;
  for (int i = 0; i < h.n; ++i) out << ",xd" << i;
  for (int i = 0; i < h.m; ++i) out << ",ud" << i;
  out << "\n";
  for (const auto& r : records) {
    out << r.env_id << "," << r.traj_id << "," << join(r.x) << "," << (r.o_ell.size() ? join(r.o_ell) + "," : "")
        << fmt_double(r.t) << "," << join(r.u_star) << "," << join(r.xd) << "," << join(r.ud) << "\n";
  }
  if (!out) throw Error("failed writing dataset " + path);
}

Dataset Dataset::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read dataset " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("# lagros-dataset v1", 0) != 0)
    throw ConfigError(path + ": not a dataset file (missing version tag)");
  Dataset ds;
  auto& h = ds.header;
  while (std::getline(in, line)) {
    if (line.rfind("# ", 0) != 0) break;  // column header
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw ConfigError(path + ": malformed header line " + line);
    const std::string k = line.substr(2, eq - 2), v = line.substr(eq + 3);
    if (k == "model") h.model = v;
    else if (k == "n") h.n = std::stoi(v);
    else if (k == "m") h.m = std::stoi(v);
    else if (k == "obs_dim") h.obs_dim = std::stoi(v);
    else if (k == "agents") h.agents = std::stoi(v);
    else if (k == "tube") {
      const Vec p = parse_vec(v);
      if (p.size() != 7) throw ConfigError(path + ": tube needs 7 values");
      h.tube = TubeProfile{p[0], p[1], p[2], p[3], p[4], p[5], p[6]};
    } else if (k == "eps_target") h.eps_target = std::stod(v);
    else if (k == "T") h.T = std::stod(v);
    else if (k == "envs") h.envs = std::stoi(v);
    else if (k == "per_traj") h.per_traj = std::stoi(v);
    else if (k == "seed") h.seed = std::stoull(v);
    else if (k == "config_hash") h.config_hash = v;
    else if (k == "resampled") h.resampled = std::stoi(v);
    else throw ConfigError(path + ": unknown header key " + k);
  }
  const int width = 2 + h.n + h.obs_dim + 1 + h.m + h.n + h.m;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const Vec v = parse_vec(line);
    if (v.size() != width) throw ConfigError(path + ": record with " + std::to_string(v.size()) + " fields, expected " +
                                             std::to_string(width));
    DemoSample s;
    int k = 0;
    s.env_id = static_cast<int>(v[k++]);
    s.traj_id = static_cast<int>(v[k++]);
    s.x = v.segment(k, h.n), k += h.n;
    s.o_ell = v.segment(k, h.obs_dim), k += h.obs_dim;
    s.t = v[k++];
    s.u_star = v.segment(k, h.m), k += h.m;
    s.xd = v.segment(k, h.n), k += h.n;
    s.ud = v.segment(k, h.m);
    ds.records.push_back(std::move(s));
  }
  return ds;
}

}  // namespace lagros
