#include "lagros/simbench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace lagros {

namespace {

Vec agent_position(const SystemModel& m, const Vec& x, int a) { return x.segment(a * m.agent_n(), m.position_dim); }

Vec agent_velocity(const SystemModel& m, const Vec& x, int a) {
  if (!m.second_order) return Vec::Zero(m.position_dim);
  return x.segment(a * m.agent_n() + m.agent_n() / 2, m.position_dim);
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * (v.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  return i + 1 < v.size() ? v[i] + (pos - i) * (v[i + 1] - v[i]) : v[i];
}

class PolicySource : public ControlSource {
 public:
  PolicySource(const ExperimentModels& em, const Policy& p, const Environment& env, const ObserveOptions& obs,
               const NominalTrajectory& nom, double t_clip, std::string name)
      : em_(em), p_(p), env_(env), obs_(obs), nom_(nom), t_clip_(t_clip), name_(std::move(name)) {
    const int want = em.team.agent_n() + observation_dim(em.team, obs) + 1;
    if (p.input_dim() != want || p.output_dim() != em.team.agent_m())
      throw DomainError("policy '" + name_ + "' has shape " + std::to_string(p.input_dim()) + "->" +
                        std::to_string(p.output_dim()) + ", the experiment needs " + std::to_string(want) + "->" +
                        std::to_string(em.team.agent_m()));
  }
  Vec control(double t, const Vec& x) override {
    const int ma = em_.team.agent_m();
    Vec u(em_.team.m);
    const double tc = t_clip_ > 0.0 ? std::min(t, t_clip_) : t;
    for (int a = 0; a < em_.team.agents; ++a)
      u.segment(a * ma, ma) = p_.infer(policy_input(em_.team, x, a, env_, obs_, tc));
    return u;
  }
  Vec reference(double t) const override { return nom_.x_at(t); }
  std::string name() const override { return name_; }

 private:
  const ExperimentModels& em_;
  const Policy& p_;
  const Environment& env_;
  ObserveOptions obs_;
  const NominalTrajectory& nom_;
  double t_clip_;
  std::string name_;
};

class ExpertSource : public ControlSource {
 public:
  ExpertSource(const ExperimentModels& em, const NominalTrajectory& nom) : em_(em), nom_(nom) {}
  Vec control(double t, const Vec& x) override {
    return expert_control(em_.team, em_.agent, em_.metric, x, nom_.x_at(t), nom_.u_at(t), t);
  }
  Vec reference(double t) const override { return nom_.x_at(t); }
  std::string name() const override { return "expert"; }

 private:
  const ExperimentModels& em_;
  const NominalTrajectory& nom_;
};

class OnlineMpSource : public ControlSource {
 public:
  OnlineMpSource(const ExperimentModels& em, const Environment& env, const TubeProfile& tube,
                 const OnlineMpOptions& opt)
      : em_(em), env_(env), tube_(tube), opt_(opt) {
    PlannerOptions po = opt.planner;
    po.t0 = 0.0;
    plan_ = plan(em.team, env, tube, po);
    next_ = opt.replan_period;
  }

  Vec control(double t, const Vec& x) override {
    if (t + 1e-12 >= next_ && t < opt_.planner.T - 1e-9) {
      replan(t);
      next_ += opt_.replan_period * std::ceil((t + 1e-12 - next_) / opt_.replan_period + 1e-12);
      if (next_ <= t + 1e-12) next_ += opt_.replan_period;
    }
    return expert_control(em_.team, em_.agent, em_.metric, x, plan_.x_at(t), plan_.u_at(t), t);
  }
  Vec reference(double t) const override { return plan_.x_at(t); }
  std::string name() const override { return "online-mp"; }

 private:
  void replan(double t) {
    const double T = opt_.planner.T, remaining = T - t;
    const double knot_dt = T / opt_.planner.knots;
    const bool shrink = opt_.horizon <= 0.0 || opt_.horizon >= remaining - 1e-9;
    const double H = shrink ? remaining : opt_.horizon;
    PlannerOptions po = opt_.planner;
    po.t0 = t;
    po.T = H;
    po.knots = std::max(1, static_cast<int>(std::lround(H / knot_dt)));
    po.terminal_weight = shrink ? 0.0 : opt_.terminal_weight;
    po.require_converged = false;
    po.restarts = 1;
    Environment env = env_;
    env.x0 = plan_.x_at(t);
    PlanGuess guess;
    const double h = H / po.knots;
    for (int k = 0; k <= po.knots; ++k) guess.x.push_back(plan_.x_at(t + k * h));
    for (int k = 0; k < po.knots; ++k) guess.u.push_back(plan_.u_at(t + k * h));
    try {
      NominalTrajectory next = plan(em_.team, env, tube_, po, &guess);
      // keep following the previous plan when the re-solve is not usable
      if (next.max_defect <= 1e-4 && next.eroded_margin >= -1e-4) plan_ = std::move(next);
    } catch (const InfeasibleError&) {
    }
  }

  const ExperimentModels& em_;
  Environment env_;
  TubeProfile tube_;
  OnlineMpOptions opt_;
  NominalTrajectory plan_;
  double next_ = 0.0;
};

}  // namespace

int observation_dim(const SystemModel& model, const ObserveOptions& opt) {
  return 2 * model.agent_n() + opt.K * (2 * model.position_dim + 1);
}

Vec observe_local(const SystemModel& model, const Vec& x, int agent, const Environment& env,
                  const ObserveOptions& opt) {
  if (opt.K < 0 || !(opt.radius >= 0.0)) throw DomainError("observe_local: need K >= 0 and radius >= 0");
  if (agent < 0 || agent >= model.agents) throw DomainError("observe_local: agent index out of range");
  if (x.size() != model.n || env.xf.size() != model.n) throw DomainError("observe_local: state dimension mismatch");
  const int na = model.agent_n(), pd = model.position_dim, w = 2 * pd + 1;
  Vec o = Vec::Zero(observation_dim(model, opt));
  o.head(na) = x.segment(agent * na, na);
  o.segment(na, na) = env.xf.segment(agent * na, na) - x.segment(agent * na, na);

  struct Item {
    double dist;
    int index;
    Vec rel_p, rel_v;
    double type;
  };
  std::vector<Item> items;
  const Vec p = agent_position(model, x, agent), v = agent_velocity(model, x, agent);
  const int no = static_cast<int>(env.obstacles.size());
  for (int j = 0; j < no; ++j) {
    const Vec rp = env.obstacles[j].center - p;
    items.push_back({rp.norm(), j, rp, -v, 1.0});
  }
  for (int b = 0; b < model.agents; ++b) {
    if (b == agent) continue;
    const Vec rp = agent_position(model, x, b) - p;
    items.push_back({rp.norm(), no + b, rp, agent_velocity(model, x, b) - v, 2.0});
  }
  items.erase(std::remove_if(items.begin(), items.end(), [&](const Item& it) { return it.dist > opt.radius; }),
              items.end());
  std::sort(items.begin(), items.end(),
            [](const Item& a, const Item& b) { return a.dist != b.dist ? a.dist < b.dist : a.index < b.index; });
  for (int s = 0; s < std::min<int>(opt.K, static_cast<int>(items.size())); ++s) {
    const int base = 2 * na + s * w;
    o.segment(base, pd) = items[s].rel_p;
    o.segment(base + pd, pd) = items[s].rel_v;
    o[base + 2 * pd] = items[s].type;
  }
  return o;
}

Vec policy_input(const SystemModel& model, const Vec& x, int agent, const Environment& env,
                 const ObserveOptions& opt, double t) {
  const int na = model.agent_n();
  const Vec o = observe_local(model, x, agent, env, opt);
  Vec z(na + o.size() + 1);
  z << x.segment(agent * na, na), o, t;
  return z;
}

Vec expert_control(const SystemModel& team, const SystemModel& agent, const MetricTable& metric, const Vec& x,
                   const Vec& xd, const Vec& ud, double t) {
  const int na = team.agent_n(), ma = team.agent_m();
  Vec u(team.m);
  for (int a = 0; a < team.agents; ++a) {
    const GainResult g =
        u_star(agent, metric, x.segment(a * na, na), xd.segment(a * na, na), ud.segment(a * ma, ma), t);
    u.segment(a * ma, ma) = realize_input(agent, g.u);
  }
  return u;
}

std::unique_ptr<ControlSource> make_policy_source(const ExperimentModels& em, const Policy& policy,
                                                  const Environment& env, const ObserveOptions& obs,
                                                  const NominalTrajectory& nominal, double t_clip,
                                                  const std::string& name) {
  return std::make_unique<PolicySource>(em, policy, env, obs, nominal, t_clip, name);
}

std::unique_ptr<ControlSource> make_expert_source(const ExperimentModels& em, const NominalTrajectory& nominal) {
  return std::make_unique<ExpertSource>(em, nominal);
}

std::unique_ptr<ControlSource> baseline_online_mp(const ExperimentModels& em, const Environment& env,
                                                  const TubeProfile& tube, const OnlineMpOptions& opt) {
  if (!(opt.replan_period > 0.0)) throw ConfigError("online MP: replan period must be positive");
  return std::make_unique<OnlineMpSource>(em, env, tube, opt);
}

double control_effort(const Trajectory& tr, double t0, double t1) {
  if (tr.size() < 2 || !(t1 > t0)) return 0.0;
  auto val = [&](std::size_t k) { return tr.u[k].squaredNorm(); };
  double sum = 0.0;
  for (std::size_t k = 0; k + 1 < tr.size(); ++k) {
    const double a = std::max(t0, tr.t[k]), b = std::min(t1, tr.t[k + 1]);
    if (!(b > a)) continue;
    // linear interpolation of ||u||^2 inside the interval
    const double h = tr.t[k + 1] - tr.t[k];
    const double va = val(k) + (val(k + 1) - val(k)) * (a - tr.t[k]) / h;
    const double vb = val(k) + (val(k + 1) - val(k)) * (b - tr.t[k]) / h;
    sum += 0.5 * (va + vb) * (b - a);
  }
  return sum;
}

RolloutResult rollout(const ExperimentModels& em, ControlSource& source, const Environment& env,
                      const TubeProfile& tube, const RolloutOptions& opt) {
  const SystemModel& team = em.team;
  if (!(opt.dt > 0.0) || !(opt.T_h >= opt.dt) || !(opt.control_period >= opt.dt * (1 - 1e-9)))
    throw DomainError("rollout: need dt > 0, T_h >= dt and control period >= dt");
  env.validate(team);
  const long steps = std::lround(opt.T_h / opt.dt);
  const long every = std::max(1L, std::lround(opt.control_period / opt.dt));
  const int na = team.agent_n();
  const ErodedSet X = erode_by(env, 0.0);

  RolloutResult res;
  res.agent_success.assign(team.agents, false);
  std::vector<double> agent_time(team.agents, std::numeric_limits<double>::quiet_NaN());
  std::vector<Vec> xd_rec;
  Vec x = env.x0, u = Vec::Zero(team.m);
  for (long k = 0; k <= steps; ++k) {
    const double t = k * opt.dt;
    if (k % every == 0 && k < steps) {
      const auto c0 = std::chrono::steady_clock::now();
      u = source.control(t, x);
      res.compute_dt.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - c0).count());
      if (!u.allFinite()) throw DomainError("rollout: control source '" + source.name() + "' returned non-finite input");
    }
    const Vec d = sample_disturbance(opt.disturbance, team.n, t);
    const Vec xd = source.reference(t);
    res.traj.t.push_back(t);
    res.traj.x.push_back(x);
    res.traj.u.push_back(u);
    res.traj.d.push_back(d);
    xd_rec.push_back(xd);
    double err = 0.0;
    for (int a = 0; a < team.agents; ++a) err = std::max(err, (x.segment(a * na, na) - xd.segment(a * na, na)).norm());
    res.error.push_back(err);
    if (!res.collided && set_margin(team, X, x) < 0.0) {
      res.collided = true;
      res.collision_time = t;
    }
    const double r = r_ell(tube, t);
    for (int a = 0; a < team.agents; ++a)
      if (!res.agent_success[a] && (x.segment(a * na, na) - env.xf.segment(a * na, na)).norm() <= r &&
          !(res.collided && res.collision_time <= t)) {
        res.agent_success[a] = true;
        agent_time[a] = t;
      }
    if (!res.success && std::all_of(res.agent_success.begin(), res.agent_success.end(), [](bool b) { return b; })) {
      res.success = true;
      res.t_star = t;
    }
    if (k == steps) break;
    x = rk4_step(team, x, u, d, t, opt.dt);
    if (!x.allFinite() || x.norm() > opt.blowup) {
      res.diverged = true;
      break;
    }
  }
  const double t_end = res.traj.t.back();
  res.effort = res.success ? control_effort(res.traj, 0.0, res.t_star) : control_effort(res.traj, 0.0, std::min(opt.T, t_end));
  const double dt = opt.dt;
  res.tube = verify_tube(res.traj, [&](double t) { return xd_rec[static_cast<std::size_t>(std::lround(t / dt))]; },
                         tube, team.agents);
  res.safety = check_theorem3(team, env, res.traj);
  return res;
}

const char* to_string(PlannerKind k) {
  switch (k) {
    case PlannerKind::kNaive: return "naive";
    case PlannerKind::kOnlineMp: return "online-mp";
    case PlannerKind::kLagros: return "lagros";
    case PlannerKind::kExpert: return "expert";
  }
  return "?";
}

PlannerKind parse_planner(const std::string& s) {
  if (s == "naive" || s == "a") return PlannerKind::kNaive;
  if (s == "online-mp" || s == "b") return PlannerKind::kOnlineMp;
  if (s == "lagros" || s == "c") return PlannerKind::kLagros;
  if (s == "expert") return PlannerKind::kExpert;
  throw ConfigError("unknown planner '" + s + "' (expected naive, online-mp, lagros or expert)");
}

BenchRow aggregate(PlannerKind k, double d_bar, const std::vector<RolloutResult>& results) {
  BenchRow row;
  row.planner = k;
  row.d_bar = d_bar;
  row.trials = static_cast<int>(results.size());
  if (results.empty()) return row;
  std::vector<double> dts, efforts;
  double agents_ok = 0.0, agents = 0.0;
  row.max_violation = -std::numeric_limits<double>::infinity();
  for (const auto& r : results) {
    row.success_rate += r.success;
    for (bool b : r.agent_success) agents_ok += b, agents += 1;
    efforts.push_back(r.effort);
    dts.insert(dts.end(), r.compute_dt.begin(), r.compute_dt.end());
    row.tube_inside_rate += r.tube.inside();
    row.max_violation = std::max(row.max_violation, r.tube.max_violation);
    row.collisions += r.collided;
  }
  const double n = static_cast<double>(results.size());
  row.success_rate /= n;
  row.tube_inside_rate /= n;
  row.agent_success_rate = agents > 0 ? agents_ok / agents : 0.0;
  row.mean_effort = std::accumulate(efforts.begin(), efforts.end(), 0.0) / n;
  double var = 0.0;
  for (double e : efforts) var += (e - row.mean_effort) * (e - row.mean_effort);
  row.sd_effort = std::sqrt(var / n);
  if (!dts.empty()) {
    row.mean_dt = std::accumulate(dts.begin(), dts.end(), 0.0) / dts.size();
    row.p95_dt = percentile(dts, 0.95);
    row.max_dt = *std::max_element(dts.begin(), dts.end());
  }
  return row;
}

BenchReport benchmark(const BenchSetup& setup, const std::vector<PlannerKind>& planners, int n_trials,
                      std::uint64_t seed, const std::vector<double>& d_sweep, int jobs) {
  if (n_trials < 1) throw ConfigError("benchmark: need at least one trial");
  if (!setup.environment) throw ConfigError("benchmark: no environment generator");
  for (PlannerKind k : planners) {
    if (k == PlannerKind::kLagros && !setup.lagros) throw ConfigError("benchmark: lagros requested without a policy");
    if (k == PlannerKind::kNaive && !setup.naive) throw ConfigError("benchmark: naive requested without a policy");
  }
  // environments and offline nominals are shared by every planner and sweep point
  std::vector<Environment> envs(n_trials);
  std::vector<NominalTrajectory> noms(n_trials);
  parallel_for(n_trials, jobs, [&](int i) {
    envs[i] = setup.environment(i);
    PlannerOptions po = setup.planner;
    po.seed = seed * 7919ULL + static_cast<std::uint64_t>(i);
    noms[i] = plan(setup.em.team, envs[i], setup.tube, po);
  });

  BenchReport rep;
  for (double d : d_sweep) {
    for (PlannerKind k : planners) {
      std::vector<RolloutResult> results(n_trials);
      parallel_for(n_trials, jobs, [&](int i) {
        RolloutOptions ro = setup.rollout;
        ro.disturbance.magnitude = d;
        if (d <= 0.0) ro.disturbance.kind = DisturbanceKind::kZero;
        ro.disturbance.seed = seed * 104729ULL + static_cast<std::uint64_t>(i);
        std::unique_ptr<ControlSource> src;
        switch (k) {
          case PlannerKind::kNaive:
            src = make_policy_source(setup.em, *setup.naive, envs[i], setup.obs, noms[i], setup.t_clip, "naive");
            break;
          case PlannerKind::kLagros:
            src = make_policy_source(setup.em, *setup.lagros, envs[i], setup.obs, noms[i], setup.t_clip, "lagros");
            break;
          case PlannerKind::kExpert: src = make_expert_source(setup.em, noms[i]); break;
          case PlannerKind::kOnlineMp: {
            OnlineMpOptions mo = setup.online;
            mo.planner.seed = seed * 7919ULL + static_cast<std::uint64_t>(i);
            src = baseline_online_mp(setup.em, envs[i], setup.tube, mo);
            break;
          }
        }
        results[i] = rollout(setup.em, *src, envs[i], setup.tube, ro);
      });
      rep.rows.push_back(aggregate(k, d, results));
      for (int i = 0; i < n_trials; ++i) {
        const auto& r = results[i];
        rep.trials.push_back({k, d, i, envs[i].id, r.success, r.t_star, r.effort, r.tube.max_violation, r.collided});
        rep.results.push_back(std::move(results[i]));
      }
    }
  }
  return rep;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << "planner,d_bar,success_rate,mean_effort,mean_dt,p95_dt\n";
  for (const auto& r : rows)
    out << to_string(r.planner) << "," << fmt_double(r.d_bar) << "," << fmt_double(r.success_rate) << ","
        << fmt_double(r.mean_effort) << "," << fmt_double(r.mean_dt) << "," << fmt_double(r.p95_dt) << "\n";
  return out.str();
}

std::string trials_csv(const BenchReport& report) {
  std::ostringstream out;
  out << "planner,d_bar,trial,env,success,t_star,effort,max_violation,collided\n";
  for (const auto& t : report.trials)
    out << to_string(t.planner) << "," << fmt_double(t.d_bar) << "," << t.trial << "," << t.env_id << ","
        << t.success << "," << fmt_double(t.t_star) << "," << fmt_double(t.effort) << ","
        << fmt_double(t.max_violation) << "," << t.collided << "\n";
  return out.str();
}

}  // namespace lagros
