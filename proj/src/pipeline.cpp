#include "lagros/pipeline.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

namespace lagros {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string path_of(const RunContext& ctx, const std::string& name) { return (fs::path(ctx.out_dir) / name).string(); }

// Missing inputs name the command that produces them.
std::string require(const RunContext& ctx, const std::string& name, const char* producer) {
  const std::string p = path_of(ctx, name);
  if (!fs::exists(p))
    throw Error("missing " + p + "; run `lagros " + producer + "` with the same --config and --out first");
  return p;
}

void say(const RunContext& ctx, const std::string& msg) {
  if (ctx.log) *ctx.log << msg << "\n";
}

// Provenance trailer for text artifacts whose format has no header slot.
void stamp(const RunContext& ctx, const std::string& path) {
  std::ofstream out(path, std::ios::app);
  out << "# config_hash = " << ctx.hash << "\n# seed = " << ctx.cfg.seed << "\n";
  if (!out) throw Error("cannot write " + path);
}

void write_text(const RunContext& ctx, const std::string& path, const std::string& body) {
  std::ofstream out(path);
  out << body;
  if (!out) throw Error("cannot write " + path);
  out.close();
  stamp(ctx, path);
}

std::map<std::string, std::string> finish(const RunContext& ctx, const std::string& command,
                                          const std::vector<std::string>& inputs,
                                          const std::vector<std::string>& outputs, json summary,
                                          const std::vector<std::string>& nondeterministic = {}) {
  json m;
  m["tool"] = kToolVersion;
  m["command"] = command;
  m["name"] = ctx.cfg.name;
  m["config_hash"] = ctx.hash;
  m["seed"] = ctx.cfg.seed;
  json in = json::object(), out = json::object();
  for (const auto& f : inputs) in[f] = sha256_file(path_of(ctx, f));
  std::map<std::string, std::string> table;
  for (const auto& f : outputs) {
    table[f] = sha256_file(path_of(ctx, f));
    out[f] = table[f];
  }
  m["inputs"] = in;
  m["outputs"] = out;
  // wall-clock columns cannot be reproduced bit for bit
  m["nondeterministic_outputs"] = nondeterministic;
  m["summary"] = std::move(summary);
  std::ofstream f(path_of(ctx, command + ".manifest.json"));
  f << m.dump(2) << "\n";
  if (!f) throw Error("cannot write manifest for " + command);
  return table;
}

MetricTable load_metric(const RunContext& ctx) {
  return MetricTable::load(require(ctx, artifact::kMetric, "synthesize-metric"));
}

Policy load_policy(const RunContext& ctx, const char* name) { return Policy::load(require(ctx, name, "train")); }

std::uint64_t bench_seed(const RunContext& ctx) { return ctx.cfg.seed; }

}  // namespace

RunContext make_context(const RunConfig& cfg, const std::string& out_dir, int jobs, std::ostream* log) {
  RunContext ctx;
  ctx.cfg = cfg;
  ctx.hash = config_hash(cfg);
  ctx.out_dir = out_dir;
  ctx.jobs = std::max(1, jobs);
  ctx.log = log;
  fs::create_directories(out_dir);
  return ctx;
}

ExperimentModels load_models(const RunContext& ctx) {
  ExperimentModels em{ctx.cfg.team_model(), ctx.cfg.agent_model(), load_metric(ctx)};
  if (em.metric.n() != em.agent.n)
    throw ConfigError("metric in " + path_of(ctx, artifact::kMetric) + " has dimension " +
                      std::to_string(em.metric.n()) + ", the model needs " + std::to_string(em.agent.n) +
                      "; rerun synthesize-metric");
  return em;
}

TubeProfile run_tube(const RunContext& ctx, const MetricTable& metric) {
  const auto& c = ctx.cfg;
  const double b = c.agent_model().b_bar;
  TubeProfile p = c.r_inf > 0.0 ? profile_with_limit(c.r_inf, c.alpha, b, c.eps_ell, c.d_bar())
                                : profile_from_metric(metric, b, c.eps_ell, c.d_bar(), c.R0);
  p.R0 = c.r_inf > 0.0 ? c.R0 : p.R0;
  p.validate();
  return p;
}

Environment test_environment(const RunContext& ctx, int index) {
  auto rng = make_rng(ctx.cfg.seed, ctx.cfg.env_stream, static_cast<std::uint64_t>(index));
  return sample_environment(ctx.cfg.team_model(), ctx.cfg.env, rng, index);
}

DemoOptions demo_options(const RunContext& ctx) {
  DemoOptions o;
  o.envs = ctx.cfg.envs;
  o.per_traj = ctx.cfg.per_traj;
  o.planner = ctx.cfg.planner;
  o.obs = ctx.cfg.obs;
  o.randomization = ctx.cfg.env;
  o.max_resamples = ctx.cfg.max_resamples;
  o.seed = ctx.cfg.seed;
  o.jobs = ctx.jobs;
  return o;
}

BenchSetup bench_setup(const RunContext& ctx, const ExperimentModels& em, const Policy* lagros, const Policy* naive) {
  BenchSetup s;
  s.em = em;
  s.tube = run_tube(ctx, em.metric);
  s.rollout = ctx.cfg.rollout;
  s.obs = ctx.cfg.obs;
  s.planner = ctx.cfg.planner;
  s.online = ctx.cfg.online;
  s.online.planner = ctx.cfg.planner;
  s.lagros = lagros;
  s.naive = naive;
  s.t_clip = ctx.cfg.planner.T;
  s.environment = [ctx](int i) { return test_environment(ctx, i); };
  return s;
}

std::map<std::string, std::string> cmd_synthesize_metric(const RunContext& ctx) {
  const auto& c = ctx.cfg;
  const SystemModel agent = c.agent_model();
  CvstemOptions opt = c.cvstem;
  opt.alpha = c.alpha;
  const auto grid = sample_grid(c.grid_points, c.xd_lo, c.xd_hi, c.ud_lo, c.ud_hi, c.grid_radius, c.grid_seed);
  say(ctx, "synthesizing a metric on " + std::to_string(grid.size()) + " grid points");
  const MetricTable table = synthesize(agent, grid, opt);
  table.save(path_of(ctx, artifact::kMetric));
  stamp(ctx, path_of(ctx, artifact::kMetric));
  const auto cert = verify_certificate(agent, table);
  const TubeProfile tube = run_tube(ctx, table);
  say(ctx, "chi = " + fmt_double(table.chi) + ", nu = " + fmt_double(table.nu) +
               ", failing points = " + std::to_string(cert.failing_points));
  json s;
  s["chi"] = table.chi;
  s["nu"] = table.nu;
  s["failing_points"] = cert.failing_points;
  s["min_contraction_margin"] = cert.min_contraction_margin;
  s["metric_steady_state_bound"] = steady_state_bound(table, c.eps_ell, c.d_bar(), agent.b_bar);
  s["tube_steady_state"] = tube.steady_state();
  s["d_bar"] = c.d_bar();
  return finish(ctx, "synthesize-metric", {}, {artifact::kMetric}, s);
}

std::map<std::string, std::string> cmd_plan(const RunContext& ctx, int env_index) {
  const auto em = load_models(ctx);
  const TubeProfile tube = run_tube(ctx, em.metric);
  const Environment env = test_environment(ctx, env_index);
  PlannerOptions po = ctx.cfg.planner;
  po.seed = ctx.cfg.seed * 7919ULL + static_cast<std::uint64_t>(env_index);
  const NominalTrajectory nom = plan(em.team, env, tube, po);
  const std::string tag = std::to_string(env_index);
  const std::string nf = "nominal_" + tag + ".csv", ef = "env_" + tag + ".txt";
  nom.save_csv(path_of(ctx, nf));
  stamp(ctx, path_of(ctx, nf));
  env.save(path_of(ctx, ef));
  stamp(ctx, path_of(ctx, ef));
  say(ctx, "planned environment " + tag + ": cost " + fmt_double(nom.cost) + ", " + std::to_string(nom.rounds) +
               " rounds, eroded margin " + fmt_double(nom.eroded_margin));
  json s;
  s["env"] = env_index;
  s["cost"] = nom.cost;
  s["rounds"] = nom.rounds;
  s["max_defect"] = nom.max_defect;
  s["eroded_margin"] = nom.eroded_margin;
  return finish(ctx, "plan", {artifact::kMetric}, {nf, ef}, s);
}

std::map<std::string, std::string> cmd_gen_demos(const RunContext& ctx) {
  const auto em = load_models(ctx);
  const TubeProfile tube = run_tube(ctx, em.metric);
  say(ctx, "generating " + std::to_string(ctx.cfg.envs) + " x " + std::to_string(ctx.cfg.per_traj) +
               " demonstrations");
  Dataset ds = generate(em, tube, demo_options(ctx));
  ds.header.model = ctx.cfg.model;
  ds.header.eps_target = ctx.cfg.eps_ell;
  ds.header.config_hash = ctx.hash;
  ds.save(path_of(ctx, artifact::kDemos));
  double umax = 0.0;
  for (const auto& r : ds.records) umax = std::max(umax, r.u_star.norm());
  json s;
  s["records"] = ds.records.size();
  s["resampled_envs"] = ds.header.resampled;
  s["max_label_norm"] = umax;
  say(ctx, std::to_string(ds.records.size()) + " records, " + std::to_string(ds.header.resampled) +
               " environments resampled");
  return finish(ctx, "gen-demos", {artifact::kMetric}, {artifact::kDemos}, s);
}

std::map<std::string, std::string> cmd_train(const RunContext& ctx) {
  const Dataset ds = Dataset::load(require(ctx, artifact::kDemos, "gen-demos"));
  if (ds.header.config_hash != ctx.hash)
    say(ctx, "note: " + std::string(artifact::kDemos) + " was produced under config " + ds.header.config_hash);
  TrainOptions opt = ctx.cfg.train;
  opt.seed = ctx.cfg.seed;
  const RowMat Z = ds.inputs();
  TrainReport lag, naive;
  say(ctx, "training the LAG-ROS policy on " + std::to_string(Z.rows()) + " samples");
  const Policy pl = train(Z, ds.labels_u_star(), opt, &lag);
  say(ctx, "training the naive policy (labels u_d)");
  const Policy pn = train(Z, ds.labels_u_d(), opt, &naive);
  pl.save(path_of(ctx, artifact::kLagrosPolicy));
  stamp(ctx, path_of(ctx, artifact::kLagrosPolicy));
  pn.save(path_of(ctx, artifact::kNaivePolicy));
  stamp(ctx, path_of(ctx, artifact::kNaivePolicy));

  std::string curve = "epoch,lagros_loss,naive_loss\n";
  for (int e = 0; e < lag.epochs; ++e)
    curve += std::to_string(e) + "," + fmt_double(lag.epoch_loss[e]) + "," + fmt_double(naive.epoch_loss[e]) + "\n";
  write_text(ctx, path_of(ctx, "train_curve.csv"), curve);

  auto stats = [](const TrainReport& r) {
    json j;
    j["final_train_loss"] = r.final_train_loss;
    j["train"] = {{"mean", r.train.mean}, {"p95", r.train.p95}, {"max", r.train.max}};
    j["test"] = {{"mean", r.test.mean}, {"p95", r.test.p95}, {"max", r.test.max}};
    j["eps_hat"] = r.eps_hat;
    j["n_train"] = r.n_train;
    j["n_test"] = r.n_test;
    return j;
  };
  json s;
  s["lagros"] = stats(lag);
  s["naive"] = stats(naive);
  s["eps_target"] = ctx.cfg.eps_ell;
  s["eps_hat_within_target"] = lag.eps_hat <= ctx.cfg.eps_ell;
  say(ctx, "LAG-ROS test error: mean " + fmt_double(lag.test.mean) + ", p95 (eps_hat) " + fmt_double(lag.eps_hat) +
               ", max " + fmt_double(lag.test.max) + " (target " + fmt_double(ctx.cfg.eps_ell) + ")");
  return finish(ctx, "train", {artifact::kDemos},
                {artifact::kLagrosPolicy, artifact::kNaivePolicy, "train_curve.csv"}, s);
}

std::map<std::string, std::string> cmd_rollout(const RunContext& ctx, PlannerKind planner, int env_index) {
  const auto em = load_models(ctx);
  Policy pl, pn;
  std::vector<std::string> inputs{artifact::kMetric};
  if (planner == PlannerKind::kLagros) pl = load_policy(ctx, artifact::kLagrosPolicy), inputs.push_back(artifact::kLagrosPolicy);
  if (planner == PlannerKind::kNaive) pn = load_policy(ctx, artifact::kNaivePolicy), inputs.push_back(artifact::kNaivePolicy);
  const BenchSetup setup = bench_setup(ctx, em, &pl, &pn);
  const Environment env = setup.environment(env_index);
  PlannerOptions po = setup.planner;
  po.seed = ctx.cfg.seed * 7919ULL + static_cast<std::uint64_t>(env_index);
  const NominalTrajectory nom = plan(em.team, env, setup.tube, po);
  std::unique_ptr<ControlSource> src;
  switch (planner) {
    case PlannerKind::kLagros: src = make_policy_source(em, pl, env, setup.obs, nom, setup.t_clip, "lagros"); break;
    case PlannerKind::kNaive: src = make_policy_source(em, pn, env, setup.obs, nom, setup.t_clip, "naive"); break;
    case PlannerKind::kExpert: src = make_expert_source(em, nom); break;
    case PlannerKind::kOnlineMp: {
      OnlineMpOptions mo = setup.online;
      mo.planner.seed = po.seed;
      src = baseline_online_mp(em, env, setup.tube, mo);
      break;
    }
  }
  RolloutOptions ro = setup.rollout;
  ro.disturbance.magnitude = ctx.cfg.d_bar();
  ro.disturbance.seed = ctx.cfg.seed * 104729ULL + static_cast<std::uint64_t>(env_index);
  const RolloutResult r = rollout(em, *src, env, setup.tube, ro);

  std::string csv = "t";
  for (int i = 0; i < em.team.n; ++i) csv += ",x" + std::to_string(i);
  for (int i = 0; i < em.team.m; ++i) csv += ",u" + std::to_string(i);
  csv += ",error,r_ell\n";
  for (std::size_t k = 0; k < r.traj.size(); ++k) {
    csv += fmt_double(r.traj.t[k]);
    for (int i = 0; i < em.team.n; ++i) csv += "," + fmt_double(r.traj.x[k][i]);
    for (int i = 0; i < em.team.m; ++i) csv += "," + fmt_double(r.traj.u[k][i]);
    csv += "," + fmt_double(r.error[k]) + "," + fmt_double(r_ell(setup.tube, r.traj.t[k])) + "\n";
  }
  const std::string name = std::string("rollout_") + to_string(planner) + "_" + std::to_string(env_index) + ".csv";
  write_text(ctx, path_of(ctx, name), csv);
  json s;
  s["planner"] = to_string(planner);
  s["env"] = env_index;
  s["success"] = r.success;
  s["t_star"] = std::isfinite(r.t_star) ? json(r.t_star) : json(nullptr);
  s["effort"] = r.effort;
  s["max_violation"] = r.tube.max_violation;
  s["collided"] = r.collided;
  s["safe"] = r.safety.safe;
  s["diverged"] = r.diverged;
  say(ctx, std::string(to_string(planner)) + " on environment " + std::to_string(env_index) + ": " +
               (r.success ? "success" : "failure") + ", effort " + fmt_double(r.effort) + ", tube violation " +
               fmt_double(r.tube.max_violation));
  return finish(ctx, "rollout", inputs, {name}, s);
}

std::map<std::string, std::string> cmd_bench(const RunContext& ctx) {
  const auto em = load_models(ctx);
  Policy pl, pn;
  std::vector<std::string> inputs{artifact::kMetric};
  bool need_l = false, need_n = false;
  for (auto k : ctx.cfg.planners) need_l |= k == PlannerKind::kLagros, need_n |= k == PlannerKind::kNaive;
  if (need_l) pl = load_policy(ctx, artifact::kLagrosPolicy), inputs.push_back(artifact::kLagrosPolicy);
  if (need_n) pn = load_policy(ctx, artifact::kNaivePolicy), inputs.push_back(artifact::kNaivePolicy);
  const BenchSetup setup = bench_setup(ctx, em, need_l ? &pl : nullptr, need_n ? &pn : nullptr);
  std::vector<double> sweep(ctx.cfg.d_sweep.data(), ctx.cfg.d_sweep.data() + ctx.cfg.d_sweep.size());
  if (sweep.empty()) sweep.push_back(ctx.cfg.d_bar());
  say(ctx, "benchmarking " + std::to_string(ctx.cfg.planners.size()) + " planners x " + std::to_string(sweep.size()) +
               " disturbance levels x " + std::to_string(ctx.cfg.trials) + " trials");
  const BenchReport rep =
      benchmark(setup, ctx.cfg.planners, ctx.cfg.trials, bench_seed(ctx), sweep, ctx.jobs);
  write_text(ctx, path_of(ctx, artifact::kBench), bench_csv(rep.rows));
  write_text(ctx, path_of(ctx, artifact::kBenchTrials), trials_csv(rep));
  json rows = json::array();
  for (const auto& r : rep.rows) {
    rows.push_back({{"planner", to_string(r.planner)},
                    {"d_bar", r.d_bar},
                    {"success_rate", r.success_rate},
                    {"agent_success_rate", r.agent_success_rate},
                    {"mean_effort", r.mean_effort},
                    {"sd_effort", r.sd_effort},
                    {"tube_inside_rate", r.tube_inside_rate},
                    {"max_violation", r.max_violation},
                    {"collisions", r.collisions},
                    {"mean_dt", r.mean_dt},
                    {"max_dt", r.max_dt}});
    say(ctx, std::string(to_string(r.planner)) + " d=" + fmt_double(r.d_bar) + ": success " +
                 fmt_double(r.success_rate) + ", effort " + fmt_double(r.mean_effort) + ", mean dt " +
                 fmt_double(r.mean_dt) + " s");
  }
  json s;
  s["rows"] = rows;
  return finish(ctx, "bench", inputs, {artifact::kBench, artifact::kBenchTrials}, s, {artifact::kBench});
}

BoundsSummary summarize_bounds(const std::vector<RolloutResult>& results, const TubeProfile& tube) {
  constexpr double kSlack = 1e-9;
  BoundsSummary s;
  s.trials = static_cast<int>(results.size());
  s.worst_mean_margin = -std::numeric_limits<double>::infinity();
  std::size_t len = 0;
  for (const auto& r : results) {
    len = std::max(len, r.error.size());
    const double v = r.tube.max_violation;
    if (v > kSlack) ++s.violating_trials;
    s.worst_violation = std::max(s.worst_violation, std::max(v, 0.0));
  }
  for (std::size_t k = 0; k < len; ++k) {
    double sum = 0.0, t = 0.0;
    int cnt = 0;
    for (const auto& r : results)
      if (k < r.error.size()) sum += r.error[k], t = r.traj.t[k], ++cnt;
    s.worst_mean_margin = std::max(s.worst_mean_margin, sum / cnt - r_ell(tube, t));
  }
  s.mean_inside = s.worst_mean_margin <= kSlack;
  s.pass = s.mean_inside && s.violating_trials <= 0.05 * s.trials && s.worst_violation <= 0.1;
  return s;
}

std::map<std::string, std::string> cmd_verify_bounds(const RunContext& ctx, PlannerKind planner, BoundsSummary* out) {
  const auto em = load_models(ctx);
  Policy pl, pn;
  std::vector<std::string> inputs{artifact::kMetric};
  if (planner == PlannerKind::kLagros) pl = load_policy(ctx, artifact::kLagrosPolicy), inputs.push_back(artifact::kLagrosPolicy);
  if (planner == PlannerKind::kNaive) pn = load_policy(ctx, artifact::kNaivePolicy), inputs.push_back(artifact::kNaivePolicy);
  const BenchSetup setup = bench_setup(ctx, em, &pl, &pn);
  const double d = ctx.cfg.d_bar();
  const BenchReport rep =
      benchmark(setup, {planner}, ctx.cfg.trials, bench_seed(ctx), {d}, ctx.jobs);
  const BoundsSummary sum = summarize_bounds(rep.results, setup.tube);

  // Lemma-style envelope for comparison: open-loop Lipschitz constant of f over the metric box
  NaiveBoundParams nb;
  nb.L = estimate_lipschitz(em.agent, [&](const Vec&, double) { return Vec::Zero(em.agent.m); }, ctx.cfg.xd_lo,
                            ctx.cfg.xd_hi, 2000, ctx.cfg.seed);
  nb.b_bar = em.agent.b_bar;
  nb.eps_ell = ctx.cfg.eps_ell;
  nb.d_bar = d;
  std::string csv = "t,r_ell,naive_bound,mean_error,sd_error,max_error\n";
  std::size_t len = 0;
  for (const auto& r : rep.results) len = std::max(len, r.error.size());
  for (std::size_t k = 0; k < len; ++k) {
    double s1 = 0.0, s2 = 0.0, mx = 0.0, t = 0.0;
    int n = 0;
    for (const auto& r : rep.results)
      if (k < r.error.size()) s1 += r.error[k], s2 += r.error[k] * r.error[k], mx = std::max(mx, r.error[k]), t = r.traj.t[k], ++n;
    const double mean = s1 / n, sd = std::sqrt(std::max(0.0, s2 / n - mean * mean));
    csv += fmt_double(t) + "," + fmt_double(r_ell(setup.tube, t)) + "," + fmt_double(naive_bound(nb, t)) + "," +
           fmt_double(mean) + "," + fmt_double(sd) + "," + fmt_double(mx) + "\n";
  }
  write_text(ctx, path_of(ctx, artifact::kBounds), csv);
  json s;
  s["planner"] = to_string(planner);
  s["trials"] = sum.trials;
  s["violating_trials"] = sum.violating_trials;
  s["worst_violation"] = sum.worst_violation;
  s["worst_mean_margin"] = sum.worst_mean_margin;
  s["mean_inside"] = sum.mean_inside;
  s["pass"] = sum.pass;
  s["lipschitz_estimate"] = nb.L;
  say(ctx, std::string(sum.pass ? "PASS" : "FAIL") + ": " + std::to_string(sum.violating_trials) + "/" +
               std::to_string(sum.trials) + " trials leave the tube (worst by " + fmt_double(sum.worst_violation) +
               "); mean error margin " + fmt_double(sum.worst_mean_margin));
  if (out) *out = sum;
  return finish(ctx, "verify-bounds", inputs, {artifact::kBounds}, s);
}

}  // namespace lagros
