#include "lagros/config.hpp"

#include <boost/property_tree/ini_parser.hpp>

#include <fstream>
#include <map>
#include <sstream>

namespace lagros {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
}

double to_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ConfigError("'" + s + "' is not a number");
  }
  if (trim(s.substr(used)) != "") throw ConfigError("'" + s + "' is not a number");
  return v;
}

long long to_int(const std::string& s) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    throw ConfigError("'" + s + "' is not an integer");
  }
  if (trim(s.substr(used)) != "") throw ConfigError("'" + s + "' is not an integer");
  return v;
}

int to_count(const std::string& s) {
  const long long v = to_int(s);
  if (v < 0 || v > 1'000'000'000) throw ConfigError("'" + s + "' is not a valid count");
  return static_cast<int>(v);
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("'" + s + "' is not a boolean (true/false)");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

Vec to_vec(const std::string& s) {
  const auto items = split_list(s);
  Vec v(static_cast<int>(items.size()));
  for (std::size_t i = 0; i < items.size(); ++i) v[i] = to_double(items[i]);
  return v;
}

std::string join(const Vec& v) {
  std::string out;
  for (int i = 0; i < v.size(); ++i) out += (i ? ", " : "") + fmt_double(v[i]);
  return out;
}

DisturbanceKind to_disturbance(const std::string& s) {
  if (s == "zero") return DisturbanceKind::kZero;
  if (s == "constant") return DisturbanceKind::kConstantRandomDirection;
  if (s == "piecewise") return DisturbanceKind::kPiecewiseRandom;
  throw ConfigError("unknown disturbance '" + s + "' (zero, constant, piecewise)");
}

const char* disturbance_name(DisturbanceKind k) {
  switch (k) {
    case DisturbanceKind::kZero: return "zero";
    case DisturbanceKind::kConstantRandomDirection: return "constant";
    case DisturbanceKind::kPiecewiseRandom: return "piecewise";
  }
  return "?";
}

struct Key {
  const char* section;
  const char* name;
  const char* help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define NUM(sec, key, field, help)                                                  \
  Key { sec, key, help, [](RunConfig& c, const std::string& v) { c.field = to_double(v); }, \
        [](const RunConfig& c) { return fmt_double(c.field); } }
#define CNT(sec, key, field, help)                                                 \
  Key { sec, key, help, [](RunConfig& c, const std::string& v) { c.field = to_count(v); }, \
        [](const RunConfig& c) { return std::to_string(c.field); } }
#define U64(sec, key, field, help)                                                                         \
  Key { sec, key, help,                                                                                    \
        [](RunConfig& c, const std::string& v) { c.field = static_cast<std::uint64_t>(to_int(v)); }, \
        [](const RunConfig& c) { return std::to_string(c.field); } }
#define FLAG(sec, key, field, help)                                                \
  Key { sec, key, help, [](RunConfig& c, const std::string& v) { c.field = to_bool(v); }, \
        [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); } }
#define VEC(sec, key, field, help)                                               \
  Key { sec, key, help, [](RunConfig& c, const std::string& v) { c.field = to_vec(v); }, \
        [](const RunConfig& c) { return join(c.field); } }

const std::vector<Key>& keys() {
  static const std::vector<Key> k = {
      {"run", "name", "label copied into manifests", [](RunConfig& c, const std::string& v) { c.name = v; },
       [](const RunConfig& c) { return c.name; }},
      U64("run", "seed", seed, "master seed (LAGROS_SEED overrides)"),

      {"model", "kind", "cartpole | planar (drag point mass, the multi-agent stand-in)",
       [](RunConfig& c, const std::string& v) {
         if (v != "cartpole" && v != "planar") throw ConfigError("unknown model '" + v + "'");
         c.model = v;
       },
       [](const RunConfig& c) { return c.model; }},
      CNT("model", "agents", agents, "number of agents simulated as one team"),
      FLAG("model", "thrusters", thrusters, "planar: four nonnegative thrusters (relu-clamp policies)"),

      NUM("tube", "alpha", alpha, "contraction rate alpha (also used by the metric synthesis)"),
      NUM("tube", "eps_ell", eps_ell, "target learning error eps_l"),
      NUM("tube", "d_eps", d_eps, "b_bar eps_l + d_bar; the simulated disturbance bound is d_eps - b_bar eps_l"),
      NUM("tube", "r_inf", r_inf, "steady-state tube radius; 0 derives it from the metric"),
      NUM("tube", "R0", R0, "initial tube radius term R(0) sqrt(w_hi)"),

      CNT("metric", "grid_points", grid_points, "CV-STEM sample points"),
      U64("metric", "grid_seed", grid_seed, "seed of the sample grid"),
      VEC("metric", "xd_lo", xd_lo, "lower corner of the nominal-state box (one agent)"),
      VEC("metric", "xd_hi", xd_hi, "upper corner of the nominal-state box"),
      VEC("metric", "ud_lo", ud_lo, "lower corner of the nominal-input box"),
      VEC("metric", "ud_hi", ud_hi, "upper corner of the nominal-input box"),
      NUM("metric", "radius", grid_radius, "tracking-error radius around each nominal sample"),
      NUM("metric", "nu_min", cvstem.nu_min, "lower bound of the metric scale nu"),
      NUM("metric", "nu_max", cvstem.nu_max, "upper bound of nu"),
      NUM("metric", "beta", cvstem.beta, "allowance for -dW/dt in the contraction LMI"),
      {"metric", "structure", "shared | per-point",
       [](RunConfig& c, const std::string& v) {
         if (v == "shared") c.cvstem.structure = MetricStructure::kShared;
         else if (v == "per-point") c.cvstem.structure = MetricStructure::kPerPoint;
         else throw ConfigError("unknown metric structure '" + v + "'");
       },
       [](const RunConfig& c) {
         return std::string(c.cvstem.structure == MetricStructure::kShared ? "shared" : "per-point");
       }},

      NUM("planner", "T", planner.T, "nominal horizon T (s)"),
      CNT("planner", "knots", planner.knots, "knot intervals N"),
      CNT("planner", "substeps", planner.substeps, "RK4 substeps per knot interval"),
      NUM("planner", "c1", planner.c1, "weight of the integrated ||u||^2"),
      NUM("planner", "c2", planner.c2, "weight of ||x - x_f||^2"),
      CNT("planner", "max_rounds", planner.max_rounds, "SCP iterations per attempt"),
      CNT("planner", "restarts", planner.restarts, "attempts from perturbed initial guesses"),
      NUM("planner", "trust_radius", planner.trust_radius, "initial trust region"),
      NUM("planner", "penalty", planner.penalty, "exact-penalty weight"),
      NUM("planner", "defect_tol", planner.defect_tol, "dynamics defect accepted as converged"),
      FLAG("planner", "erode", planner.erode, "plan in the tube-eroded set"),

      VEC("env", "start_lo", env.start_lo, "start position box, lower corner"),
      VEC("env", "start_hi", env.start_hi, "start position box, upper corner"),
      VEC("env", "goal_lo", env.goal_lo, "goal position box, lower corner"),
      VEC("env", "goal_hi", env.goal_hi, "goal position box, upper corner"),
      FLAG("env", "mirror_goal", env.mirror_goal, "flip the goal sign at random (cart-pole)"),
      CNT("env", "obstacles_min", env.obstacles_min, "fewest obstacles"),
      CNT("env", "obstacles_max", env.obstacles_max, "most obstacles"),
      NUM("env", "obstacle_radius", env.obstacle_radius, "obstacle radius"),
      NUM("env", "clearance", env.clearance, "free margin kept around starts and goals"),
      VEC("env", "ws_lo", env.ws_lo, "workspace lower corner (empty: unbounded)"),
      VEC("env", "ws_hi", env.ws_hi, "workspace upper corner"),
      NUM("env", "agent_separation", env.agent_separation, "minimum distance between agents"),

      CNT("demos", "envs", envs, "randomized environments"),
      CNT("demos", "per_traj", per_traj, "samples per agent trajectory (D)"),
      CNT("demos", "max_resamples", max_resamples, "replacement environments when planning fails"),

      NUM("observe", "radius", obs.radius, "communication radius of the local observation"),
      CNT("observe", "K", obs.K, "neighbor slots in the local observation"),

      {"train", "hidden", "hidden layer widths",
       [](RunConfig& c, const std::string& v) {
         c.train.hidden.clear();
         for (const auto& s : split_list(v)) c.train.hidden.push_back(to_count(s));
       },
       [](const RunConfig& c) {
         std::string out;
         for (std::size_t i = 0; i < c.train.hidden.size(); ++i) out += (i ? ", " : "") + std::to_string(c.train.hidden[i]);
         return out;
       }},
      CNT("train", "epochs", train.epochs, "passes over the training split"),
      CNT("train", "batch", train.batch, "minibatch size"),
      NUM("train", "lr", train.lr, "Adam step size"),
      {"train", "schedule", "cosine | step",
       [](RunConfig& c, const std::string& v) {
         if (v == "cosine") c.train.schedule = TrainOptions::Schedule::kCosine;
         else if (v == "step") c.train.schedule = TrainOptions::Schedule::kStep;
         else throw ConfigError("unknown schedule '" + v + "'");
       },
       [](const RunConfig& c) {
         return std::string(c.train.schedule == TrainOptions::Schedule::kCosine ? "cosine" : "step");
       }},
      CNT("train", "lr_step", train.lr_step, "epochs per decay (step schedule)"),
      NUM("train", "lr_decay", train.lr_decay, "decay factor (step schedule)"),
      NUM("train", "split", train.split, "training fraction; the rest is the test split"),
      {"train", "loss", "norm (mean ||u_L - u*||) | squared",
       [](RunConfig& c, const std::string& v) {
         if (v != "norm" && v != "squared") throw ConfigError("unknown loss '" + v + "'");
         c.train.squared_loss = v == "squared";
       },
       [](const RunConfig& c) { return std::string(c.train.squared_loss ? "squared" : "norm"); }},
      {"train", "output", "identity | relu-clamp",
       [](RunConfig& c, const std::string& v) {
         if (v == "identity") c.train.output = OutputTransform::kIdentity;
         else if (v == "relu-clamp") c.train.output = OutputTransform::kReluClamp;
         else throw ConfigError("unknown output transform '" + v + "'");
       },
       [](const RunConfig& c) {
         return std::string(c.train.output == OutputTransform::kIdentity ? "identity" : "relu-clamp");
       }},

      NUM("rollout", "dt", rollout.dt, "integration step (s)"),
      NUM("rollout", "control_period", rollout.control_period, "zero-order hold of the control (s)"),
      NUM("rollout", "T", rollout.T, "nominal horizon for the failure effort (s)"),
      NUM("rollout", "T_h", rollout.T_h, "success horizon (s)"),
      {"rollout", "disturbance", "zero | constant | piecewise",
       [](RunConfig& c, const std::string& v) { c.rollout.disturbance.kind = to_disturbance(v); },
       [](const RunConfig& c) { return std::string(disturbance_name(c.rollout.disturbance.kind)); }},
      NUM("rollout", "hold", rollout.disturbance.hold_interval, "piecewise disturbance hold (s)"),

      CNT("bench", "trials", trials, "rollouts per planner and sweep point"),
      {"bench", "planners", "subset of naive, online-mp, lagros, expert",
       [](RunConfig& c, const std::string& v) {
         c.planners.clear();
         for (const auto& s : split_list(v)) c.planners.push_back(parse_planner(s));
       },
       [](const RunConfig& c) {
         std::string out;
         for (std::size_t i = 0; i < c.planners.size(); ++i) out += (i ? ", " : "") + std::string(to_string(c.planners[i]));
         return out;
       }},
      VEC("bench", "d_sweep", d_sweep, "disturbance bounds to sweep (empty: the tube's d_bar)"),
      U64("bench", "env_stream", env_stream, "RNG stream of the test environments"),
      NUM("bench", "online_horizon", online.horizon, "online MP horizon (s); 0 shrinks to the task end"),
      NUM("bench", "online_replan", online.replan_period, "online MP re-solve period (s)"),
      NUM("bench", "online_terminal_weight", online.terminal_weight, "online MP soft terminal weight"),
  };
  return k;
}

#undef NUM
#undef CNT
#undef U64
#undef FLAG
#undef VEC

void validate(const RunConfig& c) {
  if (c.agents < 1) throw ConfigError("model.agents must be at least 1");
  if (c.model == "cartpole" && c.agents != 1) throw ConfigError("the cart-pole runs with one agent");
  if (!(c.alpha > 0.0)) throw ConfigError("tube.alpha must be positive");
  if (!(c.eps_ell >= 0.0) || !(c.d_eps >= 0.0) || !(c.r_inf >= 0.0) || !(c.R0 >= 0.0))
    throw ConfigError("tube parameters must be nonnegative");
  if (c.d_bar() < 0.0) throw ConfigError("tube.d_eps is smaller than b_bar eps_l");
  if (c.planner.T <= 0.0 || c.planner.knots < 1 || c.planner.substeps < 1) throw ConfigError("bad planner horizon");
  if (c.envs < 1 || c.per_traj < 1) throw ConfigError("demos.envs and demos.per_traj must be positive");
  if (c.train.hidden.empty() || c.train.epochs < 1 || c.train.batch < 1 || !(c.train.lr > 0.0))
    throw ConfigError("bad training options");
  if (!(c.train.split > 0.0 && c.train.split < 1.0)) throw ConfigError("train.split must lie in (0, 1)");
  if (c.trials < 1) throw ConfigError("bench.trials must be positive");
  if (c.planners.empty()) throw ConfigError("bench.planners is empty");
  const int pd = c.model == "cartpole" ? 1 : 2;
  auto box = [&](const Vec& lo, const Vec& hi, const char* what, int dim) {
    if (lo.size() != dim || hi.size() != dim) throw ConfigError(std::string(what) + " needs " + std::to_string(dim) + " values");
    if (((hi - lo).array() < 0.0).any()) throw ConfigError(std::string(what) + ": upper corner below lower corner");
  };
  box(c.xd_lo, c.xd_hi, "metric.xd_lo/xd_hi", 4);
  box(c.ud_lo, c.ud_hi, "metric.ud_lo/ud_hi", c.agent_model().m);
  box(c.env.start_lo, c.env.start_hi, "env.start_lo/start_hi", pd);
  box(c.env.goal_lo, c.env.goal_hi, "env.goal_lo/goal_hi", pd);
  if (c.env.ws_lo.size() != c.env.ws_hi.size() || (c.env.ws_lo.size() != 0 && c.env.ws_lo.size() != pd))
    throw ConfigError("env.ws_lo/ws_hi need " + std::to_string(pd) + " values each or none");
  if (c.train.output == OutputTransform::kReluClamp && c.agent_model().input.kind != InputConstraint::kNonnegative)
    throw ConfigError("train.output = relu-clamp needs a model with nonnegative inputs");
}

}  // namespace

double RunConfig::d_bar() const { return d_eps - agent_model().b_bar * eps_ell; }

SystemModel RunConfig::agent_model() const {
  if (model == "cartpole") return make_cart_pole();
  PlanarParams p;
  p.thrusters = thrusters;
  return make_planar_agent(p);
}

SystemModel RunConfig::team_model() const { return agents == 1 ? agent_model() : make_team(agent_model(), agents); }

RunConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  std::map<std::string, const Key*> index;
  for (const auto& k : keys()) index[std::string(k.section) + "." + k.name] = &k;
  RunConfig c;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config: '" + section + "' is outside any [section]");
    for (const auto& [name, value] : body) {
      const auto it = index.find(section + "." + name);
      if (it == index.end()) throw ConfigError("config: unknown key '" + name + "' in [" + section + "] (see --help)");
      try {
        it->second->set(c, trim(value.data()));
      } catch (const ConfigError& e) {
        throw ConfigError("config: " + section + "." + name + ": " + e.what());
      }
    }
  }
  c.cvstem.alpha = c.alpha;
  validate(c);
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string canonical_config(const RunConfig& c) {
  std::string out;
  for (const auto& k : keys()) out += std::string(k.section) + "." + k.name + " = " + k.get(c) + "\n";
  return out;
}

std::string config_hash(const RunConfig& c) { return sha256_hex(canonical_config(c)); }

std::string config_reference() {
  const RunConfig d;
  std::ostringstream out;
  std::string section;
  for (const auto& k : keys()) {
    if (section != k.section) {
      section = k.section;
      out << "\n[" << section << "]\n";
    }
    out << "  " << k.name << " = " << k.get(d) << "\n      " << k.help << "\n";
  }
  return out.str();
}

}  // namespace lagros
