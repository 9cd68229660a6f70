// Acceptance run: drives the cart-pole and multi-agent pipelines end to end and
// prints one PASS/FAIL line per criterion. Tolerances are fixed here.
#include "lagros/pipeline.hpp"

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

using namespace lagros;
namespace fs = std::filesystem;

namespace {

// pinned tolerances
constexpr double kTubeSlack = 1e-9;
constexpr double kMaxTrialViolation = 0.1;
constexpr double kMaxViolatingFraction = 0.05;
constexpr double kTubeRuntime = 120.0;
constexpr double kNaiveSuccessMax = 0.70;
constexpr double kRobustSuccessMin = 0.90;
constexpr double kEffortOverMp = 0.25;
constexpr double kFormulaTol = 1e-14;
constexpr double kSteadyStateTol = 1e-12;
constexpr double kEnvelopeSlack = 1e-9;
constexpr double kLmiTol = 1e-6;
constexpr double kFallbackTol = 1e-6;
constexpr double kLatticeTol = 1e-3;
constexpr double kEigenTol = 1e-6;
constexpr double kTeamSuccessMin = 0.80;
constexpr double kGradTol = 1e-5;
constexpr double kRealizableTol = 1e-2;

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string num(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.4g", v);
  return b;
}

// Rows of a pipeline CSV, '#' trailer lines skipped.
std::vector<std::map<std::string, std::string>> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path);
  std::string line;
  std::vector<std::string> head;
  std::vector<std::map<std::string, std::string>> rows;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string c;
    while (std::getline(ss, c, ',')) out.push_back(c);
    return out;
  };
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (head.empty()) {
      head = split(line);
      continue;
    }
    const auto cells = split(line);
    std::map<std::string, std::string> r;
    for (std::size_t i = 0; i < head.size() && i < cells.size(); ++i) r[head[i]] = cells[i];
    rows.push_back(std::move(r));
  }
  return rows;
}

struct Runs {
  RunContext cart, multi;
  double tube_seconds = 0.0;
  BoundsSummary cart_bounds;
};

Runs run_pipelines(const std::string& config_dir, const std::string& work, int jobs) {
  Runs r;
  std::ostream* log = &std::cerr;
  r.cart = make_context(load_config(config_dir + "/cartpole.cfg"), work + "/cartpole", jobs, log);
  cmd_synthesize_metric(r.cart);
  cmd_gen_demos(r.cart);
  cmd_train(r.cart);
  cmd_bench(r.cart);
  const auto t0 = std::chrono::steady_clock::now();
  cmd_verify_bounds(r.cart, PlannerKind::kLagros, &r.cart_bounds);
  r.tube_seconds = seconds_since(t0);

  r.multi = make_context(load_config(config_dir + "/multiagent.cfg"), work + "/multiagent", jobs, log);
  cmd_synthesize_metric(r.multi);
  cmd_gen_demos(r.multi);
  cmd_train(r.multi);
  cmd_bench(r.multi);
  return r;
}

Verdict a1(const Runs& r) {
  const auto& s = r.cart_bounds;
  const bool frac = s.violating_trials <= kMaxViolatingFraction * s.trials;
  const bool each = s.worst_violation <= kMaxTrialViolation;
  const bool fast = r.tube_seconds < kTubeRuntime;
  Verdict v;
  v.pass = s.mean_inside && frac && each && fast;
  v.detail = "mean error margin " + num(s.worst_mean_margin) + " (need <= " + num(kTubeSlack) + "), " +
             std::to_string(s.violating_trials) + "/" + std::to_string(s.trials) + " trials leave the tube, worst " +
             num(s.worst_violation) + ", " + num(r.tube_seconds) + " s";
  return v;
}

Verdict a2(const Runs& r) {
  std::map<std::string, std::map<std::string, std::string>> by;
  for (auto& row : read_csv(r.cart.out_dir + "/" + artifact::kBench)) by[row["planner"]] = row;
  for (const char* k : {"naive", "online-mp", "lagros"})
    if (!by.count(k)) return {false, std::string("bench.csv has no row for ") + k};
  auto val = [&](const char* p, const char* c) { return std::stod(by[p][c]); };
  const double sn = val("naive", "success_rate"), sb = val("online-mp", "success_rate"),
               sc = val("lagros", "success_rate");
  const double eb = val("online-mp", "mean_effort"), ec = val("lagros", "mean_effort");
  const double over = ec / eb - 1.0;
  Verdict v;
  v.pass = sn <= kNaiveSuccessMax && sc >= kRobustSuccessMin && sb >= kRobustSuccessMin && over <= kEffortOverMp;
  v.detail = "success naive " + num(sn) + " / online-mp " + num(sb) + " / lagros " + num(sc) +
             "; lagros effort " + num(ec) + " vs online-mp " + num(eb) + " (" + num(100 * over) + "%)";
  return v;
}

Verdict a3() {
  // the published tubes, rebuilt from their (d_eps, alpha, sqrt chi) parameterization
  struct Case {
    double r_inf, alpha, b, eps, d;
  };
  const Case cases[] = {{3.15, 0.60, 1.0, 0.0, 0.75}, {0.125, 0.30, 1.0, 0.0, 0.0375}};
  double worst = 0.0, worst_ss = 0.0;
  for (const auto& c : cases) {
    const TubeProfile p = profile_with_limit(c.r_inf, c.alpha, c.b, c.eps, c.d);
    for (int k = 0; k < 10; ++k) {
      const double t = 0.37 + 1.9 * k;
      const double want = c.r_inf * (1.0 - std::exp(-c.alpha * t));
      worst = std::max(worst, std::abs(r_ell(p, t) - want) / c.r_inf);
    }
    // metric with sqrt(chi) = r_inf alpha / d_eps must give the same limit
    const double chi = std::pow(c.r_inf * c.alpha / c.d, 2);
    MetricTable m = constant_metric(Mat::Identity(1, 1), 1.0, chi, c.alpha, Mat::Identity(1, 1));
    worst_ss = std::max(worst_ss, std::abs(steady_state_bound(m, c.eps, c.d, c.b) - c.r_inf));
    worst_ss = std::max(worst_ss, std::abs(r_ell(p, 1e4) - c.r_inf));
  }
  return {worst <= kFormulaTol && worst_ss <= kSteadyStateTol,
          "max relative error " + num(worst) + ", steady-state mismatch " + num(worst_ss)};
}

Verdict a4() {
  // xdot = L x + u_naive + d: the naive policy tracks with error eps and the
  // disturbance is bounded by d_bar; L_f = L
  const double L = 0.5, eps = 0.05, d_bar = 0.2, e0 = 0.01;
  const NaiveBoundParams nb{e0, L, 1.0, eps, d_bar};
  const auto model = make_linear(Mat::Constant(1, 1, L), Mat::Identity(1, 1));
  double min_ratio = std::numeric_limits<double>::infinity();
  bool never_exceeds = true;
  for (int s = 0; s < 100; ++s) {
    auto rng = make_rng(404, 0, s);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double sign = u(rng) < 0 ? -1.0 : 1.0;
    const double bias = eps * (0.5 + 0.5 * std::abs(u(rng)));
    DisturbanceSpec dist{DisturbanceKind::kPiecewiseRandom, d_bar, 0.2, 1000ULL + s};
    const auto tr = integrate_rk4(model, Vec::Constant(1, sign * e0 * std::abs(u(rng))),
                                  [&](double, const Vec&) { return Vec::Constant(1, sign * bias); }, dist, 1e-3,
                                  5.0 / L);
    for (std::size_t k = 1; k < tr.size(); ++k) {
      const double a = std::abs(tr.x[k][0]), b = naive_bound(nb, tr.t[k]);
      if (a > b + kEnvelopeSlack) never_exceeds = false;
      if (a > 0.0) min_ratio = std::min(min_ratio, b / a);
    }
  }
  const double grow = naive_bound(nb, 5.0 / L) / naive_bound(nb, 1.0 / L);
  return {never_exceeds && min_ratio >= 1.0 - kEnvelopeSlack && grow > 100.0,
          "min bound/actual " + num(min_ratio) + ", bound(5/L)/bound(1/L) = " + num(grow) +
              " (need > 100; the envelope's shape caps it at (e^5-1)/(e-1) = " +
              num(std::expm1(5.0) / std::expm1(1.0)) + ")"};
}

double eig_min(const Mat& S) { return Eigen::SelfAdjointEigenSolver<Mat>(0.5 * (S + S.transpose())).eigenvalues()(0); }
double eig_max(const Mat& S) {
  const auto ev = Eigen::SelfAdjointEigenSolver<Mat>(0.5 * (S + S.transpose())).eigenvalues();
  return ev(ev.size() - 1);
}

Verdict a5(const Runs& r) {
  const SystemModel model = r.cart.cfg.agent_model();
  const MetricTable t = MetricTable::load(r.cart.out_dir + "/" + artifact::kMetric);
  const int n = model.n;
  const Mat I = Mat::Identity(n, n);
  const Mat Rinv = t.R.inverse();
  int ok = 0;
  double worst = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < t.points.size(); ++i) {
    const auto& g = t.points[i];
    const Mat& W = t.W[i];
    const Mat A = sdc_factorize(model, g.x, g.xd, g.ud, g.t);
    const Mat B = model.B(g.x, g.t);
    const double cond = std::min(eig_min(W - I), eig_min(t.chi * I - W));
    const double contr =
        -eig_max(A * W + W * A.transpose() + 2.0 * t.alpha * W + t.beta * I - 2.0 * t.nu * B * Rinv * B.transpose());
    worst = std::min(worst, std::min(cond, contr));
    ok += cond >= -kLmiTol && contr >= -kLmiTol;
  }
  // fallback gain on random queries around the metric box
  auto rng = make_rng(505);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const auto& c = r.cart.cfg;
  double worst_fb = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 10000; ++k) {
    Vec xd = c.xd_lo, ud = c.ud_lo;
    for (int i = 0; i < n; ++i) xd[i] += (c.xd_hi[i] - c.xd_lo[i]) * u01(rng);
    for (int i = 0; i < ud.size(); ++i) ud[i] += (c.ud_hi[i] - c.ud_lo[i]) * u01(rng);
    Vec dir = gaussian_vec(n, rng);
    const Vec x = xd + c.grid_radius * std::pow(u01(rng), 1.0 / n) * dir / dir.norm();
    const Mat K = fallback_gain(model, t, x, xd, ud, 0.0);
    worst_fb = std::min(worst_fb, contraction_margin(model, t, x, xd, ud, 0.0, K));
  }
  return {ok == static_cast<int>(t.points.size()) && worst_fb >= -kFallbackTol,
          std::to_string(ok) + "/" + std::to_string(t.points.size()) + " grid points certified (worst margin " +
              num(worst) + "), fallback worst margin " + num(worst_fb) + " over 10^4 queries"};
}

Mat random_sym(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Mat A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = nd(rng);
  return 0.5 * (A + A.transpose());
}

double lattice_min(const LmiProblem& p) {
  // coarse-to-fine grid over the [-1, 1] box, feasibility by eigenvalues
  const int v = p.num_vars, pts = v <= 2 ? 81 : 25;
  auto feasible = [&](const Vec& y) {
    for (const auto& b : p.blocks) {
      Mat F = b.F0;
      for (const auto& [i, Fi] : b.terms) F += y[i] * Fi;
      if (eig_min(F) < 0.0) return false;
    }
    return true;
  };
  Vec center = Vec::Zero(v), best_y = center;
  double half = 1.0, best = std::numeric_limits<double>::infinity();
  for (int level = 0; level < 12; ++level) {
    const double h = 2.0 * half / (pts - 1);
    long total = 1;
    for (int i = 0; i < v; ++i) total *= pts;
    for (long idx = 0; idx < total; ++idx) {
      Vec y(v);
      long q = idx;
      for (int i = 0; i < v; ++i, q /= pts) y[i] = center[i] - half + h * (q % pts);
      if ((y.array().abs() > 1.0).any()) continue;
      const double obj = p.c.dot(y);
      if (obj < best && feasible(y)) best = obj, best_y = y;
    }
    center = best_y;
    half = 4.0 * h;
  }
  return best;
}

Verdict a6() {
  auto rng = make_rng(606);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  double worst_lat = 0.0, worst_eig = 0.0;
  bool all_optimal = true;
  for (int k = 0; k < 10; ++k) {
    const int v = 2 + k % 2;
    LmiProblem p;
    p.num_vars = v;
    p.c = gaussian_vec(v, rng);
    p.lower = -Vec::Ones(v);
    p.upper = Vec::Ones(v);
    Vec y0(v);
    for (int i = 0; i < v; ++i) y0[i] = u(rng);
    for (int b = 0; b < 1 + k % 2; ++b) {
      const int d = 2 + (k / 2) % 2;
      Mat S = random_sym(d, rng);
      LmiBlock blk;
      blk.F0 = S * S.transpose() / d + 0.1 * Mat::Identity(d, d);
      for (int i = 0; i < v; ++i) {
        Mat Fi = random_sym(d, rng);
        blk.terms.push_back({i, Fi});
        blk.F0 -= y0[i] * Fi;
      }
      p.blocks.push_back(blk);
    }
    const auto s = solve(p);
    all_optimal &= s.status == SdpStatus::kOptimal;
    worst_lat = std::max(worst_lat, std::abs(s.objective - lattice_min(p)));
  }
  for (int k = 0; k < 10; ++k) {
    const Mat S = random_sym(2 + k % 4, rng);
    LmiProblem p;
    p.num_vars = 1;
    p.c = Vec::Ones(1);
    LmiBlock b;
    b.F0 = -S;
    b.terms.push_back({0, Mat::Identity(S.rows(), S.cols())});
    p.blocks.push_back(b);
    const auto s = solve(p);
    all_optimal &= s.status == SdpStatus::kOptimal;
    worst_eig = std::max(worst_eig, std::abs(s.y[0] - eig_max(S)));
  }
  return {all_optimal && worst_lat <= kLatticeTol && worst_eig <= kEigenTol,
          "lattice gap " + num(worst_lat) + ", lambda_max gap " + num(worst_eig)};
}

Verdict a7(const Runs& r) {
  int trials = 0, success = 0, inside = 0, inside_collided = 0, collided = 0;
  for (auto& row : read_csv(r.multi.out_dir + "/" + artifact::kBenchTrials)) {
    if (row["planner"] != "lagros") continue;
    ++trials;
    success += row["success"] == "1";
    collided += row["collided"] == "1";
    if (std::stod(row["max_violation"]) <= kTubeSlack) {
      ++inside;
      inside_collided += row["collided"] == "1";
    }
  }
  const double rate = trials ? double(success) / trials : 0.0;
  return {trials > 0 && inside_collided == 0 && rate >= kTeamSuccessMin,
          "team success " + num(rate) + " over " + std::to_string(trials) + " trials; " + std::to_string(inside) +
              " stayed in the tube, " + std::to_string(inside_collided) + " of those collided (" + std::to_string(collided) + " collisions overall)"};
}

Verdict a8(const Runs& r) {
  // backprop vs central differences computed here
  auto rng = make_rng(808);
  double worst_grad = 0.0;
  for (auto out : {OutputTransform::kIdentity, OutputTransform::kReluClamp}) {
    for (bool squared : {false, true}) {
      Policy p = init_policy({4, 8, 6, 3}, out, 9);
      for (auto& b : p.b) b = gaussian_vec(b.size(), rng) * 0.3;
      const RowMat Z = RowMat::NullaryExpr(9, 4, [&] { return std::normal_distribution<double>()(rng); });
      const RowMat U = RowMat::NullaryExpr(9, 3, [&] { return std::normal_distribution<double>()(rng); });
      Gradients g;
      loss_and_grad(p, Z, U, squared, &g);
      const double h = 1e-6;
      for (std::size_t l = 0; l < p.W.size(); ++l) {
        for (int i = 0; i < p.W[l].size(); ++i) {
          Policy q = p;
          q.W[l].data()[i] += h;
          const double up = loss_and_grad(q, Z, U, squared, nullptr);
          q.W[l].data()[i] -= 2 * h;
          const double dn = loss_and_grad(q, Z, U, squared, nullptr);
          const double fd = (up - dn) / (2 * h), an = g.W[l].data()[i];
          worst_grad = std::max(worst_grad, std::abs(fd - an) / std::max(1.0, std::abs(fd) + std::abs(an)));
        }
      }
    }
  }
  // a target the architecture can represent exactly: another network of the same shape
  const Policy teacher = init_policy({3, 100, 100, 100, 2}, OutputTransform::kIdentity, 77);
  const RowMat Z = RowMat::NullaryExpr(3000, 3, [&] { return std::uniform_real_distribution<double>(-1, 1)(rng); });
  Policy tz = teacher;
  for (auto& b : tz.b) b.setZero();
  tz.W.back() = RowMat::NullaryExpr(2, 100, [&] { return std::uniform_real_distribution<double>(-0.1, 0.1)(rng); });
  const RowMat U = tz.infer_batch(Z);
  TrainReport rep;
  train(Z, U, TrainOptions{}, &rep);
  // relu-clamp outputs of the trained multi-agent policy on every demo input
  const Policy pl = Policy::load(r.multi.out_dir + "/" + artifact::kLagrosPolicy);
  const Dataset ds = Dataset::load(r.multi.out_dir + "/" + artifact::kDemos);
  const RowMat out = pl.infer_batch(ds.inputs());
  const double min_out = out.minCoeff();
  const bool clamp_ok = pl.output == OutputTransform::kReluClamp && min_out >= 0.0;
  return {worst_grad < kGradTol && rep.test.p95 < kRealizableTol && clamp_ok,
          "gradient error " + num(worst_grad) + ", realizable p95 " + num(rep.test.p95) +
              ", min relu-clamp output " + num(min_out) + " over " + std::to_string(out.rows()) + " inputs"};
}

Verdict a9(const std::string& config_dir, const std::string& work) {
  const RunConfig cfg = load_config(config_dir + "/determinism.cfg");
  std::map<std::string, std::string> h[2];
  for (int k = 0; k < 2; ++k) {
    const std::string dir = work + "/determinism_" + std::to_string(k);
    fs::remove_all(dir);
    // different worker counts: results must not depend on scheduling
    const RunContext ctx = make_context(cfg, dir, 1 + k, nullptr);
    for (const auto& m : {cmd_synthesize_metric(ctx), cmd_plan(ctx, 0), cmd_gen_demos(ctx), cmd_train(ctx),
                          cmd_bench(ctx)})
      h[k].insert(m.begin(), m.end());
    h[k].erase(artifact::kBench);  // wall-clock timing columns
  }
  int diff = 0;
  std::string first;
  for (const auto& [f, s] : h[0])
    if (!h[1].count(f) || h[1][f] != s) ++diff, first = first.empty() ? f : first;
  return {diff == 0 && h[0].size() == h[1].size(),
          std::to_string(h[0].size()) + " artifacts compared, " + std::to_string(diff) + " differ" +
              (first.empty() ? "" : " (first: " + first + ")")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::string config_dir = argc > 1 ? argv[1] : LAGROS_CONFIG_DIR;
  const std::string work = argc > 2 ? argv[2] : "acceptance_work";
  std::vector<std::pair<std::string, std::function<Verdict()>>> checks;
  Runs runs;
  bool have_runs = false;
  std::string run_error;
  try {
    runs = run_pipelines(config_dir, work, 1);
    have_runs = true;
  } catch (const std::exception& e) {
    run_error = e.what();
  }
  auto needs_runs = [&](std::function<Verdict(const Runs&)> f) {
    return [&, f] { return have_runs ? f(runs) : Verdict{false, "pipeline failed: " + run_error}; };
  };
  checks.emplace_back("A1 tube bound (cart-pole, 20 disturbed rollouts)", needs_runs(a1));
  checks.emplace_back("A2 planner comparison (cart-pole)", needs_runs(a2));
  checks.emplace_back("A3 bound formulas", a3);
  checks.emplace_back("A4 naive-policy envelope", a4);
  checks.emplace_back("A5 metric certificate and fallback gain", needs_runs(a5));
  checks.emplace_back("A6 SDP oracles", a6);
  checks.emplace_back("A7 multi-agent safety and team success", needs_runs(a7));
  checks.emplace_back("A8 learner numerics", needs_runs(a8));
  checks.emplace_back("A9 determinism", [&] { return a9(config_dir, work); });

  int failed = 0;
  for (auto& [name, f] : checks) {
    Verdict v;
    try {
      v = f();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failed += !v.pass;
    std::cout << (v.pass ? "PASS " : "FAIL ") << name << ": " << v.detail << std::endl;
  }
  std::cout << (failed ? std::to_string(failed) + " of 9 criteria failed" : "all 9 criteria passed") << std::endl;
  return failed ? 1 : 0;
}
