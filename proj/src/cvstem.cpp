#include "lagros/cvstem.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace lagros {

namespace {

struct SymBasis {
  int n;
  std::vector<Mat> E;
  explicit SymBasis(int n_) : n(n_) {
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) {
        Mat e = Mat::Zero(n, n);
        e(i, j) = e(j, i) = 1.0;
        E.push_back(e);
      }
  }
  int size() const { return static_cast<int>(E.size()); }
  Mat assemble(const Vec& y, int offset = 0) const {
    Mat W = Mat::Zero(n, n);
    for (int k = 0; k < size(); ++k) W += y[offset + k] * E[k];
    return W;
  }
};

double lambda_min(const Mat& S) {
  return Eigen::SelfAdjointEigenSolver<Mat>(0.5 * (S + S.transpose()), Eigen::EigenvaluesOnly)
      .eigenvalues()(0);
}
double lambda_max(const Mat& S) {
  const Mat s = 0.5 * (S + S.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(s, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(s.rows() - 1);
}

Mat input_weight(const CvstemOptions& opt, int m) {
  return opt.R.size() ? opt.R : Mat::Identity(m, m);
}

// Contraction block -(A W + W A' + 2 alpha W + beta I - 2 nu B R^-1 B') >= 0 with
// W = sum w_k E_k at offset 0 and nu = nu_scale * y[nu_index] (or fixed when nu_index < 0).
LmiBlock contraction_block(const Mat& A, const Mat& BRB, const SymBasis& basis, double alpha,
                           double beta, int nu_index, double nu_scale) {
  const int n = basis.n;
  LmiBlock b;
  b.F0 = -beta * Mat::Identity(n, n);
  for (int k = 0; k < basis.size(); ++k) {
    const Mat& E = basis.E[k];
    Mat T = -(A * E + E * A.transpose() + 2.0 * alpha * E);
    b.terms.push_back({k, 0.5 * (T + T.transpose())});
  }
  if (nu_index >= 0)
    b.terms.push_back({nu_index, 2.0 * nu_scale * BRB});
  else
    b.F0 += 2.0 * nu_scale * BRB;
  return b;
}

void conditioning_blocks(LmiProblem& p, const SymBasis& basis, int chi_index) {
  const int n = basis.n;
  LmiBlock lo, hi;
  lo.F0 = -Mat::Identity(n, n);
  hi.F0 = Mat::Zero(n, n);
  for (int k = 0; k < basis.size(); ++k) {
    lo.terms.push_back({k, basis.E[k]});
    hi.terms.push_back({k, -basis.E[k]});
  }
  hi.terms.push_back({chi_index, Mat::Identity(n, n)});
  p.blocks.push_back(lo);
  p.blocks.push_back(hi);
}

struct PointData {
  Mat A, BRB;
};

// Joint problem over points [0, count): variables w, chi, with nu fixed at its
// cap. For fixed W the -2 nu B R^-1 B' term only relaxes the contraction LMI as
// nu grows, so the cap is optimal and fixing it is an exact reduction that keeps
// the Schur system well conditioned.
LmiProblem joint_problem(const std::vector<PointData>& pts, std::size_t count, const SymBasis& basis,
                         const CvstemOptions& opt) {
  const int nw = basis.size();
  LmiProblem p;
  p.num_vars = nw + 1;
  p.c = Vec::Zero(p.num_vars);
  p.c[nw] = 1.0;
  for (std::size_t i = 0; i < count; ++i)
    p.blocks.push_back(contraction_block(pts[i].A, pts[i].BRB, basis, opt.alpha, opt.beta, -1, opt.nu_max));
  conditioning_blocks(p, basis, nw);
  return p;
}

// Single point with nu fixed at its cap: variables w, chi.
LmiProblem point_problem(const PointData& pt, const SymBasis& basis, const CvstemOptions& opt) {
  const int nw = basis.size();
  LmiProblem p;
  p.num_vars = nw + 1;
  p.c = Vec::Zero(p.num_vars);
  p.c[nw] = 1.0;
  p.blocks.push_back(contraction_block(pt.A, pt.BRB, basis, opt.alpha, opt.beta, -1, opt.nu_max));
  conditioning_blocks(p, basis, nw);
  return p;
}

}  // namespace

void MetricTable::finalize() {
  use_time_ = false;
  for (const auto& p : points)
    if (p.t != points.front().t) use_time_ = true;
  if (points.empty()) return;
  lo_ = hi_ = key(points[0].x, points[0].xd, points[0].ud, points[0].t);
  for (const auto& p : points) {
    const Vec k = key(p.x, p.xd, p.ud, p.t);
    lo_ = lo_.cwiseMin(k);
    hi_ = hi_.cwiseMax(k);
  }
  const Vec pad = 0.1 * (hi_ - lo_) + Vec::Constant(lo_.size(), 1e-9);
  lo_ -= pad;
  hi_ += pad;
}

Vec MetricTable::key(const Vec& x, const Vec& xd, const Vec& ud, double t) const {
  Vec k(x.size() + xd.size() + ud.size() + (use_time_ ? 1 : 0));
  k << x, xd, ud;
  if (use_time_) k[k.size() - 1] = t;
  return k;
}

Mat MetricTable::eval_W(const Vec& x, const Vec& xd, const Vec& ud, double t, bool* extrapolated) const {
  if (W.empty()) throw Error("metric table is empty");
  const Vec q = key(x, xd, ud, t);
  if (extrapolated) {
    *extrapolated = lo_.size() != q.size() || (q.array() < lo_.array()).any() ||
                    (q.array() > hi_.array()).any();
  }
  if (structure == MetricStructure::kShared || W.size() == 1) return W[0];
  std::vector<std::pair<double, int>> d;
  d.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    d.push_back({(key(p.x, p.xd, p.ud, p.t) - q).squaredNorm(), static_cast<int>(i)});
  }
  if (interpolation == Interpolation::kNearest) {
    auto best = std::min_element(d.begin(), d.end());
    return W[best->second];
  }
  const int k = std::min<int>(blend_neighbors, static_cast<int>(d.size()));
  std::partial_sort(d.begin(), d.begin() + k, d.end());
  if (d[0].first == 0.0) return W[d[0].second];
  Mat out = Mat::Zero(n(), n());
  double wsum = 0.0;
  for (int i = 0; i < k; ++i) {
    const double w = 1.0 / std::sqrt(d[i].first);  // Shepard weights, power 1
    out += w * W[d[i].second];
    wsum += w;
  }
  return out / wsum;
}

MetricEval MetricTable::eval_M(const Vec& x, const Vec& xd, const Vec& ud, double t) const {
  MetricEval r;
  const Mat Wq = eval_W(x, xd, ud, t, &r.extrapolated);
  Eigen::LLT<Mat> llt(Wq);
  r.M = nu * llt.solve(Mat::Identity(Wq.rows(), Wq.cols()));
  r.M = 0.5 * (r.M + r.M.transpose());
  return r;
}

MetricTable constant_metric(const Mat& W, double nu, double chi, double alpha, const Mat& R) {
  MetricTable t;
  t.alpha = alpha;
  t.nu = nu;
  t.chi = chi;
  t.R = R;
  GridPoint p;
  p.x = p.xd = Vec::Zero(W.rows());
  p.ud = Vec::Zero(R.rows());
  t.points.push_back(p);
  t.W.push_back(W);
  t.finalize();
  return t;
}

MetricTable synthesize(const SystemModel& model, const std::vector<GridPoint>& grid,
                       const CvstemOptions& opt) {
  if (grid.empty()) throw DomainError("synthesize: empty grid");
  if (!(opt.alpha > 0)) throw DomainError("synthesize: alpha must be positive");
  if (!(opt.nu_min > 0) || opt.nu_max < opt.nu_min) throw DomainError("synthesize: need 0 < nu_min <= nu_max");
  const Mat R = input_weight(opt, model.m);
  Eigen::LLT<Mat> rl(R);
  if (rl.info() != Eigen::Success || lambda_min(R) <= 0) throw DomainError("synthesize: R must be positive definite");
  const Mat Rinv = rl.solve(Mat::Identity(model.m, model.m));

  std::vector<PointData> pts(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto& g = grid[i];
    pts[i].A = sdc_factorize(model, g.x, g.xd, g.ud, g.t);
    const Mat B = model.B(g.x, g.t);
    pts[i].BRB = B * Rinv * B.transpose();
  }
  const SymBasis basis(model.n);
  const int nw = basis.size();

  auto first_infeasible_point = [&]() -> int {
    for (std::size_t i = 0; i < pts.size(); ++i) {
      auto s = solve(point_problem(pts[i], basis, opt), opt.sdp);
      if (s.status == SdpStatus::kInfeasible) return static_cast<int>(i);
    }
    return -1;
  };

  MetricTable table;
  table.alpha = opt.alpha;
  table.beta = opt.beta;
  table.R = R;
  table.structure = opt.structure;
  table.interpolation = opt.interpolation;
  table.blend_neighbors = opt.blend_neighbors;
  table.points = grid;

  if (opt.structure == MetricStructure::kShared) {
    const LmiProblem p = joint_problem(pts, pts.size(), basis, opt);
    const SdpSolution s = solve(p, opt.sdp);
    if (s.status == SdpStatus::kInfeasible) {
      int bad = first_infeasible_point();
      if (bad < 0) {
        // every point alone is fine; find the shortest infeasible prefix
        std::size_t lo = 1, hi = pts.size();
        while (lo < hi) {
          const std::size_t mid = (lo + hi) / 2;
          if (solve(joint_problem(pts, mid, basis, opt), opt.sdp).status == SdpStatus::kInfeasible)
            hi = mid;
          else
            lo = mid + 1;
        }
        bad = static_cast<int>(lo) - 1;
      }
      throw InfeasibleError("CV-STEM infeasible at grid point " + std::to_string(bad) +
                            " (alpha=" + fmt_double(opt.alpha) + "); lower alpha");
    }
    if (s.status != SdpStatus::kOptimal)
      throw Error(std::string("CV-STEM SDP did not converge: ") + to_string(s.status));
    const Mat W = basis.assemble(s.y);
    table.nu = opt.nu_max;
    table.chi = std::max(s.y[nw], lambda_max(W));
    table.W.assign(grid.size(), W);
  } else {
    table.nu = opt.nu_max;
    table.chi = 1.0;
    table.W.resize(grid.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const SdpSolution s = solve(point_problem(pts[i], basis, opt), opt.sdp);
      if (s.status == SdpStatus::kInfeasible)
        throw InfeasibleError("CV-STEM infeasible at grid point " + std::to_string(i) +
                              " (alpha=" + fmt_double(opt.alpha) + "); lower alpha");
      if (s.status != SdpStatus::kOptimal)
        throw Error(std::string("CV-STEM point SDP did not converge: ") + to_string(s.status));
      table.W[i] = basis.assemble(s.y);
      table.chi = std::max({table.chi, s.y[nw], lambda_max(table.W[i])});
    }
  }
  table.finalize();
  return table;
}

Mat eval_Mdot(const MetricTable& table, const Vec& x, const Vec& xd, const Vec& ud, double t,
              const FlowContext& flow, double h) {
  auto dir = [](const Vec& v, const Vec& d) { return d.size() ? d : Vec(Vec::Zero(v.size())); };
  const Vec dx = dir(x, flow.xdot), dxd = dir(xd, flow.xd_dot), dud = dir(ud, flow.ud_dot);
  const Mat Mp = table.eval_M(x + h * dx, xd + h * dxd, ud + h * dud, t + h * flow.tdot).M;
  const Mat Mm = table.eval_M(x - h * dx, xd - h * dxd, ud - h * dud, t - h * flow.tdot).M;
  const Mat D = (Mp - Mm) / (2.0 * h);
  return 0.5 * (D + D.transpose());
}

double steady_state_bound(const MetricTable& table, double eps_ell, double d_bar, double b_bar) {
  return (b_bar * eps_ell + d_bar) / table.alpha * std::sqrt(table.chi);
}

CertificateReport verify_certificate(const SystemModel& model, const MetricTable& table, double tol) {
  CertificateReport rep;
  rep.min_conditioning_margin = std::numeric_limits<double>::infinity();
  rep.min_contraction_margin = std::numeric_limits<double>::infinity();
  const Mat Rinv = table.R.inverse();
  const int n = model.n;
  for (std::size_t i = 0; i < table.points.size(); ++i) {
    const auto& g = table.points[i];
    const Mat& W = table.W[i];
    const Mat A = sdc_factorize(model, g.x, g.xd, g.ud, g.t);
    const Mat B = model.B(g.x, g.t);
    const Mat C = A * W + W * A.transpose() + 2.0 * table.alpha * W + table.beta * Mat::Identity(n, n) -
                  2.0 * table.nu * B * Rinv * B.transpose();
    const double cond = std::min(lambda_min(W - Mat::Identity(n, n)),
                                 lambda_min(table.chi * Mat::Identity(n, n) - W));
    const double contr = -lambda_max(C);
    rep.min_conditioning_margin = std::min(rep.min_conditioning_margin, cond);
    rep.min_contraction_margin = std::min(rep.min_contraction_margin, contr);
    if (cond < -tol || contr < -tol) ++rep.failing_points;
  }
  return rep;
}

std::vector<GridPoint> sample_grid(int count, const Vec& xd_lo, const Vec& xd_hi, const Vec& ud_lo,
                                   const Vec& ud_hi, double radius, std::uint64_t seed) {
  auto rng = make_rng(seed, 0, 0x9d1d);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<GridPoint> grid;
  const int n = static_cast<int>(xd_lo.size());
  for (int k = 0; k < count; ++k) {
    GridPoint g;
    g.xd = xd_lo;
    for (int i = 0; i < n; ++i) g.xd[i] += (xd_hi[i] - xd_lo[i]) * u01(rng);
    g.ud = ud_lo;
    for (int i = 0; i < ud_lo.size(); ++i) g.ud[i] += (ud_hi[i] - ud_lo[i]) * u01(rng);
    Vec dir = gaussian_vec(n, rng);
    dir *= radius * std::pow(u01(rng), 1.0 / n) / dir.norm();
    g.x = g.xd + dir;
    grid.push_back(g);
  }
  return grid;
}

void MetricTable::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  const int nn = n(), m = static_cast<int>(R.rows());
  out << "# lagros-metric v1\n";
  out << "alpha," << fmt_double(alpha) << "\nnu," << fmt_double(nu) << "\nchi," << fmt_double(chi)
      << "\nbeta," << fmt_double(beta) << "\n";
  out << "structure," << (structure == MetricStructure::kShared ? "shared" : "per-point") << "\n";
  out << "interpolation," << (interpolation == Interpolation::kNearest ? "nearest" : "inverse-distance")
      << "\nblend_neighbors," << blend_neighbors << "\n";
  out << "n," << nn << "\nm," << m << "\nR";
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) out << "," << fmt_double(R(i, j));
  out << "\npoints," << points.size() << "\n";
  out << "# columns: x[n], xd[n], ud[m], t, W[n*n] row-major\n";
  for (std::size_t k = 0; k < points.size(); ++k) {
    const auto& p = points[k];
    bool first = true;
    auto put = [&](double v) {
      out << (first ? "" : ",") << fmt_double(v);
      first = false;
    };
    for (int i = 0; i < nn; ++i) put(p.x[i]);
    for (int i = 0; i < nn; ++i) put(p.xd[i]);
    for (int i = 0; i < m; ++i) put(p.ud[i]);
    put(p.t);
    for (int i = 0; i < nn; ++i)
      for (int j = 0; j < nn; ++j) put(W[k](i, j));
    out << "\n";
  }
}

MetricTable MetricTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("missing metric table " + path + " (run synthesize-metric)");
  std::string line;
  std::getline(in, line);
  if (line != "# lagros-metric v1") throw Error("unsupported metric file " + path);
  MetricTable t;
  int nn = 0, m = 0;
  std::size_t count = 0;
  auto fields = [](const std::string& s) {
    std::vector<std::string> f;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) f.push_back(item);
    return f;
  };
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto f = fields(line);
    const std::string& k = f[0];
    if (k == "alpha") t.alpha = std::stod(f[1]);
    else if (k == "nu") t.nu = std::stod(f[1]);
    else if (k == "chi") t.chi = std::stod(f[1]);
    else if (k == "beta") t.beta = std::stod(f[1]);
    else if (k == "structure") t.structure = f[1] == "shared" ? MetricStructure::kShared : MetricStructure::kPerPoint;
    else if (k == "interpolation") t.interpolation = f[1] == "nearest" ? Interpolation::kNearest : Interpolation::kInverseDistance;
    else if (k == "blend_neighbors") t.blend_neighbors = std::stoi(f[1]);
    else if (k == "n") nn = std::stoi(f[1]);
    else if (k == "m") m = std::stoi(f[1]);
    else if (k == "R") {
      t.R.resize(m, m);
      for (int i = 0; i < m * m; ++i) t.R(i / m, i % m) = std::stod(f[1 + i]);
    } else if (k == "points") {
      count = std::stoul(f[1]);
      break;
    }
  }
  for (std::size_t r = 0; r < count; ++r) {
    do {
      if (!std::getline(in, line)) throw Error("truncated metric file " + path);
    } while (line.empty() || line[0] == '#');
    auto f = fields(line);
    if (static_cast<int>(f.size()) != 2 * nn + m + 1 + nn * nn) throw Error("bad metric row in " + path);
    GridPoint p;
    p.x.resize(nn);
    p.xd.resize(nn);
    p.ud.resize(m);
    int c = 0;
    for (int i = 0; i < nn; ++i) p.x[i] = std::stod(f[c++]);
    for (int i = 0; i < nn; ++i) p.xd[i] = std::stod(f[c++]);
    for (int i = 0; i < m; ++i) p.ud[i] = std::stod(f[c++]);
    p.t = std::stod(f[c++]);
    Mat W(nn, nn);
    for (int i = 0; i < nn; ++i)
      for (int j = 0; j < nn; ++j) W(i, j) = std::stod(f[c++]);
    t.points.push_back(p);
    t.W.push_back(W);
  }
  t.finalize();
  return t;
}

}  // namespace lagros
