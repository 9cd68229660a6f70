#include "lagros/learner.hpp"

#include "lagros/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace lagros {

namespace {

struct Forward {
  std::vector<RowMat> a;  // a[0] normalized input, a[l] post-activation, a.back() net output
  RowMat u;               // after de-normalization, before the clamp
};

void forward(const Policy& p, const RowMat& Z, Forward& f) {
  const auto& k = kernels::dense();
  const int L = static_cast<int>(p.W.size());
  f.a.resize(L + 1);
  f.a[0] = ((Z.rowwise() - p.in_shift.transpose()).array().rowwise() / p.in_scale.transpose().array()).matrix();
  for (int l = 0; l < L; ++l) {
    RowMat& out = f.a[l + 1];
    out.resize(Z.rows(), p.layers[l + 1]);
    k.affine(f.a[l].data(), static_cast<int>(Z.rows()), p.layers[l], p.W[l].data(), p.b[l].data(), p.layers[l + 1],
             out.data());
    if (l + 1 < L) out = out.array().tanh().matrix();
  }
  f.u = ((f.a[L].array().rowwise() * p.out_scale.transpose().array()).rowwise() + p.out_shift.transpose().array())
            .matrix();
}

RowMat apply_output(const Policy& p, RowMat u) {
  if (p.output == OutputTransform::kReluClamp) u = u.cwiseMax(0.0);
  return u;
}

std::string join(const double* v, int n) {
  std::string s;
  for (int i = 0; i < n; ++i) s += (i ? "," : "") + fmt_double(v[i]);
  return s;
}

std::vector<double> split_csv(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (item.find_first_not_of(" \t\r") != std::string::npos) v.push_back(std::stod(item));
  return v;
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * (v.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - i;
  return i + 1 < v.size() ? v[i] + frac * (v[i + 1] - v[i]) : v[i];
}

// Adam on all weights and biases
struct Adam {
  double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  long step = 0;
  Gradients m, v;

  explicit Adam(const Policy& p) {
    for (std::size_t l = 0; l < p.W.size(); ++l) {
      m.W.push_back(RowMat::Zero(p.W[l].rows(), p.W[l].cols()));
      m.b.push_back(Vec::Zero(p.b[l].size()));
    }
    v = m;
  }

  void update(Policy& p, const Gradients& g, double lr) {
    ++step;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
    auto apply = [&](auto& w, const auto& gw, auto& mw, auto& vw) {
      mw = b1 * mw + (1.0 - b1) * gw;
      vw = (b2 * vw.array() + (1.0 - b2) * gw.array().square()).matrix();
      w.array() -= lr * (mw.array() / c1) / ((vw.array() / c2).sqrt() + eps);
    };
    for (std::size_t l = 0; l < p.W.size(); ++l) {
      apply(p.W[l], g.W[l], m.W[l], v.W[l]);
      apply(p.b[l], g.b[l], m.b[l], v.b[l]);
    }
  }
};

RowMat take_rows(const RowMat& X, const std::vector<int>& idx, std::size_t from, std::size_t to) {
  RowMat out(static_cast<Eigen::Index>(to - from), X.cols());
  for (std::size_t i = from; i < to; ++i) out.row(static_cast<Eigen::Index>(i - from)) = X.row(idx[i]);
  return out;
}

}  // namespace

void Policy::validate() const {
  if (layers.size() < 2) throw DomainError("policy: needs at least input and output layers");
  if (W.size() != layers.size() - 1 || b.size() != W.size()) throw DomainError("policy: layer count mismatch");
  for (std::size_t l = 0; l < W.size(); ++l)
    if (W[l].rows() != layers[l + 1] || W[l].cols() != layers[l] || b[l].size() != layers[l + 1])
      throw DomainError("policy: layer " + std::to_string(l) + " has the wrong shape");
  if (in_shift.size() != input_dim() || in_scale.size() != input_dim() || out_shift.size() != output_dim() ||
      out_scale.size() != output_dim())
    throw DomainError("policy: normalization size mismatch");
}

RowMat Policy::infer_batch(const RowMat& Z) const {
  if (Z.cols() != input_dim()) throw DomainError("policy: input has " + std::to_string(Z.cols()) + " columns, expected " +
                                                 std::to_string(input_dim()));
  Forward f;
  forward(*this, Z, f);
  RowMat u = apply_output(*this, std::move(f.u));
  if (!u.allFinite()) throw DomainError("policy: non-finite output");
  if (output == OutputTransform::kReluClamp && (u.array() < 0.0).any()) throw Error("policy: clamp produced a negative output");
  return u;
}

Vec Policy::infer(const Vec& z) const {
  RowMat Z = z.transpose();
  return infer_batch(Z).row(0).transpose();
}

Vec infer(const Policy& policy, const Vec& x, const Vec& o_ell, double t) {
  Vec z(x.size() + o_ell.size() + 1);
  z << x, o_ell, t;
  return policy.infer(z);
}

Policy init_policy(const std::vector<int>& layers, OutputTransform output, std::uint64_t seed) {
  if (layers.size() < 2) throw DomainError("init_policy: needs at least two layer sizes");
  for (int s : layers)
    if (s <= 0) throw DomainError("init_policy: layer sizes must be positive");
  Policy p;
  p.layers = layers;
  p.output = output;
  p.seed = seed;
  auto rng = make_rng(seed, 0x1417);
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    const double a = 1.0 / std::sqrt(static_cast<double>(layers[l]));
    std::uniform_real_distribution<double> u(-a, a);
    RowMat W(layers[l + 1], layers[l]);
    for (int i = 0; i < W.size(); ++i) W.data()[i] = u(rng);
    Vec b(layers[l + 1]);
    for (int i = 0; i < b.size(); ++i) b[i] = u(rng);
    // output layer starts at zero: the initial policy is the label center
    if (l + 2 == layers.size()) W.setZero(), b.setZero();
    p.W.push_back(std::move(W));
    p.b.push_back(std::move(b));
  }
  p.in_shift = Vec::Zero(layers.front());
  p.in_scale = Vec::Ones(layers.front());
  p.out_shift = Vec::Zero(layers.back());
  p.out_scale = Vec::Ones(layers.back());
  return p;
}

double loss_and_grad(const Policy& p, const RowMat& Z, const RowMat& U, bool squared, Gradients* g, double scale) {
  const int rows = static_cast<int>(Z.rows());
  if (rows == 0) throw DomainError("loss: empty batch");
  if (U.rows() != rows || U.cols() != p.output_dim()) throw DomainError("loss: label shape mismatch");
  Forward f;
  forward(p, Z, f);
  // relu-clamp is trained on the pre-clamp output: the clamp projects onto the
  // nonnegative orthant, which holds every label, so it never increases the
  // error, and the unclamped residual keeps a gradient where the clamp is flat
  const RowMat r = f.u - U;
  double loss = 0.0;
  RowMat du(rows, p.output_dim());
  for (int i = 0; i < rows; ++i) {
    const double nr = r.row(i).norm();
    loss += squared ? nr * nr : nr;
    // the norm is not differentiable at a zero residual; take the zero subgradient
    if (squared) du.row(i) = 2.0 * r.row(i);
    else du.row(i) = nr > 0.0 ? (r.row(i) / nr).eval() : Eigen::RowVectorXd::Zero(p.output_dim());
  }
  loss *= scale / rows;
  if (!g) return loss;

  const auto& k = kernels::dense();
  const int L = static_cast<int>(p.W.size());
  du *= scale / rows;
  RowMat dz = (du.array().rowwise() * p.out_scale.transpose().array()).matrix();
  g->W.resize(L);
  g->b.resize(L);
  for (int l = L - 1; l >= 0; --l) {
    g->W[l] = RowMat::Zero(p.layers[l + 1], p.layers[l]);
    g->b[l] = Vec::Zero(p.layers[l + 1]);
    k.grad_weights(dz.data(), f.a[l].data(), rows, p.layers[l], p.layers[l + 1], g->W[l].data(), g->b[l].data());
    if (l == 0) break;
    RowMat da(rows, p.layers[l]);
    k.grad_input(dz.data(), p.W[l].data(), rows, p.layers[l], p.layers[l + 1], da.data());
    dz = (da.array() * (1.0 - f.a[l].array().square())).matrix();
  }
  return loss;
}

double grad_check(const Policy& p, const RowMat& Z, const RowMat& U, bool squared, double h) {
  Gradients g;
  loss_and_grad(p, Z, U, squared, &g);
  Policy q = p;
  double worst = 0.0;
  auto probe = [&](double& w, double analytic) {
    const double w0 = w;
    w = w0 + h;
    const double lp = loss_and_grad(q, Z, U, squared, nullptr);
    w = w0 - h;
    const double lm = loss_and_grad(q, Z, U, squared, nullptr);
    w = w0;
    const double fd = (lp - lm) / (2.0 * h);
    const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-6});
    worst = std::max(worst, std::abs(fd - analytic) / denom);
  };
  for (std::size_t l = 0; l < q.W.size(); ++l) {
    for (int i = 0; i < q.W[l].size(); ++i) probe(q.W[l].data()[i], g.W[l].data()[i]);
    for (int i = 0; i < q.b[l].size(); ++i) probe(q.b[l][i], g.b[l][i]);
  }
  return worst;
}

ErrorStats estimate_epsilon(const Policy& p, const RowMat& Z, const RowMat& U) {
  ErrorStats s;
  if (Z.rows() == 0) return s;
  const RowMat out = p.infer_batch(Z);
  std::vector<double> err(Z.rows());
  for (int i = 0; i < Z.rows(); ++i) err[i] = (out.row(i) - U.row(i)).norm();
  s.count = static_cast<int>(err.size());
  s.mean = std::accumulate(err.begin(), err.end(), 0.0) / err.size();
  s.max = *std::max_element(err.begin(), err.end());
  s.p95 = percentile(err, 0.95);
  return s;
}

Policy train(const RowMat& Z, const RowMat& U, const TrainOptions& opt, TrainReport* report) {
  const int N = static_cast<int>(Z.rows());
  if (N == 0) throw DomainError("train: empty dataset");
  if (U.rows() != N) throw DomainError("train: input/label row mismatch");
  if (!Z.allFinite() || !U.allFinite()) throw DomainError("train: non-finite data");
  if (!(opt.split > 0.0 && opt.split <= 1.0) || opt.epochs < 0 || opt.batch <= 0 || !(opt.lr > 0.0))
    throw ConfigError("train: bad options");

  std::vector<int> layers{static_cast<int>(Z.cols())};
  layers.insert(layers.end(), opt.hidden.begin(), opt.hidden.end());
  layers.push_back(static_cast<int>(U.cols()));
  Policy p = init_policy(layers, opt.output, opt.seed);

  std::vector<int> perm(N);
  std::iota(perm.begin(), perm.end(), 0);
  auto rng = make_rng(opt.seed, 0x5eed);
  std::shuffle(perm.begin(), perm.end(), rng);
  const int n_train = std::max(1, static_cast<int>(std::floor(opt.split * N)));
  const RowMat Zt = take_rows(Z, perm, 0, n_train), Ut = take_rows(U, perm, 0, n_train);
  const RowMat Zv = take_rows(Z, perm, n_train, N), Uv = take_rows(U, perm, n_train, N);

  // inputs: mean/std; labels: median/MAD, since CLF labels are heavy-tailed
  for (int j = 0; j < Zt.cols(); ++j) {
    const double mu = Zt.col(j).mean();
    const double sd = std::sqrt((Zt.col(j).array() - mu).square().mean());
    p.in_shift[j] = mu;
    p.in_scale[j] = sd > 1e-12 ? sd : 1.0;
  }
  for (int j = 0; j < Ut.cols(); ++j) {
    std::vector<double> c(Ut.rows());
    for (int i = 0; i < Ut.rows(); ++i) c[i] = Ut(i, j);
    const double med = percentile(c, 0.5);
    for (double& v : c) v = std::abs(v - med);
    double mad = percentile(c, 0.5);
    // mostly-idle thrusters have a zero MAD; fall back to the RMS deviation
    if (mad <= 1e-12) mad = std::sqrt(std::inner_product(c.begin(), c.end(), c.begin(), 0.0) / c.size());
    p.out_shift[j] = med;
    p.out_scale[j] = mad > 1e-12 ? mad : 1.0;
  }

  TrainReport rep;
  rep.n_train = n_train;
  rep.n_test = N - n_train;
  Adam adam(p);
  std::vector<int> order(n_train);
  std::iota(order.begin(), order.end(), 0);
  Gradients g;
  for (int ep = 0; ep < opt.epochs; ++ep) {
    const double lr = opt.schedule == TrainOptions::Schedule::kCosine
                          ? 0.5 * opt.lr * (1.0 + std::cos(M_PI * ep / opt.epochs))
                          : opt.lr * std::pow(opt.lr_decay, ep / std::max(1, opt.lr_step));
    std::shuffle(order.begin(), order.end(), rng);
    for (int s = 0; s < n_train; s += opt.batch) {
      const int e = std::min(n_train, s + opt.batch);
      const RowMat Zb = take_rows(Zt, order, s, e), Ub = take_rows(Ut, order, s, e);
      const double l = loss_and_grad(p, Zb, Ub, opt.squared_loss, &g);
      if (!std::isfinite(l))
        throw Error("train: non-finite loss at epoch " + std::to_string(ep) + ", batch starting at " +
                    std::to_string(s) + " (lr " + fmt_double(lr) + ")");
      adam.update(p, g, lr);
    }
    rep.epoch_loss.push_back(loss_and_grad(p, Zt, Ut, opt.squared_loss, nullptr));
  }
  rep.epochs = opt.epochs;
  rep.final_train_loss = rep.epoch_loss.empty() ? loss_and_grad(p, Zt, Ut, opt.squared_loss, nullptr)
                                                 : rep.epoch_loss.back();
  rep.train = estimate_epsilon(p, Zt, Ut);
  rep.test = estimate_epsilon(p, Zv, Uv);
  rep.eps_hat = rep.test.count ? rep.test.p95 : rep.train.p95;
  if (report) *report = std::move(rep);
  return p;
}

void Policy::save(const std::string& path) const {
  validate();
  std::ofstream out(path);
  if (!out) throw Error("cannot write policy " + path);
  out << "# lagros-policy v1\n";
  out << "layers = ";
  for (std::size_t i = 0; i < layers.size(); ++i) out << (i ? "," : "") << layers[i];
  out << "\nactivation = tanh\n";
  out << "output = " << (output == OutputTransform::kReluClamp ? "relu-clamp" : "identity") << "\n";
  out << "seed = " << seed << "\n";
  out << "in_shift = " << join(in_shift.data(), in_shift.size()) << "\n";
  out << "in_scale = " << join(in_scale.data(), in_scale.size()) << "\n";
  out << "out_shift = " << join(out_shift.data(), out_shift.size()) << "\n";
  out << "out_scale = " << join(out_scale.data(), out_scale.size()) << "\n";
  for (std::size_t l = 0; l < W.size(); ++l) {
    out << "[layer " << l << "]\n";
    for (int r = 0; r < W[l].rows(); ++r) out << join(W[l].row(r).data(), static_cast<int>(W[l].cols())) << "\n";
    out << "bias = " << join(b[l].data(), static_cast<int>(b[l].size())) << "\n";
  }
  if (!out) throw Error("failed writing policy " + path);
}

Policy Policy::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read policy " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("# lagros-policy v1", 0) != 0)
    throw ConfigError(path + ": not a policy file (missing version tag)");
  Policy p;
  int layer = -1, row = 0;
  auto to_vec = [](const std::vector<double>& v) { return Vec(Eigen::Map<const Vec>(v.data(), v.size())); };
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("[layer ", 0) == 0) {
      layer = std::stoi(line.substr(7));
      if (layer != static_cast<int>(p.W.size()) || layer + 1 >= static_cast<int>(p.layers.size()))
        throw ConfigError(path + ": unexpected layer block " + line);
      p.W.emplace_back(p.layers[layer + 1], p.layers[layer]);
      row = 0;
      continue;
    }
    const auto eq = line.find(" = ");
    if (layer >= 0 && eq == std::string::npos) {
      const auto v = split_csv(line);
      if (row >= p.W[layer].rows() || static_cast<int>(v.size()) != p.W[layer].cols())
        throw ConfigError(path + ": bad weight row in layer " + std::to_string(layer));
      for (std::size_t j = 0; j < v.size(); ++j) p.W[layer](row, static_cast<Eigen::Index>(j)) = v[j];
      ++row;
      continue;
    }
    if (eq == std::string::npos) throw ConfigError(path + ": malformed line: " + line);
    const std::string key = line.substr(0, eq), val = line.substr(eq + 3);
    if (key == "layers") {
      for (double d : split_csv(val)) p.layers.push_back(static_cast<int>(d));
    } else if (key == "activation") {
      if (val != "tanh") throw ConfigError(path + ": unsupported activation " + val);
    } else if (key == "output") {
      if (val == "identity") p.output = OutputTransform::kIdentity;
      else if (val == "relu-clamp") p.output = OutputTransform::kReluClamp;
      else throw ConfigError(path + ": unknown output transform " + val);
    } else if (key == "seed") {
      p.seed = std::stoull(val);
    } else if (key == "in_shift") {
      p.in_shift = to_vec(split_csv(val));
    } else if (key == "in_scale") {
      p.in_scale = to_vec(split_csv(val));
    } else if (key == "out_shift") {
      p.out_shift = to_vec(split_csv(val));
    } else if (key == "out_scale") {
      p.out_scale = to_vec(split_csv(val));
    } else if (key == "bias" && layer >= 0) {
      if (row != p.W[layer].rows()) throw ConfigError(path + ": layer " + std::to_string(layer) + " is missing rows");
      p.b.push_back(to_vec(split_csv(val)));
    } else {
      throw ConfigError(path + ": unknown key " + key);
    }
  }
  p.validate();
  return p;
}

}  // namespace lagros
