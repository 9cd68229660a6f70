#pragma once

#include "lagros/common.hpp"

#include <string>
#include <vector>

namespace lagros {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class OutputTransform { kIdentity, kReluClamp };

// MLP u_L(x, o_l, t): tanh hidden layers, affine output in normalized units,
// then u = out_shift + out_scale .* y and the optional clamp at zero.
struct Policy {
  std::vector<int> layers;  // [in, hidden..., out]
  std::vector<RowMat> W;    // layer l: layers[l+1] x layers[l]
  std::vector<Vec> b;
  OutputTransform output = OutputTransform::kIdentity;
  Vec in_shift, in_scale, out_shift, out_scale;
  std::uint64_t seed = 0;

  int input_dim() const { return layers.front(); }
  int output_dim() const { return layers.back(); }

  // z = [x, o_l, t]
  Vec infer(const Vec& z) const;
  RowMat infer_batch(const RowMat& Z) const;

  void validate() const;
  void save(const std::string& path) const;
  static Policy load(const std::string& path);
};

Vec infer(const Policy& policy, const Vec& x, const Vec& o_ell, double t);

// Random weights (uniform +-1/sqrt(fan_in), the usual default for dense
// layers) and unit normalization.
Policy init_policy(const std::vector<int>& layers, OutputTransform output, std::uint64_t seed);

struct TrainOptions {
  std::vector<int> hidden = {100, 100, 100};
  int epochs = 150;
  int batch = 64;
  double lr = 1e-3;
  // cosine: lr/2 (1 + cos(pi epoch / epochs)); step: lr * lr_decay^(epoch / lr_step)
  enum class Schedule { kCosine, kStep } schedule = Schedule::kCosine;
  int lr_step = 50;
  double lr_decay = 0.3;
  double split = 0.9;
  bool squared_loss = false;
  OutputTransform output = OutputTransform::kIdentity;
  std::uint64_t seed = 0;
};

struct ErrorStats {
  double mean = 0.0, p95 = 0.0, max = 0.0;
  int count = 0;
};

struct TrainReport {
  int epochs = 0;
  std::vector<double> epoch_loss;  // full train-split loss after each epoch
  double final_train_loss = 0.0;
  ErrorStats train, test;
  double eps_hat = 0.0;  // test p95
  int n_train = 0, n_test = 0;
};

// Rows of Z are inputs [x, o_l, t]; rows of U the labels u*.
Policy train(const RowMat& Z, const RowMat& U, const TrainOptions& opt, TrainReport* report = nullptr);

struct Gradients {
  std::vector<RowMat> W;
  std::vector<Vec> b;
};

// loss = scale * mean_r ||u_L(z_r) - u_r||  (squared norm when `squared`);
// u_L is taken before the relu clamp
double loss_and_grad(const Policy& p, const RowMat& Z, const RowMat& U, bool squared, Gradients* g,
                     double scale = 1.0);

// Max relative error of backprop against central differences with step h.
double grad_check(const Policy& p, const RowMat& Z, const RowMat& U, bool squared, double h = 1e-5);

// Statistics of ||u_L - u*|| over the rows; eps_hat uses the p95.
ErrorStats estimate_epsilon(const Policy& p, const RowMat& Z, const RowMat& U);

}  // namespace lagros
