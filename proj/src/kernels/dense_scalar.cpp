#include "lagros/kernels.hpp"

namespace lagros::kernels {

namespace {

void affine(const double* X, int rows, int in, const double* W, const double* b, int out, double* Y) {
  for (int r = 0; r < rows; ++r) {
    const double* x = X + static_cast<long>(r) * in;
    double* y = Y + static_cast<long>(r) * out;
    for (int o = 0; o < out; ++o) {
      const double* w = W + static_cast<long>(o) * in;
      double acc = 0.0;
      for (int i = 0; i < in; ++i) acc += x[i] * w[i];
      y[o] = acc + b[o];
    }
  }
}

void grad_weights(const double* dY, const double* X, int rows, int in, int out, double* dW, double* db) {
  for (int r = 0; r < rows; ++r) {
    const double* x = X + static_cast<long>(r) * in;
    const double* g = dY + static_cast<long>(r) * out;
    for (int o = 0; o < out; ++o) {
      double* w = dW + static_cast<long>(o) * in;
      const double go = g[o];
      for (int i = 0; i < in; ++i) w[i] += go * x[i];
      db[o] += go;
    }
  }
}

void grad_input(const double* dY, const double* W, int rows, int in, int out, double* dX) {
  for (int r = 0; r < rows; ++r) {
    const double* g = dY + static_cast<long>(r) * out;
    double* dx = dX + static_cast<long>(r) * in;
    for (int i = 0; i < in; ++i) dx[i] = 0.0;
    for (int o = 0; o < out; ++o) {
      const double* w = W + static_cast<long>(o) * in;
      const double go = g[o];
      for (int i = 0; i < in; ++i) dx[i] += go * w[i];
    }
  }
}

}  // namespace

const DenseKernels& scalar_kernels() {
  static const DenseKernels k{"scalar", affine, grad_weights, grad_input};
  return k;
}

}  // namespace lagros::kernels
