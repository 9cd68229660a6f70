#pragma once

// Dense kernels behind the MLP. All matrices are row-major; W is out x in.
namespace lagros::kernels {

struct DenseKernels {
  const char* name;
  // Y[r, o] = b[o] + sum_i X[r, i] W[o, i]
  void (*affine)(const double* X, int rows, int in, const double* W, const double* b, int out, double* Y);
  // dW[o, i] += sum_r dY[r, o] X[r, i];  db[o] += sum_r dY[r, o]
  void (*grad_weights)(const double* dY, const double* X, int rows, int in, int out, double* dW, double* db);
  // dX[r, i] = sum_o dY[r, o] W[o, i]
  void (*grad_input)(const double* dY, const double* W, int rows, int in, int out, double* dX);
};

const DenseKernels& scalar_kernels();
// nullptr when the CPU lacks AVX2/FMA
const DenseKernels* avx2_kernels();

// Selected once: AVX2 when available unless LAGROS_SIMD=scalar.
const DenseKernels& dense();

}  // namespace lagros::kernels
