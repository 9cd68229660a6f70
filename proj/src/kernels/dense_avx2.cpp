#include "lagros/kernels.hpp"

#include <immintrin.h>

namespace lagros::kernels {

namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v), hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

inline double dot(const double* a, const double* b, int n) {
  __m256d s0 = _mm256_setzero_pd();
  int i = 0;
  for (; i + 4 <= n; i += 4) s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
  double acc = hsum(s0);
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

// y += a x
inline void axpy(double a, const double* x, double* y, int n) {
  const __m256d va = _mm256_set1_pd(a);
  int i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

// Y = X W' + b, one row against four weight rows at a time so each x load feeds four FMAs
void affine(const double* X, int rows, int in, const double* W, const double* b, int out, double* Y) {
  const int in4 = in & ~3;
  for (int r = 0; r < rows; ++r) {
    const double* x = X + static_cast<long>(r) * in;
    double* y = Y + static_cast<long>(r) * out;
    int o = 0;
    for (; o + 4 <= out; o += 4) {
      const double* w0 = W + static_cast<long>(o) * in;
      const double *w1 = w0 + in, *w2 = w1 + in, *w3 = w2 + in;
      __m256d a0 = _mm256_setzero_pd(), a1 = a0, a2 = a0, a3 = a0;
      for (int i = 0; i < in4; i += 4) {
        const __m256d xv = _mm256_loadu_pd(x + i);
        a0 = _mm256_fmadd_pd(xv, _mm256_loadu_pd(w0 + i), a0);
        a1 = _mm256_fmadd_pd(xv, _mm256_loadu_pd(w1 + i), a1);
        a2 = _mm256_fmadd_pd(xv, _mm256_loadu_pd(w2 + i), a2);
        a3 = _mm256_fmadd_pd(xv, _mm256_loadu_pd(w3 + i), a3);
      }
      double s0 = hsum(a0), s1 = hsum(a1), s2 = hsum(a2), s3 = hsum(a3);
      for (int i = in4; i < in; ++i) {
        s0 += x[i] * w0[i];
        s1 += x[i] * w1[i];
        s2 += x[i] * w2[i];
        s3 += x[i] * w3[i];
      }
      y[o] = s0 + b[o];
      y[o + 1] = s1 + b[o + 1];
      y[o + 2] = s2 + b[o + 2];
      y[o + 3] = s3 + b[o + 3];
    }
    for (; o < out; ++o) y[o] = dot(x, W + static_cast<long>(o) * in, in) + b[o];
  }
}

// dW block of 4 output rows x 8 columns held in registers while sweeping the batch
void grad_weights(const double* dY, const double* X, int rows, int in, int out, double* dW, double* db) {
  int o = 0;
  for (; o + 4 <= out; o += 4) {
    int i = 0;
    for (; i + 8 <= in; i += 8) {
      __m256d acc[4][2];
      for (int k = 0; k < 4; ++k) {
        acc[k][0] = _mm256_loadu_pd(dW + static_cast<long>(o + k) * in + i);
        acc[k][1] = _mm256_loadu_pd(dW + static_cast<long>(o + k) * in + i + 4);
      }
      for (int r = 0; r < rows; ++r) {
        const double* x = X + static_cast<long>(r) * in + i;
        const double* g = dY + static_cast<long>(r) * out + o;
        const __m256d x0 = _mm256_loadu_pd(x), x1 = _mm256_loadu_pd(x + 4);
        for (int k = 0; k < 4; ++k) {
          const __m256d gk = _mm256_broadcast_sd(g + k);
          acc[k][0] = _mm256_fmadd_pd(gk, x0, acc[k][0]);
          acc[k][1] = _mm256_fmadd_pd(gk, x1, acc[k][1]);
        }
      }
      for (int k = 0; k < 4; ++k) {
        _mm256_storeu_pd(dW + static_cast<long>(o + k) * in + i, acc[k][0]);
        _mm256_storeu_pd(dW + static_cast<long>(o + k) * in + i + 4, acc[k][1]);
      }
    }
    for (; i < in; ++i)
      for (int k = 0; k < 4; ++k) {
        double s = dW[static_cast<long>(o + k) * in + i];
        for (int r = 0; r < rows; ++r) s += dY[static_cast<long>(r) * out + o + k] * X[static_cast<long>(r) * in + i];
        dW[static_cast<long>(o + k) * in + i] = s;
      }
  }
  for (; o < out; ++o)
    for (int r = 0; r < rows; ++r)
      axpy(dY[static_cast<long>(r) * out + o], X + static_cast<long>(r) * in, dW + static_cast<long>(o) * in, in);
  for (int r = 0; r < rows; ++r) {
    const double* g = dY + static_cast<long>(r) * out;
    for (int k = 0; k < out; ++k) db[k] += g[k];
  }
}

// dX block of 4 rows x 8 columns in registers while sweeping the outputs
void grad_input(const double* dY, const double* W, int rows, int in, int out, double* dX) {
  int r = 0;
  for (; r + 4 <= rows; r += 4) {
    int i = 0;
    for (; i + 8 <= in; i += 8) {
      __m256d acc[4][2];
      for (int k = 0; k < 4; ++k) acc[k][0] = acc[k][1] = _mm256_setzero_pd();
      for (int o = 0; o < out; ++o) {
        const double* w = W + static_cast<long>(o) * in + i;
        const __m256d w0 = _mm256_loadu_pd(w), w1 = _mm256_loadu_pd(w + 4);
        for (int k = 0; k < 4; ++k) {
          const __m256d gk = _mm256_broadcast_sd(dY + static_cast<long>(r + k) * out + o);
          acc[k][0] = _mm256_fmadd_pd(gk, w0, acc[k][0]);
          acc[k][1] = _mm256_fmadd_pd(gk, w1, acc[k][1]);
        }
      }
      for (int k = 0; k < 4; ++k) {
        _mm256_storeu_pd(dX + static_cast<long>(r + k) * in + i, acc[k][0]);
        _mm256_storeu_pd(dX + static_cast<long>(r + k) * in + i + 4, acc[k][1]);
      }
    }
    for (; i < in; ++i)
      for (int k = 0; k < 4; ++k) {
        double s = 0.0;
        for (int o = 0; o < out; ++o) s += dY[static_cast<long>(r + k) * out + o] * W[static_cast<long>(o) * in + i];
        dX[static_cast<long>(r + k) * in + i] = s;
      }
  }
  for (; r < rows; ++r) {
    double* dx = dX + static_cast<long>(r) * in;
    for (int i = 0; i < in; ++i) dx[i] = 0.0;
    for (int o = 0; o < out; ++o) axpy(dY[static_cast<long>(r) * out + o], W + static_cast<long>(o) * in, dx, in);
  }
}

}  // namespace

const DenseKernels* avx2_kernels() {
  static const DenseKernels k{"avx2", affine, grad_weights, grad_input};
  __builtin_cpu_init();
  if (!__builtin_cpu_supports("avx2") || !__builtin_cpu_supports("fma")) return nullptr;
  return &k;
}

}  // namespace lagros::kernels
