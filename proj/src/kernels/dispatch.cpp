#include "lagros/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace lagros::kernels {

const DenseKernels& dense() {
  static const DenseKernels& k = [] () -> const DenseKernels& {
    const char* env = std::getenv("LAGROS_SIMD");
    if (env && std::strcmp(env, "scalar") == 0) return scalar_kernels();
    const DenseKernels* v = avx2_kernels();
    return v ? *v : scalar_kernels();
  }();
  return k;
}

}  // namespace lagros::kernels
