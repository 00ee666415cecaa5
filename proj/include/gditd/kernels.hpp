#pragma once

#include <cstddef>
#include <string_view>

// Inner-loop arithmetic used by the network, the descriptor head and the
// optimizer. Every kernel has a portable scalar reference and, where the
// target allows it, an AVX2/FMA variant. The variant is picked once at
// startup from the CPU feature set; GDITD_SIMD=scalar forces the reference.

namespace gditd::kernels {

struct KernelTable {
  std::string_view name;

  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // sum_j (a_j - b_j)^2
  double (*squared_distance)(const double* a, const double* b, std::size_t n);
  // One Adam step over a flat parameter block. m, v are the moment buffers;
  // step_size already carries the bias correction of the first moment and
  // v_scale the inverse bias correction of the second.
  void (*adam_update)(double* param, const double* grad, double* m, double* v, std::size_t n,
                      double beta1, double beta2, double step_size, double v_scale, double eps);
};

const KernelTable& scalar();

// nullptr when the build or the running CPU lacks AVX2+FMA.
const KernelTable* avx2();

// Table chosen at first use; stable for the life of the process.
const KernelTable& active();

}  // namespace gditd::kernels
