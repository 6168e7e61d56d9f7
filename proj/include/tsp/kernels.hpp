#pragma once

#include <cstddef>

namespace tsp::kern {

// Double-precision kernels over contiguous row-major buffers. These are the
// arithmetic inner loops of the tensor/autodiff layer. Every entry has a
// scalar reference implementation; vector variants are registered at runtime
// when the CPU supports them.
//
// Equivalence contract: elementwise kernels and matmul_acc must match the
// scalar reference bitwise (same per-element operation order, no FMA
// contraction). Reductions (sum) may reassociate and are only required to
// agree to ~1e-13 relative.
//
// Transcendental maps (exp, log, sigmoid) stay scalar on purpose: a vector
// polynomial approximation would break value equality between lanes.
struct KernelTable {
  const char* name;

  void (*add)(double* dst, const double* a, const double* b, std::size_t n);
  void (*sub)(double* dst, const double* a, const double* b, std::size_t n);
  void (*mul)(double* dst, const double* a, const double* b, std::size_t n);
  // dst += a * b, elementwise
  void (*mul_acc)(double* dst, const double* a, const double* b, std::size_t n);
  // dst = a * c
  void (*scale)(double* dst, const double* a, double c, std::size_t n);
  // dst += a * x
  void (*axpy)(double* dst, double a, const double* x, std::size_t n);
  void (*relu)(double* dst, const double* x, std::size_t n);
  // dst += (x > 0) * g
  void (*relu_grad_acc)(double* dst, const double* x, const double* g, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
  // c[m x n] += a[m x k] * b[k x n]
  void (*matmul_acc)(double* c, const double* a, const double* b,
                     std::size_t m, std::size_t k, std::size_t n);
};

const KernelTable& scalar_table();

// nullptr when the binary was built without AVX2 support or the CPU lacks it.
const KernelTable* avx2_table();

// Best table for this process. Selected once; the environment variable
// TSPDET_KERNELS=scalar|avx2 forces a specific backend.
const KernelTable& active();

}  // namespace tsp::kern
