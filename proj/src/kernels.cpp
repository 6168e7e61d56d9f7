#include "tsp/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>

namespace tsp::kern {

namespace {

void add_scalar(double* dst, const double* a, const double* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] + b[i];
}

void sub_scalar(double* dst, const double* a, const double* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] - b[i];
}

void mul_scalar(double* dst, const double* a, const double* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] * b[i];
}

void mul_acc_scalar(double* dst, const double* a, const double* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] += a[i] * b[i];
}

void scale_scalar(double* dst, const double* a, double c, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] * c;
}

void axpy_scalar(double* dst, double a, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] += a * x[i];
}

void relu_scalar(double* dst, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_grad_acc_scalar(double* dst, const double* x, const double* g, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i] > 0.0) dst[i] += g[i];
  }
}

double sum_scalar(const double* x, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i];
  return s;
}

// C += A * B via rank-1 row updates: for each (i, l), c[i,:] += a[i,l] * b[l,:].
// The j loop is the vectorizable axis; per output element the accumulation
// order over l is fixed, which is what keeps SIMD variants bitwise equal.
void matmul_acc_scalar(double* c, const double* a, const double* b,
                       std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      const double ail = a[i * k + l];
      if (ail == 0.0) continue;
      const double* brow = b + l * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += ail * brow[j];
    }
  }
}

const KernelTable kScalar = {
    "scalar",        add_scalar,  sub_scalar,
    mul_scalar,      mul_acc_scalar, scale_scalar,
    axpy_scalar,     relu_scalar, relu_grad_acc_scalar,
    sum_scalar,      matmul_acc_scalar,
};

const KernelTable* select_active() {
  const char* force = std::getenv("TSPDET_KERNELS");
  if (force != nullptr) {
    const std::string want(force);
    if (want == "scalar") return &kScalar;
    if (want == "avx2") {
      const KernelTable* t = avx2_table();
      if (t == nullptr) throw std::runtime_error("TSPDET_KERNELS=avx2 requested but AVX2 is unavailable");
      return t;
    }
    throw std::runtime_error("unknown TSPDET_KERNELS value: " + want);
  }
  if (const KernelTable* t = avx2_table()) return t;
  return &kScalar;
}

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

#if !defined(TSPDET_HAVE_AVX2)
const KernelTable* avx2_table() { return nullptr; }
#endif

const KernelTable& active() {
  static const KernelTable* table = select_active();
  return *table;
}

}  // namespace tsp::kern
