#include "tsp/tensor.hpp"

#include <cmath>

#include "tsp/errors.hpp"
#include "tsp/kernels.hpp"
#include "tsp/rng.hpp"

namespace tsp {

Tensor Tensor::full(int r, int c, double v) {
  Tensor t(r, c);
  t.fill(v);
  return t;
}

Tensor Tensor::row(const std::vector<double>& v) {
  Tensor t(1, static_cast<int>(v.size()));
  t.d = v;
  return t;
}

Tensor Tensor::scalar(double v) {
  Tensor t(1, 1);
  t.d[0] = v;
  return t;
}

Tensor Tensor::uniform(int r, int c, double bound, Rng& rng) {
  Tensor t(r, c);
  for (double& x : t.d) x = rng.uniform(-bound, bound);
  return t;
}

void Tensor::fill(double v) {
  for (double& x : d) x = v;
}

bool Tensor::all_finite() const {
  for (double x : d) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

Tensor transposed(const Tensor& a) {
  Tensor t(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i) {
    for (int j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
  }
  return t;
}

void matmul_acc(Tensor& c, const Tensor& a, const Tensor& b) {
  if (a.cols != b.rows || c.rows != a.rows || c.cols != b.cols) {
    throw ContractError("matmul_acc: shape mismatch");
  }
  kern::active().matmul_acc(c.d.data(), a.d.data(), b.d.data(),
                            static_cast<std::size_t>(a.rows),
                            static_cast<std::size_t>(a.cols),
                            static_cast<std::size_t>(b.cols));
}

}  // namespace tsp
