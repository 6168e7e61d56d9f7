#pragma once

#include <cstddef>
#include <vector>

namespace tsp {

class Rng;

// Dense row-major 2-D array of doubles. Vectors are 1 x n or n x 1; scalars
// are 1 x 1. This is all the shape machinery the transformer needs.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> d;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), d(static_cast<std::size_t>(r) * c, 0.0) {}

  static Tensor zeros(int r, int c) { return Tensor(r, c); }
  static Tensor full(int r, int c, double v);
  static Tensor row(const std::vector<double>& v);
  static Tensor scalar(double v);
  // Entries uniform in [-bound, bound].
  static Tensor uniform(int r, int c, double bound, Rng& rng);

  double& at(int i, int j) { return d[static_cast<std::size_t>(i) * cols + j]; }
  double at(int i, int j) const { return d[static_cast<std::size_t>(i) * cols + j]; }

  std::size_t numel() const { return d.size(); }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
  void fill(double v);
  bool all_finite() const;
};

Tensor transposed(const Tensor& a);

// c += a * b. Shapes must already agree.
void matmul_acc(Tensor& c, const Tensor& a, const Tensor& b);

}  // namespace tsp
