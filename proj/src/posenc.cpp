#include "tsp/posenc.hpp"

#include <cmath>
#include <numbers>

#include "tsp/errors.hpp"

namespace tsp {

std::vector<double> pe_scalar(double x, int d, bool two_pi) {
  if (d <= 0 || d % 2 != 0) throw ContractError("pe_scalar: length must be positive and even");
  if (two_pi) x *= 2.0 * std::numbers::pi;
  std::vector<double> out(static_cast<std::size_t>(d));
  for (int i = 0; i < d / 2; ++i) {
    const double freq = std::pow(10000.0, 2.0 * i / d);
    out[2 * i] = std::sin(x / freq);
    out[2 * i + 1] = std::cos(x / freq);
  }
  return out;
}

std::vector<double> pe_point(double x, double y, int d_model, bool two_pi) {
  if (d_model % 4 != 0) throw ContractError("pe_point: d_model must be divisible by 4");
  std::vector<double> out = pe_scalar(x, d_model / 2, two_pi);
  const std::vector<double> ys = pe_scalar(y, d_model / 2, two_pi);
  out.insert(out.end(), ys.begin(), ys.end());
  return out;
}

std::vector<double> pe_box(const Box& b, int d_model, bool two_pi) {
  if (d_model % 8 != 0) throw ContractError("pe_box: d_model must be divisible by 8");
  const int q = d_model / 4;
  std::vector<double> out = pe_scalar(b.cx, q, two_pi);
  for (double c : {b.cy, b.w, b.h}) {
    const std::vector<double> part = pe_scalar(c, q, two_pi);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

}  // namespace tsp
