#include "tsp/autodiff.hpp"

#include <cmath>
#include <string>

#include "tsp/errors.hpp"
#include "tsp/kernels.hpp"

namespace tsp::ad {

namespace {

const kern::KernelTable& K() { return kern::active(); }

void check_same_shape(const Tape& t, Value a, Value b, const char* op) {
  if (!t.val(a).same_shape(t.val(b))) {
    throw ContractError(std::string(op) + ": shape mismatch");
  }
}

bool req(const Tape& t, Value a, Value b = Value{}) {
  return t.requires_grad(a) || (b.valid() && t.requires_grad(b));
}

}  // namespace

Value Tape::leaf(Tensor v, bool requires_grad) {
  Node n;
  n.grad = Tensor::zeros(v.rows, v.cols);
  n.value = std::move(v);
  n.requires_grad = requires_grad;
  return emplace(std::move(n));
}

Value Tape::emplace(Node n) {
  nodes_.push_back(std::move(n));
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::sweep_of(std::vector<Tensor>& sweep, int idx) {
  Tensor& s = sweep[idx];
  if (s.numel() == 0) s = Tensor::zeros(nodes_[idx].value.rows, nodes_[idx].value.cols);
  return s;
}

void Tape::zero_grad() {
  for (Node& n : nodes_) n.grad.fill(0.0);
}

double Tape::scalar(Value v) const {
  const Tensor& t = val(v);
  if (t.numel() != 1) throw ContractError("scalar: node is not 1x1");
  return t.d[0];
}

void Tape::backward(Value root) {
  if (!root.valid() || root.idx >= size()) throw ContractError("backward: invalid root");
  if (val(root).numel() != 1) throw ContractError("backward: root must be a scalar");

  // Ancestors of root, following parent edges.
  std::vector<char> reach(nodes_.size(), 0);
  std::vector<int> stack{root.idx};
  reach[root.idx] = 1;
  while (!stack.empty()) {
    const int i = stack.back();
    stack.pop_back();
    for (int p : nodes_[i].parents) {
      if (!reach[p]) {
        reach[p] = 1;
        stack.push_back(p);
      }
    }
  }

  // Fresh sweep buffers keep this call's derivative separate from whatever is
  // already accumulated in grad.
  std::vector<Tensor> sweep(nodes_.size());
  sweep_of(sweep, root.idx).d[0] = 1.0;

  for (int i = root.idx; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!reach[i] || !n.requires_grad) continue;
    if (n.back && sweep[i].numel() != 0) n.back(*this, i, sweep);
  }
  for (int i = root.idx; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!reach[i] || !n.requires_grad || sweep[i].numel() == 0) continue;
    K().add(n.grad.d.data(), n.grad.d.data(), sweep[i].d.data(), n.grad.numel());
  }
}

Value add(Tape& t, Value a, Value b) {
  check_same_shape(t, a, b, "add");
  Tape::Node n;
  n.value = Tensor::zeros(t.val(a).rows, t.val(a).cols);
  K().add(n.value.d.data(), t.val(a).d.data(), t.val(b).d.data(), n.value.numel());
  n.requires_grad = req(t, a, b);
  n.parents = {a.idx, b.idx};
  n.back = [a, b](Tape& tp, int self, std::vector<Tensor>& sw) {
    const Tensor& g = sw[self];
    Tensor& ga = tp.sweep_of(sw, a.idx);
    Tensor& gb = tp.sweep_of(sw, b.idx);
    K().add(ga.d.data(), ga.d.data(), g.d.data(), g.numel());
    K().add(gb.d.data(), gb.d.data(), g.d.data(), g.numel());
  };
  return t.emplace(std::move(n));
}

Value sub(Tape& t, Value a, Value b) {
  check_same_shape(t, a, b, "sub");
  Tape::Node n;
  n.value = Tensor::zeros(t.val(a).rows, t.val(a).cols);
  K().sub(n.value.d.data(), t.val(a).d.data(), t.val(b).d.data(), n.value.numel());
  n.requires_grad = req(t, a, b);
  n.parents = {a.idx, b.idx};
  n.back = [a, b](Tape& tp, int self, std::vector<Tensor>& sw) {
    const Tensor& g = sw[self];
    Tensor& ga = tp.sweep_of(sw, a.idx);
    Tensor& gb = tp.sweep_of(sw, b.idx);
    K().add(ga.d.data(), ga.d.data(), g.d.data(), g.numel());
    K().axpy(gb.d.data(), -1.0, g.d.data(), g.numel());
  };
  return t.emplace(std::move(n));
}

Value mul(Tape& t, Value a, Value b) {
  check_same_shape(t, a, b, "mul");
  Tape::Node n;
  n.value = Tensor::zeros(t.val(a).rows, t.val(a).cols);
  K().mul(n.value.d.data(), t.val(a).d.data(), t.val(b).d.data(), n.value.numel());
  n.requires_grad = req(t, a, b);
  n.parents = {a.idx, b.idx};
  n.back = [a, b](Tape& tp, int self, std::vector<Tensor>& sw) {
    const Tensor& g = sw[self];
    Tensor& ga = tp.sweep_of(sw, a.idx);
    Tensor& gb = tp.sweep_of(sw, b.idx);
    K().mul_acc(ga.d.data(), g.d.data(), tp.val(b).d.data(), g.numel());
    K().mul_acc(gb.d.data(), g.d.data(), tp.val(a).d.data(), g.numel());
  };
  return t.emplace(std::move(n));
}

Value div(Tape& t, Value a, Value b) {
  check_same_shape(t, a, b, "div");
  Tape::Node n;
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  n.value = Tensor::zeros(av.rows, av.cols);
  for (std::size_t i = 0; i < av.numel(); ++i) n.value.d[i] = av.d[i] / bv.d[i];
  n.requires_grad = req(t, a, b);
  n.parents = {a.idx, b.idx};
  n.back = [a, b](Tape& tp, int self, std::vector<Tensor>& sw) {
    const Tensor& g = sw[self];
    const Tensor& av2 = tp.val(a);
    const Tensor& bv2 = tp.val(b);
    Tensor& ga = tp.sweep_of(sw, a.idx);
    Tensor& gb = tp.sweep_of(sw, b.idx);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      ga.d[i] += g.d[i] / bv2.d[i];
      gb.d[i] -= g.d[i] * av2.d[i] / (bv2.d[i] * bv2.d[i]);
    }
  };
  return t.emplace(std::move(n));
}

Value add_rowvec(Tape& t, Value a, Value b) {
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  if (bv.rows != 1 || bv.cols != av.cols) throw ContractError("add_rowvec: vector shape mismatch");
  Tape::Node n;
  n.value = Tensor::zeros(av.rows, av.cols);
  for (int i = 0; i < av.rows; ++i) {
    K().add(n.value.d.data() + static_cast<std::size_t>(i) * av.cols,
            av.d.data() + static_cast<std::size_t>(i) * av.cols, bv.d.data(), av.cols);
  }
  n.requires_grad = req(t, a, b);
  n.parents = {a.idx, b.idx};
  n.back = [a, b](Tape& tp, int self, std::vector<Tensor>& sw) {
    const Tensor& g = sw[self];
    Tensor& ga = tp.sweep_of(sw, a.idx);
    Tensor& gb = tp.sweep_of(sw, b.idx);
    K().add(ga.d.data(), ga.d.data(), g.d.data(), g.numel());
    for (int i = 0; i < g.rows; ++i) {
      K().add(gb.d.data(), gb.d.data(), g.d.data() + static_cast<std::size_t>(i) * g.cols, g.cols);
    }
  };
  return t.emplace(std::move(n));
}

Value scale(Tape& t, Value a, double c) {
  Tape::Node n;
  n.value = Tensor::zeros(t.val(a).rows, t.val(a).cols);
  K().scale(n.value.d.data(), t.val(a).d.data(), c, n.value.numel());
  n.requires_grad = t.requires_grad(a);
  n.parents = {a.idx};
  n.back = [a, c](Tape& tp, int self, std::vector<Tensor>& sw) {
    const Tensor& g = sw[self];
    Tensor& ga = tp.sweep_of(sw, a.idx);
    K().axpy(ga.d.data(), c, g.d.data(), g.numel());
  };
  return t.emplace(std::move(n));
}

Value add_const(Tape& t, Value a, double c) {
  Tape::Node n;
  const Tensor& av = t.val(a);
  n.value = av;
  for (double& x : n.value.d) x += c;
  n.requires_grad = t.requires_grad(a);
  n.parents = {a.idx};
  n.back = [a](Tape& tp, int self, std::vector<Tensor>& sw) {
    const Tensor& g = sw[self];
    Tensor& ga = tp.sweep_of(sw, a.idx);
    K().add(ga.d.data(), ga.d.data(), g.d.data(), g.numel());
  };
  return t.emplace(std::move(n));
}

Value neg(Tape& t, Value a) { return scale(t, a, -1.0); }

Value matmul(Tape& t, Value a, Value b) {
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  if (av.cols != bv.rows) throw ContractError("matmul: inner dimensions differ");
  Tape::Node n;
  n.value = Tensor::zeros(av.rows, bv.cols);
  matmul_acc(n.value, av, bv);
  n.requires_grad = req(t, a, b);
  n.parents = {a.idx, b.idx};
  n.back = [a, b](Tape& tp, int self, std::vector<Tensor>& sw) {
    const Tensor& g = sw[self];
    Tensor& ga = tp.sweep_of(sw, a.idx);
    Tensor& gb = tp.sweep_of(sw, b.idx);
    matmul_acc(ga, g, transposed(tp.val(b)));
    matmul_acc(gb, transposed(tp.val(a)), g);
  };
  return t.emplace(std::move(n));
}

Value transpose(Tape& t, Value a) {
  Tape::Node n;
  n.value = transposed(t.val(a));
  n.requires_grad = t.requires_grad(a);
  n.parents = {a.idx};
  n.back = [a](Tape& tp, int self, std::vector<Tensor>& sw) {
    const Tensor gt = transposed(sw[self]);
    Tensor& ga = tp.sweep_of(sw, a.idx);
    K().add(ga.d.data(), ga.d.data(), gt.d.data(), gt.numel());
  };
  return t.emplace(std::move(n));
}

Value relu(Tape& t, Value a) {
  Tape::Node n;
  n.value = Tensor::zeros(t.val(a).rows, t.val(a).cols);
  K().relu(n.value.d.data(), t.val(a).d.data(), n.value.numel());
  n.requires_grad = t.requires_grad(a);
  n.parents = {a.idx};
  n.back = [a](Tape& tp, int self, std::vector<Tensor>& sw) {
    const Tensor& g = sw[self];
    Tensor& ga = tp.sweep_of(sw, a.idx);
    K().relu_grad_acc(ga.d.data(), tp.val(a).d.data(), g.d.data(), g.numel());
  };
  return t.emplace(std::move(n));
}

Value sigmoid(Tape& t, Value a) {
  Tape::Node n;
  const Tensor& av = t.val(a);
  n.value = Tensor::zeros(av.rows, av.cols);
  for (std::size_t i = 0; i < av.numel(); ++i) {
    const double x = av.d[i];
    if (x >= 0.0) {
      n.value.d[i] = 1.0 / (1.0 + std::exp(-x));
    } else {
      const double e = std::exp(x);
      n.value.d[i] = e / (1.0 + e);
    }
  }
  n.requires_grad = t.requires_grad(a);
  n.parents = {a.idx};
  n.back = [a](Tape& tp, int self, std::vector<Tensor>& sw) {
    const Tensor& g = sw[self];
    const Tensor& s = tp.val(Value{self});
    Tensor& ga = tp.sweep_of(sw, a.idx);
    for (std::size_t i = 0; i < g.numel(); ++i) ga.d[i] += g.d[i] * s.d[i] * (1.0 - s.d[i]);
  };
  return t.emplace(std::move(n));
}

Value log(Tape& t, Value a) {
  Tape::Node n;
  const Tensor& av = t.val(a);
  n.value = Tensor::zeros(av.rows, av.cols);
  for (std::size_t i = 0; i < av.numel(); ++i) n.value.d[i] = std::log(av.d[i]);
  n.requires_grad = t.requires_grad(a);
  n.parents = {a.idx};
  n.back = [a](Tape& tp, int self, std::vector<Tensor>& sw) {
    const Tensor& g = sw[self];
    const Tensor& x = tp.val(a);
    Tensor& ga = tp.sweep_of(sw, a.idx);
    for (std::size_t i = 0; i < g.numel(); ++i) ga.d[i] += g.d[i] / x.d[i];
  };
  return t.emplace(std::move(n));
}

Value abs(Tape& t, Value a) {
  Tape::Node n;
  const Tensor& av = t.val(a);
  n.value = Tensor::zeros(av.rows, av.cols);
  for (std::size_t i = 0; i < av.numel(); ++i) n.value.d[i] = std::abs(av.d[i]);
  n.requires_grad = t.requires_grad(a);
  n.parents = {a.idx};
  n.back = [a](Tape& tp, int self, std::vector<Tensor>& sw) {
    const Tensor& g = sw[self];
    const Tensor& x = tp.val(a);
    Tensor& ga = tp.sweep_of(sw, a.idx);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      if (x.d[i] > 0.0) {
        ga.d[i] += g.d[i];
      } else if (x.d[i] < 0.0) {
        ga.d[i] -= g.d[i];
      }
    }
  };
  return t.emplace(std::move(n));
}

Value pow_const(Tape& t, Value a, double p) {
  Tape::Node n;
  const Tensor& av = t.val(a);
  n.value = Tensor::zeros(av.rows, av.cols);
  for (std::size_t i = 0; i < av.numel(); ++i) n.value.d[i] = std::pow(av.d[i], p);
  n.requires_grad = t.requires_grad(a);
  n.parents = {a.idx};
  n.back = [a, p](Tape& tp, int self, std::vector<Tensor>& sw) {
    if (p == 0.0) return;
    const Tensor& g = sw[self];
    const Tensor& x = tp.val(a);
    Tensor& ga = tp.sweep_of(sw, a.idx);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      ga.d[i] += g.d[i] * p * std::pow(x.d[i], p - 1.0);
    }
  };
  return t.emplace(std::move(n));
}

Value clamp(Tape& t, Value a, double lo, double hi) {
  Tape::Node n;
  const Tensor& av = t.val(a);
  n.value = Tensor::zeros(av.rows, av.cols);
  for (std::size_t i = 0; i < av.numel(); ++i) {
    n.value.d[i] = av.d[i] < lo ? lo : (av.d[i] > hi ? hi : av.d[i]);
  }
  n.requires_grad = t.requires_grad(a);
  n.parents = {a.idx};
  n.back = [a, lo, hi](Tape& tp, int self, std::vector<Tensor>& sw) {
    const Tensor& g = sw[self];
    const Tensor& x = tp.val(a);
    Tensor& ga = tp.sweep_of(sw, a.idx);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      if (x.d[i] >= lo && x.d[i] <= hi) ga.d[i] += g.d[i];
    }
  };
  return t.emplace(std::move(n));
}

Value vmin(Tape& t, Value a, Value b) {
  check_same_shape(t, a, b, "vmin");
  Tape::Node n;
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  n.value = Tensor::zeros(av.rows, av.cols);
  for (std::size_t i = 0; i < av.numel(); ++i) n.value.d[i] = av.d[i] <= bv.d[i] ? av.d[i] : bv.d[i];
  n.requires_grad = req(t, a, b);
  n.parents = {a.idx, b.idx};
  n.back = [a, b](Tape& tp, int self, std::vector<Tensor>& sw) {
    const Tensor& g = sw[self];
    const Tensor& av2 = tp.val(a);
    const Tensor& bv2 = tp.val(b);
    Tensor& ga = tp.sweep_of(sw, a.idx);
    Tensor& gb = tp.sweep_of(sw, b.idx);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      if (av2.d[i] <= bv2.d[i]) {
        ga.d[i] += g.d[i];
      } else {
        gb.d[i] += g.d[i];
      }
    }
  };
  return t.emplace(std::move(n));
}

Value vmax(Tape& t, Value a, Value b) {
  check_same_shape(t, a, b, "vmax");
  Tape::Node n;
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  n.value = Tensor::zeros(av.rows, av.cols);
  for (std::size_t i = 0; i < av.numel(); ++i) n.value.d[i] = av.d[i] >= bv.d[i] ? av.d[i] : bv.d[i];
  n.requires_grad = req(t, a, b);
  n.parents = {a.idx, b.idx};
  n.back = [a, b](Tape& tp, int self, std::vector<Tensor>& sw) {
    const Tensor& g = sw[self];
    const Tensor& av2 = tp.val(a);
    const Tensor& bv2 = tp.val(b);
    Tensor& ga = tp.sweep_of(sw, a.idx);
    Tensor& gb = tp.sweep_of(sw, b.idx);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      if (av2.d[i] >= bv2.d[i]) {
        ga.d[i] += g.d[i];
      } else {
        gb.d[i] += g.d[i];
      }
    }
  };
  return t.emplace(std::move(n));
}

namespace {

Value softmax_rows(Tape& t, Value a, const Tensor* add_mask) {
  const Tensor& av = t.val(a);
  if (add_mask != nullptr && !add_mask->same_shape(av)) {
    throw ContractError("softmax: mask shape mismatch");
  }
  Tape::Node n;
  n.value = Tensor::zeros(av.rows, av.cols);
  for (int i = 0; i < av.rows; ++i) {
    double mx = -1e300;
    for (int j = 0; j < av.cols; ++j) {
      const double z = av.at(i, j) + (add_mask ? add_mask->at(i, j) : 0.0);
      if (z > mx) mx = z;
    }
    double denom = 0.0;
    for (int j = 0; j < av.cols; ++j) {
      const double z = av.at(i, j) + (add_mask ? add_mask->at(i, j) : 0.0);
      const double e = std::exp(z - mx);
      n.value.at(i, j) = e;
      denom += e;
    }
    for (int j = 0; j < av.cols; ++j) n.value.at(i, j) /= denom;
  }
  n.requires_grad = t.requires_grad(a);
  n.parents = {a.idx};
  n.back = [a](Tape& tp, int self, std::vector<Tensor>& sw) {
    const Tensor& g = sw[self];
    const Tensor& y = tp.val(Value{self});
    Tensor& ga = tp.sweep_of(sw, a.idx);
    for (int i = 0; i < g.rows; ++i) {
      double dot = 0.0;
      for (int j = 0; j < g.cols; ++j) dot += g.at(i, j) * y.at(i, j);
      for (int j = 0; j < g.cols; ++j) ga.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
    }
  };
  return t.emplace(std::move(n));
}

}  // namespace

Value softmax(Tape& t, Value a, int axis, const Tensor* add_mask) {
  if (axis == 1) return softmax_rows(t, a, add_mask);
  if (axis != 0) throw ContractError("softmax: axis must be 0 or 1");
  Value at = transpose(t, a);
  Tensor mt;
  if (add_mask != nullptr) mt = transposed(*add_mask);
  Value st = softmax_rows(t, at, add_mask ? &mt : nullptr);
  return transpose(t, st);
}

Value layernorm(Tape& t, Value x, Value gain, Value bias, double eps) {
  const Tensor& xv = t.val(x);
  const Tensor& gv = t.val(gain);
  const Tensor& bv = t.val(bias);
  if (gv.rows != 1 || gv.cols != xv.cols || bv.rows != 1 || bv.cols != xv.cols) {
    throw ContractError("layernorm: gain/bias must be 1 x cols");
  }
  const int c = xv.cols;
  Tensor inv_std(xv.rows, 1);
  Tensor mean_row(xv.rows, 1);
  Tape::Node n;
  n.value = Tensor::zeros(xv.rows, c);
  for (int i = 0; i < xv.rows; ++i) {
    const double mu = K().sum(xv.d.data() + static_cast<std::size_t>(i) * c, c) / c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) {
      const double dx = xv.at(i, j) - mu;
      var += dx * dx;
    }
    var /= c;
    const double inv = 1.0 / std::sqrt(var + eps);
    mean_row.d[i] = mu;
    inv_std.d[i] = inv;
    for (int j = 0; j < c; ++j) {
      n.value.at(i, j) = (xv.at(i, j) - mu) * inv * gv.d[j] + bv.d[j];
    }
  }
  n.requires_grad = t.requires_grad(x) || t.requires_grad(gain) || t.requires_grad(bias);
  n.parents = {x.idx, gain.idx, bias.idx};
  n.back = [x, gain, bias, inv_std, mean_row](Tape& tp, int self, std::vector<Tensor>& sw) {
    const Tensor& g = sw[self];
    const Tensor& xv2 = tp.val(x);
    const Tensor& gv2 = tp.val(gain);
    const int c2 = xv2.cols;
    Tensor& gx = tp.sweep_of(sw, x.idx);
    Tensor& gg = tp.sweep_of(sw, gain.idx);
    Tensor& gb = tp.sweep_of(sw, bias.idx);
    for (int i = 0; i < xv2.rows; ++i) {
      const double inv = inv_std.d[i];
      const double mu = mean_row.d[i];
      double mean_dxhat = 0.0;
      double mean_dxhat_xhat = 0.0;
      for (int j = 0; j < c2; ++j) {
        const double xhat = (xv2.at(i, j) - mu) * inv;
        const double dxhat = g.at(i, j) * gv2.d[j];
        mean_dxhat += dxhat;
        mean_dxhat_xhat += dxhat * xhat;
        gg.d[j] += g.at(i, j) * xhat;
        gb.d[j] += g.at(i, j);
      }
      mean_dxhat /= c2;
      mean_dxhat_xhat /= c2;
      for (int j = 0; j < c2; ++j) {
        const double xhat = (xv2.at(i, j) - mu) * inv;
        const double dxhat = g.at(i, j) * gv2.d[j];
        gx.at(i, j) += inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
      }
    }
  };
  return t.emplace(std::move(n));
}

Value concat(Tape& t, Value a, Value b, int axis) {
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  Tape::Node n;
  if (axis == 0) {
    if (av.cols != bv.cols) throw ContractError("concat: column mismatch");
    n.value = Tensor::zeros(av.rows + bv.rows, av.cols);
    std::copy(av.d.begin(), av.d.end(), n.value.d.begin());
    std::copy(bv.d.begin(), bv.d.end(), n.value.d.begin() + av.numel());
  } else if (axis == 1) {
    if (av.rows != bv.rows) throw ContractError("concat: row mismatch");
    n.value = Tensor::zeros(av.rows, av.cols + bv.cols);
    for (int i = 0; i < av.rows; ++i) {
      for (int j = 0; j < av.cols; ++j) n.value.at(i, j) = av.at(i, j);
      for (int j = 0; j < bv.cols; ++j) n.value.at(i, av.cols + j) = bv.at(i, j);
    }
  } else {
    throw ContractError("concat: axis must be 0 or 1");
  }
  n.requires_grad = req(t, a, b);
  n.parents = {a.idx, b.idx};
  const int ar = av.rows, ac = av.cols;
  n.back = [a, b, axis, ar, ac](Tape& tp, int self, std::vector<Tensor>& sw) {
    const Tensor& g = sw[self];
    Tensor& ga = tp.sweep_of(sw, a.idx);
    Tensor& gb = tp.sweep_of(sw, b.idx);
    if (axis == 0) {
      K().add(ga.d.data(), ga.d.data(), g.d.data(), ga.numel());
      K().add(gb.d.data(), gb.d.data(), g.d.data() + ga.numel(), gb.numel());
    } else {
      for (int i = 0; i < g.rows; ++i) {
        for (int j = 0; j < ac; ++j) ga.at(i, j) += g.at(i, j);
        for (int j = 0; j < g.cols - ac; ++j) gb.at(i, j) += g.at(i, ac + j);
      }
    }
    (void)ar;
  };
  return t.emplace(std::move(n));
}

Value slice(Tape& t, Value a, int r0, int r1, int c0, int c1) {
  const Tensor& av = t.val(a);
  if (r0 < 0 || c0 < 0 || r1 > av.rows || c1 > av.cols || r0 >= r1 || c0 >= c1) {
    throw ContractError("slice: range out of bounds");
  }
  Tape::Node n;
  n.value = Tensor::zeros(r1 - r0, c1 - c0);
  for (int i = r0; i < r1; ++i) {
    for (int j = c0; j < c1; ++j) n.value.at(i - r0, j - c0) = av.at(i, j);
  }
  n.requires_grad = t.requires_grad(a);
  n.parents = {a.idx};
  n.back = [a, r0, c0](Tape& tp, int self, std::vector<Tensor>& sw) {
    const Tensor& g = sw[self];
    Tensor& ga = tp.sweep_of(sw, a.idx);
    for (int i = 0; i < g.rows; ++i) {
      for (int j = 0; j < g.cols; ++j) ga.at(r0 + i, c0 + j) += g.at(i, j);
    }
  };
  return t.emplace(std::move(n));
}

Value gather_rows(Tape& t, Value a, const std::vector<int>& rows) {
  const Tensor& av = t.val(a);
  Tape::Node n;
  n.value = Tensor::zeros(static_cast<int>(rows.size()), av.cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= av.rows) throw ContractError("gather_rows: index out of range");
    for (int j = 0; j < av.cols; ++j) n.value.at(static_cast<int>(i), j) = av.at(rows[i], j);
  }
  n.requires_grad = t.requires_grad(a);
  n.parents = {a.idx};
  n.back = [a, rows](Tape& tp, int self, std::vector<Tensor>& sw) {
    const Tensor& g = sw[self];
    Tensor& ga = tp.sweep_of(sw, a.idx);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      K().add(ga.d.data() + static_cast<std::size_t>(rows[i]) * g.cols,
              ga.d.data() + static_cast<std::size_t>(rows[i]) * g.cols,
              g.d.data() + i * g.cols, g.cols);
    }
  };
  return t.emplace(std::move(n));
}

Value sum(Tape& t, Value a) {
  Tape::Node n;
  const Tensor& av = t.val(a);
  n.value = Tensor::scalar(K().sum(av.d.data(), av.numel()));
  n.requires_grad = t.requires_grad(a);
  n.parents = {a.idx};
  n.back = [a](Tape& tp, int self, std::vector<Tensor>& sw) {
    const double g = sw[self].d[0];
    Tensor& ga = tp.sweep_of(sw, a.idx);
    for (double& x : ga.d) x += g;
  };
  return t.emplace(std::move(n));
}

Value mean(Tape& t, Value a) {
  const double inv = 1.0 / static_cast<double>(t.val(a).numel());
  return scale(t, sum(t, a), inv);
}

double grad_check(const std::function<Value(Tape&, Value)>& f, const Tensor& x, double eps) {
  if (eps <= 0.0) throw ContractError("grad_check: eps must be positive");

  Tape t;
  Value xv = t.leaf(x, true);
  Value y = f(t, xv);
  if (t.val(y).numel() != 1) throw ContractError("grad_check: f must be scalar-valued");
  if (!std::isfinite(t.scalar(y))) throw NumericError("grad_check: non-finite function value");
  t.backward(y);
  const Tensor analytic = t.grad(xv);

  double worst = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    Tensor xp = x;
    Tensor xm = x;
    xp.d[i] += eps;
    xm.d[i] -= eps;
    Tape tp;
    const double fp = tp.scalar(f(tp, tp.leaf(xp, false)));
    Tape tm;
    const double fm = tm.scalar(f(tm, tm.leaf(xm, false)));
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("grad_check: non-finite function value");
    }
    const double numeric = (fp - fm) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic.d[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic.d[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace tsp::ad
