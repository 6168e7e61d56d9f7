#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "tsp/autodiff.hpp"
#include "tsp/errors.hpp"
#include "tsp/rng.hpp"

using namespace tsp;
using ad::Tape;
using ad::Value;

namespace {

Tensor random_tensor(int r, int c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(r, c);
  for (double& x : t.d) x = rng.uniform(lo, hi);
  return t;
}

// Random values bounded away from zero, for kinked ops (relu, abs).
Tensor random_offzero(int r, int c, Rng& rng) {
  Tensor t(r, c);
  for (double& x : t.d) {
    const double mag = rng.uniform(0.1, 1.0);
    x = rng.uniform01() < 0.5 ? -mag : mag;
  }
  return t;
}

}  // namespace

TEST_CASE("backward of x*x at 3 gives 6") {
  Tape t;
  Value x = t.leaf(Tensor::scalar(3.0), true);
  Value y = ad::mul(t, x, x);
  t.backward(y);
  CHECK(t.grad(x).d[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("backward of sum(sigmoid(v)) at zeros gives 0.25") {
  Tape t;
  Value v = t.leaf(Tensor::zeros(1, 2), true);
  Value y = ad::sum(t, ad::sigmoid(t, v));
  t.backward(y);
  CHECK(t.grad(v).d[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(t.grad(v).d[1] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("softmax dot product gradient matches finite differences") {
  Rng rng(42);
  const Tensor c = random_tensor(1, 5, rng);
  auto f = [&c](Tape& t, Value x) {
    Value s = ad::softmax(t, x, 1);
    return ad::sum(t, ad::mul(t, s, t.constant(c)));
  };
  const double err = ad::grad_check(f, random_tensor(1, 5, rng), 1e-5);
  CHECK(err < 1e-5);
}

TEST_CASE("grad_check on sum of squares is tight") {
  Rng rng(1);
  auto f = [](Tape& t, Value x) { return ad::sum(t, ad::mul(t, x, x)); };
  CHECK(ad::grad_check(f, random_tensor(1, 4, rng), 1e-5) < 1e-6);
}

TEST_CASE("grad_check on layer norm then sum") {
  Rng rng(2);
  // Non-uniform gain: with a constant gain the row-centering makes the sum
  // independent of x.
  Tensor gain(1, 8);
  for (int i = 0; i < 8; ++i) gain.d[i] = 0.5 + 0.25 * i;
  auto f = [gain](Tape& t, Value x) {
    Value g = t.constant(gain);
    Value b = t.constant(Tensor::full(1, 8, -0.2));
    return ad::sum(t, ad::layernorm(t, x, g, b));
  };
  CHECK(ad::grad_check(f, random_tensor(1, 8, rng), 1e-5) < 1e-4);
}

TEST_CASE("every primitive passes grad_check on 20 random inputs") {
  Rng rng(3);
  struct Case {
    std::string name;
    std::function<Value(Tape&, Value)> f;
    bool offzero = false;
    bool positive = false;
  };

  // Fixed companions, captured by value so each case is deterministic.
  Rng crng(100);
  const Tensor o34 = random_tensor(3, 4, crng);
  const Tensor o43 = random_tensor(4, 3, crng);
  const Tensor o24 = random_tensor(2, 4, crng);
  const Tensor o54 = random_tensor(5, 4, crng);
  const Tensor o32 = random_tensor(3, 2, crng);
  const Tensor o36 = random_tensor(3, 6, crng);
  const Tensor g14 = random_tensor(1, 4, crng);
  const Tensor b14 = random_tensor(1, 4, crng);

  std::vector<Case> cases;
  cases.push_back({"add", [o34](Tape& t, Value x) {
                     return ad::sum(t, ad::mul(t, ad::add(t, x, t.constant(o34)), t.constant(o34)));
                   }});
  cases.push_back({"sub", [o34](Tape& t, Value x) {
                     return ad::sum(t, ad::mul(t, ad::sub(t, t.constant(o34), x), t.constant(o34)));
                   }});
  cases.push_back({"mul", [o34](Tape& t, Value x) {
                     return ad::sum(t, ad::mul(t, x, t.constant(o34)));
                   }});
  cases.push_back({"div", [](Tape& t, Value x) {
                     Value o = t.constant(Tensor::full(3, 4, 1.7));
                     return ad::sum(t, ad::div(t, ad::add_const(t, x, 3.0), o));
                   }});
  cases.push_back({"div_denom", [o34](Tape& t, Value x) {
                     Value denom = ad::add_const(t, x, 3.0);  // keep away from 0
                     return ad::sum(t, ad::div(t, t.constant(o34), denom));
                   }});
  cases.push_back({"add_rowvec", [o34](Tape& t, Value x) {
                     Value row = ad::slice(t, x, 0, 1, 0, 4);
                     return ad::sum(t, ad::mul(t, ad::add_rowvec(t, x, row), t.constant(o34)));
                   }});
  cases.push_back({"scale", [](Tape& t, Value x) { return ad::sum(t, ad::scale(t, x, -2.5)); }});
  cases.push_back({"matmul", [o43](Tape& t, Value x) {
                     return ad::sum(t, ad::matmul(t, x, t.constant(o43)));
                   }});
  cases.push_back({"matmul_quadratic", [](Tape& t, Value x) {
                     return ad::sum(t, ad::matmul(t, x, ad::transpose(t, x)));
                   }});
  cases.push_back({"transpose", [o43](Tape& t, Value x) {
                     return ad::sum(t, ad::mul(t, ad::transpose(t, x), t.constant(o43)));
                   }});
  cases.push_back({"relu", [](Tape& t, Value x) { return ad::sum(t, ad::relu(t, x)); }, true});
  cases.push_back({"abs", [](Tape& t, Value x) { return ad::sum(t, ad::abs(t, x)); }, true});
  cases.push_back({"sigmoid", [o34](Tape& t, Value x) {
                     return ad::sum(t, ad::mul(t, ad::sigmoid(t, x), t.constant(o34)));
                   }});
  cases.push_back(
      {"log", [](Tape& t, Value x) { return ad::sum(t, ad::log(t, x)); }, false, true});
  cases.push_back({"pow_const",
                   [](Tape& t, Value x) { return ad::sum(t, ad::pow_const(t, x, 2.5)); }, false,
                   true});
  cases.push_back(
      {"clamp", [](Tape& t, Value x) { return ad::sum(t, ad::clamp(t, x, -3.0, 3.0)); }});
  cases.push_back({"vmin", [o34](Tape& t, Value x) {
                     return ad::sum(t, ad::vmin(t, x, t.constant(o34)));
                   }});
  cases.push_back({"vmax", [o34](Tape& t, Value x) {
                     return ad::sum(t, ad::vmax(t, x, t.constant(o34)));
                   }});
  cases.push_back({"softmax_rows", [o34](Tape& t, Value x) {
                     return ad::sum(t, ad::mul(t, ad::softmax(t, x, 1), t.constant(o34)));
                   }});
  cases.push_back({"softmax_cols", [o34](Tape& t, Value x) {
                     return ad::sum(t, ad::mul(t, ad::softmax(t, x, 0), t.constant(o34)));
                   }});
  cases.push_back({"softmax_masked", [o34](Tape& t, Value x) {
                     Tensor mask = Tensor::zeros(3, 4);
                     mask.at(0, 1) = -1e9;
                     mask.at(2, 3) = -1e9;
                     return ad::sum(t, ad::mul(t, ad::softmax(t, x, 1, &mask), t.constant(o34)));
                   }});
  cases.push_back({"layernorm", [g14, b14, o34](Tape& t, Value x) {
                     Value y = ad::layernorm(t, x, t.constant(g14), t.constant(b14));
                     return ad::sum(t, ad::mul(t, y, t.constant(o34)));
                   }});
  cases.push_back({"layernorm_gain", [o34](Tape& t, Value x) {
                     Value row = ad::slice(t, x, 0, 1, 0, 4);
                     Value b = t.constant(Tensor::zeros(1, 4));
                     return ad::sum(t, ad::layernorm(t, t.constant(o34), row, b));
                   }});
  cases.push_back({"concat_axis0", [o24, o54](Tape& t, Value x) {
                     Value cat = ad::concat(t, x, t.constant(o24), 0);
                     return ad::sum(t, ad::mul(t, cat, t.constant(o54)));
                   }});
  cases.push_back({"concat_axis1", [o32, o36](Tape& t, Value x) {
                     Value cat = ad::concat(t, x, t.constant(o32), 1);
                     return ad::sum(t, ad::mul(t, cat, t.constant(o36)));
                   }});
  cases.push_back(
      {"slice", [](Tape& t, Value x) { return ad::sum(t, ad::slice(t, x, 1, 3, 1, 4)); }});
  cases.push_back({"gather_rows", [](Tape& t, Value x) {
                     return ad::sum(t, ad::gather_rows(t, x, {2, 0, 2}));
                   }});
  cases.push_back({"sum", [](Tape& t, Value x) { return ad::sum(t, x); }});
  cases.push_back({"mean", [](Tape& t, Value x) { return ad::mean(t, x); }});
  cases.push_back(
      {"add_const", [o34](Tape& t, Value x) {
        return ad::sum(t, ad::mul(t, ad::add_const(t, x, 0.7), t.constant(o34)));
      }});
  cases.push_back({"neg", [](Tape& t, Value x) { return ad::sum(t, ad::neg(t, x)); }});

  for (const Case& c : cases) {
    CAPTURE(c.name);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      Tensor x = c.positive ? random_tensor(3, 4, rng, 0.2, 2.0)
                            : (c.offzero ? random_offzero(3, 4, rng) : random_tensor(3, 4, rng));
      worst = std::max(worst, ad::grad_check(c.f, x, 1e-6));
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("softmax rows are distributions and masked entries vanish") {
  Rng rng(5);
  Tape t;
  Value x = t.leaf(random_tensor(6, 9, rng, -4.0, 4.0), false);
  Tensor mask = Tensor::zeros(6, 9);
  mask.at(0, 0) = -1e9;
  mask.at(3, 5) = -1e9;
  Value s = ad::softmax(t, x, 1, &mask);
  const Tensor& sv = t.val(s);
  for (int i = 0; i < sv.rows; ++i) {
    double rowsum = 0.0;
    for (int j = 0; j < sv.cols; ++j) {
      CHECK(sv.at(i, j) >= 0.0);
      rowsum += sv.at(i, j);
    }
    CHECK(rowsum == doctest::Approx(1.0).epsilon(1e-9));
  }
  CHECK(sv.at(0, 0) < 1e-12);
  CHECK(sv.at(3, 5) < 1e-12);
}

TEST_CASE("backward twice with zeroing is bitwise identical") {
  Rng rng(6);
  Tape t;
  Value x = t.leaf(random_tensor(4, 4, rng), true);
  Value g = t.constant(Tensor::full(1, 4, 1.0));
  Value b = t.constant(Tensor::zeros(1, 4));
  Value y = ad::sum(t, ad::layernorm(t, ad::sigmoid(t, ad::matmul(t, x, x)), g, b));
  t.backward(y);
  const std::vector<double> first = t.grad(x).d;
  t.zero_grad();
  t.backward(y);
  CHECK(std::memcmp(first.data(), t.grad(x).d.data(), first.size() * sizeof(double)) == 0);
}

TEST_CASE("backward without zeroing accumulates additively") {
  Tape t;
  Value x = t.leaf(Tensor::scalar(2.0), true);
  Value y = ad::mul(t, x, x);
  t.backward(y);
  t.backward(y);
  CHECK(t.grad(x).d[0] == doctest::Approx(8.0).epsilon(1e-12));
}

TEST_CASE("non-scalar backward root is rejected") {
  Tape t;
  Value x = t.leaf(Tensor::zeros(2, 2), true);
  CHECK_THROWS_AS(t.backward(x), ContractError);
}

TEST_CASE("grad_check reports non-finite function values") {
  auto f = [](Tape& t, Value x) { return ad::sum(t, ad::log(t, x)); };
  Tensor x(1, 2);
  x.d = {-1.0, 0.5};  // log of a negative is NaN
  CHECK_THROWS_AS(ad::grad_check(f, x, 1e-6), NumericError);
}

TEST_CASE("requires_grad=false leaves never accumulate gradient") {
  Tape t;
  Value x = t.leaf(Tensor::scalar(3.0), false);
  Value w = t.leaf(Tensor::scalar(2.0), true);
  Value y = ad::mul(t, x, w);
  t.backward(y);
  CHECK(t.grad(x).d[0] == 0.0);
  CHECK(t.grad(w).d[0] == doctest::Approx(3.0));
}
