#pragma once

#include <functional>
#include <vector>

#include "tsp/tensor.hpp"

namespace tsp::ad {

// Handle into a Tape. Only meaningful together with the tape that created it.
struct Value {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

// Append-only reverse-mode tape over 2-D tensors. The graph is acyclic by
// construction: parents always precede children, so creation order is a
// topological order.
//
// Gradient contract: grad always has the shape of value; backward() adds
// d(root)/d(node) into grad for every ancestor that requires gradients, so
// repeated calls accumulate until zero_grad().
class Tape {
 public:
  Value leaf(Tensor v, bool requires_grad = false);
  Value constant(Tensor v) { return leaf(std::move(v), false); }
  Value constant(double s) { return leaf(Tensor::scalar(s), false); }

  const Tensor& val(Value v) const { return nodes_[v.idx].value; }
  const Tensor& grad(Value v) const { return nodes_[v.idx].grad; }
  bool requires_grad(Value v) const { return nodes_[v.idx].requires_grad; }

  void zero_grad();
  void backward(Value root);

  int size() const { return static_cast<int>(nodes_.size()); }

  // Value of a 1x1 node.
  double scalar(Value v) const;

  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<int> parents;
    // Pushes this node's sweep gradient into its parents' sweep buffers.
    std::function<void(Tape&, int self, std::vector<Tensor>& sweep)> back;
  };

  Node& node(int idx) { return nodes_[idx]; }
  const Node& node(int idx) const { return nodes_[idx]; }
  Value emplace(Node n);

  // Sweep-buffer accessor used by backward closures; allocates zeros on first
  // touch with the shape of the target node.
  Tensor& sweep_of(std::vector<Tensor>& sweep, int idx);

 private:
  std::vector<Node> nodes_;
};

// Elementwise and structural primitives. All shape violations throw
// ContractError.
Value add(Tape& t, Value a, Value b);
Value sub(Tape& t, Value a, Value b);
Value mul(Tape& t, Value a, Value b);
Value div(Tape& t, Value a, Value b);
// b is a 1 x cols row vector broadcast over the rows of a.
Value add_rowvec(Tape& t, Value a, Value b);
Value scale(Tape& t, Value a, double c);
Value add_const(Tape& t, Value a, double c);
Value neg(Tape& t, Value a);
Value matmul(Tape& t, Value a, Value b);
Value transpose(Tape& t, Value a);
Value relu(Tape& t, Value a);
Value sigmoid(Tape& t, Value a);
Value log(Tape& t, Value a);
Value abs(Tape& t, Value a);
Value pow_const(Tape& t, Value a, double p);
Value clamp(Tape& t, Value a, double lo, double hi);
Value vmin(Tape& t, Value a, Value b);
Value vmax(Tape& t, Value a, Value b);

// Softmax along an axis: axis 1 normalizes each row, axis 0 each column.
// add_mask, when given, is added to the logits before normalization (use
// large negative entries to forbid positions).
Value softmax(Tape& t, Value a, int axis = 1, const Tensor* add_mask = nullptr);

// Row-wise layer normalization; gain and bias are 1 x cols.
Value layernorm(Tape& t, Value x, Value gain, Value bias, double eps = 1e-5);

Value concat(Tape& t, Value a, Value b, int axis);
// Half-open ranges.
Value slice(Tape& t, Value a, int r0, int r1, int c0, int c1);
// Row selection by index (duplicates allowed); backward scatter-adds.
Value gather_rows(Tape& t, Value a, const std::vector<int>& rows);
Value sum(Tape& t, Value a);
Value mean(Tape& t, Value a);

// Max relative error between analytic and central-difference gradients of a
// scalar-valued function of one tensor: |a - n| / max(|a|, |n|, 1e-8).
double grad_check(const std::function<Value(Tape&, Value)>& f, const Tensor& x, double eps);

}  // namespace tsp::ad
