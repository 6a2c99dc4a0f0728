#ifndef DACT_TAPE_H
#define DACT_TAPE_H

#include <functional>
#include <vector>

#include "dact/tensor.h"

namespace dact {

// Handle to a node on a Tape. Only valid for the tape that produced it.
struct Value {
  int idx = -1;
};

// Define-by-run gradient tape. Every operation records its output tensor and
// a local backward rule; backward() replays the rules in reverse execution
// order, which is a valid topological order by construction. Parameter leaves
// accumulate into Parameter::grad, so repeated backward calls add up until
// zero_grad.
//
// Broadcasting is restricted to exact shape match plus a row vector over the
// rows of a matrix. Anything else is a shape error.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves.
  Value input(Tensor t);
  Value param(Parameter& p);  // one node per parameter per tape

  // Arithmetic.
  Value matmul(Value a, Value b);  // [m,k]x[k,n] -> [m,n]; [m,k]x[k] -> [m]
  Value add(Value a, Value b);
  Value sub(Value a, Value b);
  Value mul(Value a, Value b);
  Value scale(Value a, double c);
  Value tanh(Value a);
  Value sigmoid(Value a);

  // Structure.
  Value concat(const std::vector<Value>& parts, int axis);
  Value stack_rows(const std::vector<Value>& rows);  // R vectors [c] -> [R,c]
  Value slice(Value a, int start, int len);          // rank-1 segment
  Value select_row(Value m, int row);                // matrix row as vector
  Value transpose(Value m);
  Value gather_sum(Value a, std::vector<int> flat_indices);  // -> scalar
  Value add_n(const std::vector<Value>& vs);                 // same shape
  Value sum(Value a);  // all entries -> scalar

  // Reductions and normalizers.
  Value logsumexp(Value v);               // vector -> scalar, overflow safe
  Value logsumexp_rows(Value m);          // [r,c] -> [r], per row
  Value softmax(Value v);                 // vector -> vector
  Value mul_scalar(Value v, Value s);     // tensor times scalar node

  // Inverted dropout: scales kept entries by 1/(1-rate) at training time and
  // is the identity (same node) in eval mode or at rate 0.
  Value dropout(Value a, double rate, Rng& rng, bool training);

  // Accumulates dLoss/dParam into every touched Parameter's grad.
  void backward(Value loss);

  const Tensor& value(Value v) const;
  double scalar_value(Value v) const;
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor val;
    Tensor grad;
    Parameter* param = nullptr;
    // Backward rule: receives this node's value and gradient, accumulates
    // into the input nodes' gradients.
    std::function<void(Tape&, const Tensor&, const Tensor&)> back;
  };

  Value push(Tensor val,
             std::function<void(Tape&, const Tensor&, const Tensor&)> back);
  Tensor& grad_of(Value v) { return nodes_[static_cast<size_t>(v.idx)].grad; }
  const Tensor& val_of(Value v) const {
    return nodes_[static_cast<size_t>(v.idx)].val;
  }
  void check_valid(Value v) const;

  std::vector<Node> nodes_;
  std::vector<std::pair<Parameter*, int>> param_nodes_;
};

// Checks analytic gradients against central finite differences. f must build
// the loss on the provided tape deterministically from the current parameter
// values. Returns the maximum over all coordinates of
// |analytic - numeric| / max(1e-8, |analytic| + |numeric|); infinity if any
// evaluation is non-finite.
double grad_check(const std::function<Value(Tape&)>& f,
                  const std::vector<Parameter*>& params, double eps);

}  // namespace dact

#endif  // DACT_TAPE_H
