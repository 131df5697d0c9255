#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "vqclone/tensor.hpp"

namespace vqclone::ad {

// Handle into a Graph's tape.
struct Value {
  int id = -1;
  bool valid() const { return id >= 0; }
};

enum class Op {
  kInput,
  kParam,
  kGatherRows,
  kMatMul,
  kAdd,
  kSub,
  kMul,
  kAddRow,
  kAddScalar,
  kScale,
  kTanh,
  kRelu,
  kExp,
  kSoftmaxRows,
  kConcatRows,
  kConcatCols,
  kSliceRows,
  kSliceCols,
  kSumAll,
  kMae,
  kMse,
  kCrossEntropy,
  kStopGrad,
  kStraightThrough,
};

const char* op_name(Op op);

// Reverse-mode tape over dense double tensors. Nodes evaluate eagerly at
// construction, so the tape is always in topological order and non-finite
// values surface at the node that produced them.
//
// stop_gradient and straight_through are first-class: backward() severs or
// reroutes gradients, and refresh() (used by finite differencing) re-evaluates
// the tape under the same semantics the gradients claim -- stop_gradient
// outputs stay pinned at build-time values and straight_through re-evaluates
// as z + (q0 - z0), so central differences of the refreshed loss agree with
// the analytic estimator on every parameter.
//
// A Graph is confined to one thread; independent graphs may run in parallel.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaves.
  Value input(Tensor t);
  Value param(const std::string& name, const Tensor& t);
  bool has_param(const std::string& name) const;

  // Ops.
  Value gather_rows(Value a, std::vector<std::size_t> idx);
  Value matmul(Value a, Value b);
  Value add(Value a, Value b);
  Value sub(Value a, Value b);
  Value mul(Value a, Value b);
  Value add_row(Value a, Value r);  // broadcast 1xC row over all rows of a
  Value add_scalar(Value a, double c);
  Value scale(Value a, double c);
  Value tanh(Value a);
  Value relu(Value a);
  Value exp(Value a);
  Value softmax_rows(Value a);
  Value concat_rows(Value a, Value b);
  Value concat_cols(Value a, Value b);
  Value slice_rows(Value a, std::size_t r0, std::size_t r1);
  Value slice_cols(Value a, std::size_t c0, std::size_t c1);
  Value sum_all(Value a);
  Value mae(Value a, Value b);  // mean |a-b| over all elements
  Value mse(Value a, Value b);  // mean (a-b)^2 over all elements
  Value cross_entropy(Value probs, std::vector<std::size_t> targets);
  Value stop_gradient(Value a);
  Value straight_through(Value z, Value q);

  // Values and gradients.
  const Tensor& value(Value v) const;
  double scalar(Value v) const;
  std::size_t node_count() const { return nodes_.size(); }

  void backward(Value loss);
  bool backward_done() const { return backward_done_; }
  const Tensor& grad(Value v) const;
  const Tensor& grad(const std::string& param_name) const;
  std::map<std::string, Tensor> param_grads() const;
  const std::vector<std::pair<std::string, Value>>& params() const {
    return param_list_;
  }

  // Finite-difference support: mutate one leaf component, then re-evaluate
  // every node that depends on it (under the pinning rules above).
  double leaf_component(Value leaf, std::size_t i) const;
  void set_leaf_component(Value leaf, std::size_t i, double v);
  void refresh(Value changed_leaf);
  void refresh_all();

 private:
  struct Node {
    Op op = Op::kInput;
    int a = -1;
    int b = -1;
    Tensor val;
    Tensor grd;
    bool has_grad = false;
    double c = 0.0;
    std::size_t c0 = 0, c1 = 0;
    std::vector<std::size_t> idx;  // gather rows / cross-entropy targets
    std::string name;              // param name
    Tensor pin;                    // straight_through offset q0 - z0
    bool pinned = false;
  };

  int push(Node n);
  Value make(Op op, int a, int b);
  void compute(Node& n);
  void check_finite(const Node& n, int id) const;
  const Node& node(Value v) const;
  Node& node(Value v);
  const std::vector<char>& affected_mask(int leaf);

  std::vector<Node> nodes_;
  std::unordered_map<std::string, int> param_index_;
  std::vector<std::pair<std::string, Value>> param_list_;
  std::unordered_map<int, std::vector<char>> affected_cache_;
  bool backward_done_ = false;
};

}  // namespace vqclone::ad
