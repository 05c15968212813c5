#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "iml/tensor.hpp"

namespace iml {

using NodeId = std::int32_t;

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  NodeId id = -1;

  const Tensor& value() const;
  bool requires_grad() const;
};

// Gradients of one scalar with respect to the requested variables, keyed by node id.
class Gradients {
 public:
  const Tensor& operator[](Var v) const { return grads_.at(v.id); }
  const Tensor& at(NodeId id) const { return grads_.at(id); }
  bool contains(Var v) const { return grads_.contains(v.id); }
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  std::map<NodeId, Tensor> grads_;
};

enum class OpKind : std::uint8_t {
  Leaf,
  MatMul,
  Add,
  Sub,
  Mul,
  Scale,
  AddBias,
  Relu,
  Exp,
  PairwiseSqDist,
  LogSumExpRows,
  LogSoftmaxRows,
  SoftmaxRows,
  KlRows,
  Pick,
  Sum,
  Mean,
};

// Build-then-backward record of tensor operations. Values are never mutated
// after they are recorded; inputs always precede the nodes that consume them.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // Leaf that gradients can be requested for.
  Var variable(Tensor value);
  // Leaf that is treated as a constant by backward().
  Var constant(Tensor value);

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  OpKind kind(NodeId id) const { return nodes_.at(id).kind; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a scalar node. Variables that the loss does not depend
  // on receive zero gradients of their own shape.
  Gradients backward(Var loss, std::span<const Var> wrt) const;

  // Recomputes every non-leaf node from its recorded inputs.
  std::vector<Tensor> replay() const;

  // Sign pattern of every relu input (true where > 0), in recording order.
  std::vector<bool> relu_pattern() const;

 private:
  struct Node {
    OpKind kind = OpKind::Leaf;
    NodeId a = -1;
    NodeId b = -1;
    double attr = 0.0;
    std::vector<std::size_t> index;
    Tensor value;
    bool requires_grad = false;
  };

  friend Var record(Tape& tape, OpKind kind, NodeId a, NodeId b, double attr, std::vector<std::size_t> index);
  static Tensor compute(const Node& node, const std::vector<Tensor>& values);
  static Tensor compute(const Node& node, const Tensor* a, const Tensor* b);

  std::vector<Node> nodes_;
};

// Differentiable operations. Operands must live on the same tape.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_bias(Var x, Var bias);
Var relu(Var x);
Var exp(Var x);
Var pairwise_sqdist(Var z, Var c);
Var logsumexp_rows(Var x);
Var log_softmax_rows(Var x);
Var softmax_rows(Var x);
Var kl_rows(Var log_p, Var log_q);
Var pick(Var x, std::vector<std::size_t> index);
Var sum(Var x);
Var mean(Var x);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Coordinates skipped because some relu input changes sign between the
  // +h and -h evaluations.
  std::size_t excluded = 0;
};

// Builds a scalar loss on the given tape from leaves bound to `params`.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

// Compares backward() against central differences with step h. The error of
// each coordinate is |analytic - numeric| / max(1, |analytic|, |numeric|).
GradCheckResult grad_check(const ScalarFn& f, std::span<const Tensor> params, double h);

}  // namespace iml
