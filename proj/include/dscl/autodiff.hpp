#pragma once

// Define-by-run reverse-mode differentiation over rank-2 tensors.
//
// A graph is built fresh for every training step. Nodes own their value and
// (lazily allocated) gradient; backward() walks the graph once in reverse
// topological order, so shared subexpressions accumulate correctly.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "dscl/tensor.hpp"

namespace dscl::ad {

struct Node {
  Tensor value;
  Tensor grad;  // empty until something accumulates into it
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;
  bool backward_done = false;

  // Zero-initialized gradient buffer shaped like value.
  Tensor& grad_buffer();
};

using NodePtr = std::shared_ptr<Node>;

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  static Var constant(Tensor value);
  static Var leaf(Tensor value);

  const Tensor& value() const { return node_->value; }
  // Gradient after backward(); a zero tensor if nothing flowed here.
  Tensor grad() const;
  bool requires_grad() const { return node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  double item() const;

  Node* get() const { return node_.get(); }
  const NodePtr& ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  NodePtr node_;
};

// Builds a node from a value, its inputs and a backward rule. The rule
// receives the node itself (upstream gradient in node.grad) and should
// accumulate into node.parents[k]->grad_buffer() for parents that
// require grad. Parents and rule are dropped when no input needs grad.
Var make_node(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn);

// ---- matrix products ---------------------------------------------------

Var matmul(const Var& a, const Var& b);
// x[B x I] * weight[O x I]^T + bias[1 x O]; bias may be empty.
Var linear(const Var& x, const Var& weight, const Var& bias);

// ---- elementwise (equal shapes, or either side 1x1) ---------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);

Var relu(const Var& x);
Var tanh(const Var& x);
// Subgradient 0 at 0.
Var abs(const Var& x);
Var square(const Var& x);
// Gradient taken as 0 at 0.
Var sqrt(const Var& x);
Var scale(const Var& x, double c);
Var add_scalar(const Var& x, double c);

// ---- reductions ----------------------------------------------------------

// Full reduction to 1x1.
Var sum(const Var& x);
Var mean(const Var& x);
// axis 0 collapses rows (-> 1 x C), axis 1 collapses columns (-> R x 1).
Var sum(const Var& x, int axis);
Var mean(const Var& x, int axis);
// sqrt(sum_j x_ij^2 + 1e-12) per row, R x 1.
Var l2_norm_rows(const Var& x);

// ---- structural ----------------------------------------------------------

Var row(const Var& x, std::size_t i);
Var col(const Var& x, std::size_t j);
Var pick(const Var& x, std::size_t i, std::size_t j);
Var transpose(const Var& x);
// x[R x C] with each row multiplied elementwise by r[1 x C].
Var mul_rowvec(const Var& x, const Var& r);
Var repeat_rows(const Var& r, std::size_t n);

// ---- geometry ------------------------------------------------------------

// Unit-norm rows; all-zero rows stay zero (and pass no gradient).
Var normalize_rows(const Var& x, std::vector<std::size_t>* zero_rows = nullptr);
// D[i,j] = ||x_i - x_j||^2, B x B.
Var pairwise_sq_dist(const Var& x);

// ---- graph traversal -----------------------------------------------------

// Populates gradients of every ancestor of a 1x1 root. A second call on the
// same root without zero_grad() is a ContractError.
void backward(const Var& root);
// Clears gradients and the backward marker on every node reachable from root.
void zero_grad(const Var& root);

}  // namespace dscl::ad
