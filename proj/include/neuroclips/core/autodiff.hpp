#pragma once

// Minimal tape-free reverse-mode automatic differentiation over dense double
// tensors. A Var is a handle to a graph node; the graph is kept alive by the
// handles that reference it, and backward() walks it in reverse topological
// order accumulating gradients into every node that requires them.

#include <functional>
#include <memory>
#include <vector>

#include "neuroclips/core/tensor.hpp"

namespace neuroclips::ad {

struct Node {
  Tensor value;
  Tensor grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  bool requires_grad = false;

  Tensor& ensure_grad();
};

class Var {
 public:
  Var() = default;

  static Var constant(Tensor value);
  static Var parameter(Tensor value);

  const Tensor& value() const { return node_->value; }
  /// Direct write access for optimizers and tests; never use mid-graph.
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const;
  void zero_grad();
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  double item() const;
  bool defined() const { return static_cast<bool>(node_); }

  const std::shared_ptr<Node>& node() const { return node_; }
  static Var from_node(std::shared_ptr<Node> node);

 private:
  std::shared_ptr<Node> node_;
};

/// Seeds d(root)/d(root) = 1 (root must be a scalar) and propagates.
void backward(const Var& root);

// Elementwise / arithmetic.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
/// a * s where s is a one-element Var.
Var scale_by(const Var& a, const Var& s);
/// X[..., m] + b[m] broadcast over leading axes.
Var add_rowvec(const Var& x, const Var& b);

Var gelu(const Var& a);
Var relu(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var abs(const Var& a);
Var square(const Var& a);

// Reductions (to scalar).
Var sum(const Var& a);
Var mean(const Var& a);
/// sum(a ⊙ w) for a constant weight tensor.
Var weighted_sum(const Var& a, const Tensor& w);

// Shape manipulation.
Var reshape(const Var& a, Shape shape);
Var permute(const Var& a, const std::vector<std::size_t>& perm);
Var transpose2d(const Var& a);
/// Rows of a 2-D tensor, in the given order (repeats allowed).
Var gather_rows(const Var& a, const std::vector<std::size_t>& rows);
Var concat0(const std::vector<Var>& parts);

// Linear algebra.
Var matmul(const Var& a, const Var& b);
/// X[n,in] · Wᵀ + b, W is [out,in]; `bias` may be undefined.
Var linear(const Var& x, const Var& weight, const Var& bias);
/// Batched product over the leading axis of two rank-3 tensors with
/// optional transposition of each operand's trailing matrix.
Var bmm(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);

// Normalizations over the last axis.
Var softmax_last(const Var& a);
Var log_softmax_last(const Var& a);
/// Each row divided by its L2 norm (rows with zero norm stay zero).
Var normalize_last(const Var& a);

// Spatial ops on [N, C, H, W].
/// Zero-padded "same" 2-D convolution with an odd square kernel [O, C, k, k].
Var conv2d(const Var& x, const Var& weight, const Var& bias);
Var upsample_nearest(const Var& x, std::size_t factor);

}  // namespace neuroclips::ad
