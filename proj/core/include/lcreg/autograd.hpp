#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "lcreg/tensor.hpp"

namespace lcreg {

class Var;

namespace detail {

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Receives d(loss)/d(value) and pushes contributions into parents' grads.
  std::function<void(const Tensor&)> backward_fn;

  void accumulate(const Tensor& g);
  Tensor& grad_buffer();
};

}  // namespace detail

/// Handle to a value in the reverse-mode tape.
///
/// Leaves created with `Var::parameter` persist across steps and accumulate
/// gradients until `zero_grad()`. Interior nodes are created by the free
/// functions below and keep their inputs alive through the closure chain,
/// so dropping the loss handle frees the whole graph.
class Var {
 public:
  Var() = default;

  static Var parameter(Tensor value);
  static Var constant(Tensor value);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  double item() const { return node_->value.item(); }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; zeros of the value's shape if nothing was accumulated.
  Tensor grad() const;
  void zero_grad() { node_->grad = Tensor(); }

  /// Shares the value with a new leaf that does not propagate gradients.
  Var detached() const { return constant(node_->value); }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Var(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  friend Var make_op(Tensor, std::vector<Var>, std::function<void(const Tensor&)>);

  std::shared_ptr<detail::Node> node_;
};

/// Builds an interior node. `backward` receives the output gradient and must
/// call `accumulate_grad` on each parent that requires a gradient.
Var make_op(Tensor value, std::vector<Var> parents,
            std::function<void(const Tensor&)> backward);

void accumulate_grad(const Var& v, const Tensor& g);

/// Runs reverse accumulation from a scalar loss into every reachable leaf.
void backward(const Var& loss);

// --- operation set --------------------------------------------------------
// Everything is expressed on rank-2 (rows x cols) values; rank-1 values are
// treated as a single row.

Var matmul(const Var& a, const Var& b);     // (r,k)x(k,c)
Var matmul_nt(const Var& a, const Var& b);  // (r,k)x(c,k)^T
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise
Var scale(const Var& a, double s);
Var add_row(const Var& a, const Var& bias);  // broadcast bias over rows
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var softmax_rows(const Var& a);
Var concat_cols(const Var& a, const Var& b);
/// (n*group, c) -> (n, c), mean over each consecutive block of `group` rows.
Var segment_mean(const Var& a, std::size_t group);
/// For consecutive row blocks of size `block`, out[b*block+i, j] =
/// <a[b*block+i], c[b*block+j]>. Shape (n*block, block).
Var block_gram(const Var& a, const Var& c, std::size_t block);
Var reshape(const Var& a, Shape shape);
Var sum(const Var& a);
Var mean(const Var& a);
Var dot(const Var& a, const Var& b);
/// Mean over rows of -log softmax(row)[target].
Var cross_entropy_rows(const Var& logits, std::span<const std::size_t> targets);

// --- plain-value helpers ----------------------------------------------------

Tensor softmax(const Tensor& v);
Tensor sigmoid(const Tensor& x);
double cross_entropy_logits(std::span<const double> logits, std::size_t target);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);

}  // namespace lcreg
