#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "masktab/numerics/tensor.hpp"

namespace masktab::num {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  /// Value of a single-element node.
  double item() const;
};

/// Linear record of executed operations. Nodes are appended in execution
/// order, which is a topological order, so backward() is a single reverse
/// sweep that visits every node once.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to a trainable tensor; backward() accumulates into p.grad.
  Var param(Tensor& p);

  /// Seeds d(root)/d(root) = 1 and propagates to every parameter leaf.
  /// The root must hold exactly one element.
  void backward(Var root);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Records an operation result. `backward` may be empty when no input
  /// requires a gradient.
  Var record(Tensor value, std::vector<std::uint32_t> inputs, BackwardFn backward);

  /// Gradient of a node during backward (sized like the node value).
  const std::vector<double>& grad(std::uint32_t id) const { return nodes_[id].grad; }
  /// Mutable gradient slot of an input, zero-initialised on first use, or
  /// nullptr when that input does not require a gradient.
  double* grad_slot(std::uint32_t id);
  const std::vector<std::uint32_t>& inputs(std::uint32_t id) const { return nodes_[id].inputs; }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    std::vector<std::uint32_t> inputs;
    BackwardFn backward;
    Tensor* param = nullptr;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Differentiable operations. All of them record onto the tape of their first
// operand and check shapes eagerly (DimensionError on mismatch).
// ---------------------------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
/// x: m×n, b: n. Adds b to every row.
Var add_row(Var x, Var b);
/// x: m×n, s: m. Multiplies row i by s[i].
Var scale_rows(Var x, Var s);
/// a: m×k, b: k×n.
Var matmul(Var a, Var b);
/// a: m×k, b: n×k. Computes a·bᵀ.
Var matmul_nt(Var a, Var b);
Var reshape(Var x, Shape shape);
/// Rows of a 2-D (or higher, first axis) tensor, by index; repeats allowed.
Var gather_rows(Var x, std::span<const std::size_t> index);
Var concat_rows(std::span<const Var> parts);
/// Columns [begin, end) of a 2-D tensor.
Var slice_cols(Var x, std::size_t begin, std::size_t end);

Var gelu(Var x);
Var sigmoid(Var x);
Var square(Var x);
/// Row-wise LayerNorm with population variance and eps = 1e-5.
Var layer_norm(Var x, Var gamma, Var beta);
Var softmax_rows(Var x);

Var sum(Var x);
Var mean(Var x);
/// Reduces one axis of an N-D tensor.
Var sum_axis(Var x, std::size_t axis);
Var mean_axis(Var x, std::size_t axis);
/// a, b: m×n. Per-row dot products, shape m.
Var dot_rows(Var a, Var b);
/// Σ_i w_i x_i for a flat x and constant weights.
Var weighted_sum(Var x, std::span<const double> weights);

/// Mean squared error between same-shaped tensors (scalar).
Var mse(Var pred, Var target);
/// Per-element sigmoid binary cross-entropy on logits; targets in [0, 1].
Var bce_with_logits(Var logits, std::span<const double> targets);
/// Per-row softmax cross-entropy; logits m×C, integer targets in [0, C).
Var softmax_cross_entropy(Var logits, std::span<const std::size_t> targets);

/// One softmax segment per row of a logits matrix.
struct Segment {
  std::size_t begin = 0;
  std::size_t length = 0;
  std::size_t target = 0;  // relative to begin
};
/// Per-row cross-entropy restricted to columns [begin, begin+length).
Var segment_cross_entropy(Var logits, std::span<const Segment> segments);

/// Per-row cosine similarity. Rows where either norm is below 1e-12 yield 0
/// and pass no gradient.
Var cosine_similarity(Var a, Var b);

/// Multi-head scaled dot-product attention without masking.
/// q, k, v: (sequences·tokens) × (heads·head_width); every sequence attends
/// over its own tokens only.
Var attention(Var q, Var k, Var v, std::size_t sequences, std::size_t tokens, std::size_t heads);

/// experts: m × (n_experts·w), gates: m × n_experts. Row i of the result is
/// Σ_e gates[i,e]·experts[i, e·w:(e+1)·w].
Var gated_mixture(Var experts, Var gates, std::size_t n_experts);

}  // namespace masktab::num
