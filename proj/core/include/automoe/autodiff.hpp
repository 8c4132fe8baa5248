#pragma once

#include <functional>
#include <span>
#include <vector>

#include "automoe/search_space.hpp"
#include "automoe/tensor.hpp"

namespace automoe {

class Tape;

/// Handle to a tensor recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const noexcept { return tape != nullptr && id >= 0; }
  const Tensor& value() const;
};

/// Reverse-mode tape. Operations are appended in evaluation order, so the
/// recorded list is always topologically sorted. A tape built with
/// `record_gradients = false` only evaluates values.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;
  using GradSink = std::function<void(const Tensor& grad)>;

  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return recording_; }

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf whose gradient is kept on the tape (read it with grad()).
  Var variable(Tensor value);
  /// Leaf whose gradient is handed to `sink` once backward() finishes with it.
  Var external(Tensor value, GradSink sink);

  /// Appends an op node. `backward` reads grad(self) and accumulates into
  /// the grads of `inputs`.
  Var record(Tensor value, std::vector<int> inputs, BackwardFn backward);

  const Tensor& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  const Tensor& value(Var v) const { return value(v.id); }
  bool needs_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).needs_grad; }
  bool needs_grad(Var v) const { return needs_grad(v.id); }

  /// Gradient buffer of a node, zero-initialized on first access.
  Tensor& grad(int id);
  Tensor& grad(Var v) { return grad(v.id); }
  bool has_grad(int id) const { return !nodes_.at(static_cast<std::size_t>(id)).grad.shape().empty(); }

  /// Seeds d(loss)/d(loss) = 1 and runs every backward rule in reverse order.
  /// Throws DimensionError when loss is not a single element.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  /// Drops every node recorded after the first `n`. Handles to dropped nodes
  /// become invalid. Lets inference reuse bound weights across passes.
  void truncate(std::size_t n);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    std::vector<int> inputs;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  bool recording_;
};

/// Rows [q_offset, q_offset+q_len) of the query matrix attend to rows
/// [k_offset, k_offset+k_len) of the key/value matrices.
struct AttentionSegment {
  std::size_t q_offset = 0;
  std::size_t q_len = 0;
  std::size_t k_offset = 0;
  std::size_t k_len = 0;
};

// Differentiable ops. All operands must live on the same tape.

Var matmul(Var a, Var b);     // [m×k]·[k×n]
Var matmul_nt(Var a, Var b);  // [m×k]·[n×k]ᵀ
/// x·wᵀ (+ bias), with w stored [out × in].
Var linear(Var x, Var w, const Var* bias = nullptr);
Var add(Var a, Var b);
Var add_row_vector(Var a, Var v);
Var scale(Var a, Real s);
Var relu(Var x);
/// Numerically stabilized softmax along `axis` (0 = columns, 1 = rows).
Var softmax(Var x, int axis = 1);
Var layernorm(Var x, Var gain, Var bias, Real eps = Real(1e-5));
Var embed(Var table, std::span<const int> ids);
/// Mean over targets != ignore_index of the label-smoothed negative
/// log-likelihood: (1-ε)·(-log p_y) + ε·mean_v(-log p_v).
Var cross_entropy(Var logits, std::span<const int> targets, Real label_smoothing, int ignore_index = -1);
Var sum(Var x);
Var mean_of(std::span<const Var> xs);
Var gather_rows(Var x, std::span<const std::size_t> rows);
/// Places row i of x at row rows[i] of a zero [out_rows × cols] matrix. Rows must be distinct.
Var scatter_rows(Var x, std::span<const std::size_t> rows, std::size_t out_rows);
/// out[i,:] = s[i] · x[i,:] with s of shape [m×1].
Var scale_rows(Var x, Var s);
/// out[i] = x[i, cols[i]], shape [m×1].
Var pick(Var x, std::span<const std::size_t> cols);
Var concat_rows(Var a, Var b);
/// Inverted dropout; p == 0 returns x unchanged.
Var dropout(Var x, Real p, Rng& rng);
/// Multi-head scaled dot-product attention over qkv-dim columns split into
/// `heads` contiguous groups. Causal segments let query i see key j only when
/// j <= i + (k_len - q_len).
Var attention(Var q, Var k, Var v, std::size_t heads, std::span<const AttentionSegment> segments, bool causal);
/// Switch load-balance loss e · Σ_j f_j · P_j for gate probabilities [t×e]
/// and top-1 assignments (f_j is treated as a constant).
Var load_balance(Var probs, std::span<const std::size_t> assignment);

}  // namespace automoe
