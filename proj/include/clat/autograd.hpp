#pragma once

#include <cstdint>
#include <set>
#include <vector>

#include "clat/tensor.hpp"

namespace clat {

enum class OpKind : uint8_t {
  leaf,
  matmul,
  conv2d,
  add_bias,
  relu,
  maxpool2d,
  avgpool2d,
  flatten,
  add,
  sub,
  scale,
  sum_all,
  mean_all,
  sumsq_all,
  l2norm,
  batch_l2norm,
  softmax_xent,
};

/// One recorded operation. Nodes are appended in execution order, so ids
/// form a topological order of the DAG by construction.
struct TapeNode {
  OpKind op = OpKind::leaf;
  std::vector<int> inputs;   // ids of operand nodes
  Tensor value;              // forward result, kept for backward
  bool requires_grad = false;

  // Op-specific saved state.
  float scalar = 0.0f;           // scale factor
  int arg0 = 0, arg1 = 0;        // conv: stride/pad; pools: window
  std::vector<int> indices;      // maxpool argmax positions; xent labels
  Tensor saved;                  // xent softmax probabilities
};

/// Gradients keyed by node id, as produced by Tape::backward. Only nodes
/// that require a gradient and participate in the loss carry one.
class BackwardResult {
public:
  explicit BackwardResult(std::vector<Tensor> grads) : grads_(std::move(grads)) {}
  bool has(int id) const;
  /// Throws UsageError when `id` is not on the tape or carries no gradient.
  const Tensor& at(int id) const;

private:
  std::vector<Tensor> grads_;
};

/// Which gradients a caller wants from a network-level backward pass.
struct GradientRequest {
  bool wrt_input = false;
  std::vector<int> wrt_layers;  // 1-based layer indices
};

/// Append-only tape of tensor operations with reverse-mode differentiation.
/// Backward walks node ids in descending order, so gradient accumulation
/// order is fixed and results are bit-reproducible.
class Tape {
public:
  /// Registers an input tensor. Gradients flow into it only when
  /// `requires_grad` is set.
  int leaf(Tensor value, bool requires_grad = false);

  int matmul(int a, int b);
  /// Cross-correlation (no kernel flip): x [N,C,H,W] * w [F,C,k,k] + bias [F].
  int conv2d(int x, int w, int bias, int stride, int pad);
  int add_bias(int x, int bias);  // [N,K]+[K] or [N,C,H,W]+[C]
  int relu(int x);                // subgradient at 0 is 0
  int maxpool2d(int x, int window);
  int avgpool2d(int x, int window);
  int flatten(int x);
  int add(int a, int b);
  int sub(int a, int b);
  int scale(int a, float c);
  int sum_all(int x);
  int mean_all(int x);
  int sumsq_all(int x);
  int l2norm(int x);        // gradient defined as 0 at the zero tensor
  int batch_l2norm(int x);  // per-sample norms of a [N,...] tensor
  /// Mean over the batch of -log softmax(logits)[label], max-subtracted.
  int softmax_cross_entropy(int logits, const std::vector<int>& labels);

  const Tensor& value(int id) const;
  bool requires_grad(int id) const;
  int size() const { return static_cast<int>(nodes_.size()); }

  /// Reverse-mode gradients of a scalar loss node with respect to every
  /// participating node that requires a gradient.
  BackwardResult backward(int loss_id) const;

private:
  int push(TapeNode node);
  const TapeNode& node(int id) const;
  void check_id(int id) const;

  std::vector<TapeNode> nodes_;
};

}  // namespace clat
