#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "ccv/tensor.hpp"

namespace ccv {

// Reverse-mode tape. One Graph is built per optimization step and discarded
// after backward(). Nodes are appended in execution order, so inputs always
// precede their consumers; backward() walks the tape once in reverse.
//
// Gradients are deposited into the tensors' own grad buffers and accumulate
// by addition, both across fan-out within one backward pass and across
// repeated backward calls (callers zero_grad() between steps). Leaves with
// requires_grad == false are never touched.
template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Elementwise binary ops; operands must share a shape, or one of them may
  // be a single-element tensor broadcast over the other.
  Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
  Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
  Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
  Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

  Tensor<T> add_scalar(const Tensor<T>& a, T c);
  Tensor<T> mul_scalar(const Tensor<T>& a, T c);
  // c - a
  Tensor<T> rsub_scalar(const Tensor<T>& a, T c);

  Tensor<T> relu(const Tensor<T>& a);
  Tensor<T> sigmoid(const Tensor<T>& a);

  // Elementwise binary entropy -[p ln p + (1-p) ln(1-p)]; p is clamped away
  // from {0,1} so saturated probabilities contribute 0 with finite gradient.
  Tensor<T> binary_entropy(const Tensor<T>& p);
  // Numerically stable elementwise BCE on logits:
  // max(z,0) - z*t + log(1+exp(-|z|)).
  Tensor<T> bce_with_logits(const Tensor<T>& z, const Tensor<T>& t);

  // input [Ci,H,W], kernel [Co,Ci,kh,kw] (kh,kw odd), bias [Co].
  Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& b, int padding);

  Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
  Tensor<T> avgpool2(const Tensor<T>& a);
  Tensor<T> upsample2(const Tensor<T>& a);

  // Elementwise mean over a list of same-shape tensors. The summation is
  // performed over a canonical (bit-pattern sorted) ordering in a wider
  // accumulator, which makes the result exactly invariant to permutations
  // of the list and exact for lists of identical tensors.
  Tensor<T> mean_stack(const std::vector<Tensor<T>>& xs);

  Tensor<T> mean_reduce(const Tensor<T>& a);
  Tensor<T> sum_reduce(const Tensor<T>& a);

  // Propagates d(loss)/d(leaf) into every requires_grad leaf reachable from
  // loss. loss must be a single-element tensor produced by this graph.
  void backward(const Tensor<T>& loss);

  size_t node_count() const { return nodes_.size(); }
  bool produced_here(const Tensor<T>& t) const;

 private:
  struct Node {
    const char* op;
    bool needs_grad;
    Tensor<T> out;
    std::function<void()> back;
  };

  bool wants_grad(const Tensor<T>& t) const;
  Tensor<T> record(const char* op, bool needs_grad, Tensor<T> out, std::function<void()> back);

  enum class Bcast { same, a_scalar, b_scalar };
  Bcast binary_mode(const char* op, const Tensor<T>& a, const Tensor<T>& b) const;

  std::vector<Node> nodes_;
  std::unordered_map<const void*, size_t> produced_;
};

}  // namespace ccv
