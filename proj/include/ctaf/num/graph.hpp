#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ctaf/num/tensor.hpp"

namespace ctaf::num {

// Eager reverse-mode autodiff over f64 tensors. Every method computes its
// value immediately (through the active kernel table) and records a node;
// backward() walks the tape in reverse construction order, which is already
// topological because parents are always created before children.
//
// Masks are plain Tensors (0/1), never differentiated. Ops that take one
// guarantee exact zeros at masked positions in both value and gradient, so
// padding can never leak into results.

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

struct GraphOptions {
  // Scan every op output for NaN/inf and throw NumericError naming the node.
  bool check_finite = false;
};

class Graph {
 public:
  explicit Graph(GraphOptions opts = {});
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // --- tape inputs -------------------------------------------------------
  Var leaf(Tensor value, bool needs_grad, std::string tag = "");
  Var constant(Tensor value, std::string tag = "");

  // --- elementwise -------------------------------------------------------
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var add_scalar(Var a, double c);
  Var exp(Var a);
  Var log(Var a);
  Var sqrt(Var a);
  Var sigmoid(Var a);
  Var gelu(Var a);
  Var relu(Var a);

  // --- linear algebra ----------------------------------------------------
  // x: [..., K] flattened to rows, W: [K, M] -> [..., M]
  Var matmul(Var x, Var w);
  // x: [R, K], y: [N, K] -> x y^T: [R, N]
  Var matmul_nt(Var x, Var y);
  // x: [R, D], y: [R, E] -> x^T y: [D, E]
  Var matmul_tn(Var x, Var y);
  // a: [G, S, T], b: [G, T, D] -> [G, S, D]
  Var bmm(Var a, Var b);
  // a: [G, S, D], b: [G, T, D] -> a b^T per batch: [G, S, T]
  Var bmm_nt(Var a, Var b);
  // x: [..., D] + b: [D]
  Var add_bias(Var x, Var b);

  // --- shape -------------------------------------------------------------
  Var reshape(Var x, std::vector<std::size_t> shape);
  Var concat_last(Var a, Var b);
  // [B, S, h*dh] <-> [B*h, S, dh]
  Var split_heads(Var x, int heads);
  Var merge_heads(Var x, int heads);

  // --- reductions --------------------------------------------------------
  Var sum_all(Var x);
  Var mean_all(Var x);
  Var sum_last(Var x);          // [..., C] -> [...]
  Var sum_rows(Var x);          // [R, D] -> [D]
  Var mean_rows(Var x);         // [R, D] -> [D]
  Var sub_rowvec(Var x, Var v); // [R, D] - [D] broadcast
  Var sum_mid(Var x);           // [B, S, T] -> [B, T]
  Var diag2d(Var x);            // [N, N] -> [N]
  Var head_mean(Var x, int heads);  // [B*h, S, T] -> [B, S, T]
  Var logsumexp_rows(Var x);    // [R, C] -> [R]

  // --- masked / sequence ops ---------------------------------------------
  // x: [B*heads, S, C], keymask: [B, C]. Rows are softmax-normalized over
  // the valid keys only; invalid keys get exactly 0. A row with no valid
  // key becomes all zeros.
  Var masked_softmax(Var x, const Tensor& keymask, int heads);
  // H: [B, S, D], mask: [B, S] -> [B, D]; sum(m*H) / (sum(m) + eps)
  Var masked_mean_tokens(Var h, const Tensor& mask, double eps);
  // H: [B, S, D], alpha: [B, S] (differentiable weights) -> [B, D]
  Var pool_weighted(Var h, Var alpha);
  // rows of x scaled to unit L2 norm (1e-24 inside the square root)
  Var l2norm_rows(Var x);
  // x: [B, S, D], mask: [B, S], w: [k, D, Dout]; zero-padded taps and
  // masked taps are dropped, the rest rescaled by k/valid_taps.
  Var conv1d_masked(Var x, const Tensor& mask, Var w);
  // x: [..., D], gamma/beta: [D]; population variance, eps inside sqrt.
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

  // --- access ------------------------------------------------------------
  const Tensor& val(Var v) const;
  const Tensor& grad(Var v) const;  // throws if backward never reached v
  bool has_grad(Var v) const;
  void tag(Var v, std::string t);

  // Root must be scalar (numel 1). Seeds d(root)=1 and accumulates into
  // every reachable node that needs gradients.
  void backward(Var root);

  std::size_t num_nodes() const;

 private:
  struct Node;
  Node& node(Var v);
  const Node& node(Var v) const;
  Var push(Node n);
  Tensor& ensure_grad(int id);
  void check_output(int id);
  void backward_node(int id);

  std::vector<Node> nodes_;
  GraphOptions opts_;
};

}  // namespace ctaf::num
