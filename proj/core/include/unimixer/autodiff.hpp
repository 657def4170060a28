#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "unimixer/sinkhorn.hpp"
#include "unimixer/tensor.hpp"

// Matrix-valued reverse-mode differentiation. Each op records its inputs and
// a closure that pushes the output gradient back onto them; backward() walks
// the graph in reverse topological order. Batched activations are N x C with
// one sample per row.
namespace unimixer::ad {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Matrix value;
  Matrix grad;
  std::vector<Var> inputs;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;

  // Adds g into grad, allocating it on first use.
  void accumulate(const Matrix& g);
};

// Leaf that collects a gradient.
Var parameter(Matrix value);
// Leaf without a gradient.
Var constant(Matrix value);

// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates.
void backward(const Var& root);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
// Adds a 1 x C row to every row of a.
Var add_row(const Var& a, const Var& row);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var swish(const Var& a);
Var reshape(const Var& a, std::size_t rows, std::size_t cols);
Var slice_cols(const Var& a, std::size_t start, std::size_t width);
Var concat_cols(const std::vector<Var>& parts);

// Per-row RMS normalisation without gain.
Var rms_norm_rows(const Var& a, double eps);

// (a + a^T) / 2
Var symmetrize(const Var& a);

// exp(w / tau) followed by exactly cfg.max_iters row/column normalisation
// sweeps; a symmetric input gets a trailing symmetrisation. Matches
// sinkhorn_knopp() in kFixedDepth mode.
Var sinkhorn(const Var& w, const ConstraintConfig& cfg);

// Column block i of x (width in_dim) times weights[i] (in_dim x out_dim);
// results are concatenated. Shares one pass over the batch.
Var block_linear(const Var& x, const std::vector<Var>& weights);

// out[n, i*B + k] = sum_j g(i, j) * h[n, j*B + k]: the global mixing step
// applied to every sample of a batch.
Var block_global(const Var& g, const Var& h, std::size_t block);

// sum_l omega(row, l) * basis[l]
Var basis_combine(const Var& omega, std::size_t row, const std::vector<Var>& basis);

// Rows of table selected by indices.
Var gather_rows(const Var& table, std::span<const std::size_t> indices);

// Per-sample softmax(Q K^T / sqrt(d)) V with T tokens of width d packed in each row.
Var token_attention(const Var& q, const Var& k, const Var& v, std::size_t tokens);

// Per-sample X X^T Y with X the T x D token matrix packed in each row; Y is T x r.
Var fm_core(const Var& x, const Var& y, std::size_t tokens);

// Per-sample token permutation: out[n, perm[j]] = x[n, j].
Var permute_cols(const Var& x, std::vector<std::size_t> perm);

// Mean binary cross-entropy of sigmoid(logits) against labels, as a 1x1 node.
Var bce_with_logits(const Var& logits, std::span<const double> labels);

}  // namespace unimixer::ad
