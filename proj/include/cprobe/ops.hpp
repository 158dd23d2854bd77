#pragma once

#include <vector>

#include "cprobe/tensor.hpp"

// Differentiable ops. Each op appends one node to the tape, computes the
// forward value eagerly through the kernels, and records a backward closure
// that accumulates into its inputs' grad buffers. Shape mismatches throw
// std::invalid_argument with the offending dimensions.

namespace cprobe::ops {

// (n x k) @ (k x m) -> (n x m)
Tensor matmul(Tensor a, Tensor b);
// Elementwise; shapes must match exactly.
Tensor add(Tensor a, Tensor b);
Tensor mul(Tensor a, Tensor b);
Tensor div(Tensor a, Tensor b);
// x (n x m) op row (1 x m), broadcast over rows.
Tensor add_rowvec(Tensor x, Tensor row);
Tensor mul_rowvec(Tensor x, Tensor row);
Tensor scale(Tensor a, double c);

Tensor relu(Tensor x);
Tensor gelu(Tensor x);
Tensor sigmoid(Tensor x);
Tensor exp(Tensor x);

Tensor softmax_rows(Tensor x);
// Normalization without affine params; compose with mul_rowvec/add_rowvec.
Tensor layernorm_rows(Tensor x, double eps);

// Causal multi-head self attention. qkv is (batch*seqlen x 3C) packed
// [q | k | v]; channels C = cols/3 must divide evenly into heads.
Tensor attention(Tensor qkv, int batch, int seqlen, int heads);

// (n x d) -> (n x n) cosine similarity matrix; norms clamped at eps.
Tensor pairwise_cosine(Tensor v, double eps);

// Mean cross entropy of labels (size n) under row softmax of (n x classes).
Tensor cross_entropy(Tensor logits, const std::vector<int>& labels);

// Embedding lookup: rows of table (vocab x d) at ids -> (n x d).
Tensor gather(Tensor table, const std::vector<int>& ids);
// Row selection from an activation; backward scatters (ids may repeat).
Tensor select_rows(Tensor x, const std::vector<int>& ids);

// Columns [c0, c1) of x as a new (n x c1-c0) tensor.
Tensor slice_cols(Tensor x, int c0, int c1);

// (n x m) -> (n x 1) sum over columns.
Tensor rowsum(Tensor x);
Tensor sum_all(Tensor x);
Tensor mean_all(Tensor x);
// Single element -> 1x1.
Tensor pick(Tensor x, int r, int c);

}  // namespace cprobe::ops
