#pragma once

#include <cstddef>

// Numeric kernels behind the tensor ops. Every kernel exists twice: a plain
// serial reference under kernels::serial and an OpenMP version under
// kernels::par. The dispatching wrappers in kernels:: pick one at runtime.
//
// Both variants perform the exact same floating-point operations in the same
// order per output element (parallelism is only over independent outputs),
// so results are bit-identical regardless of thread count. Tests and the
// bench_kernels tool compare the two directly.

namespace cprobe::kernels {

bool parallel_enabled();
void set_parallel(bool on);

namespace serial {

// C (n x m) = A (n x k) * B (k x m)
void matmul(double* c, const double* a, const double* b, int n, int k, int m);
// C (n x k) += A (n x m) * B^T, B is (k x m)
void matmul_bt_acc(double* c, const double* a, const double* b, int n, int m,
                   int k);
// C (k x m) += A^T * B, A is (n x k), B is (n x m)
void matmul_at_acc(double* c, const double* a, const double* b, int n, int k,
                   int m);

void add(double* out, const double* a, const double* b, int n);
void mul(double* out, const double* a, const double* b, int n);
// out (n x m) = x (n x m) + row (m) broadcast over rows
void add_row(double* out, const double* x, const double* row, int n, int m);
// out (n x m) = x (n x m) * row (m) broadcast over rows
void mul_row(double* out, const double* x, const double* row, int n, int m);

void relu(double* out, const double* x, int n);
void relu_backward(double* dx, const double* x, const double* dy, int n);
void gelu(double* out, const double* x, int n);
void gelu_backward(double* dx, const double* x, const double* dy, int n);
void sigmoid(double* out, const double* x, int n);
void sigmoid_backward(double* dx, const double* y, const double* dy, int n);
void exp_(double* out, const double* x, int n);
void exp_backward(double* dx, const double* y, const double* dy, int n);

// Row-wise softmax over the last axis of an (n x m) matrix.
void softmax_rows(double* out, const double* x, int n, int m);
// dx += dsoftmax given softmax output y.
void softmax_rows_backward(double* dx, const double* y, const double* dy,
                           int n, int m);

// Normalization only (affine handled by separate ops). Saves per-row mean
// and reciprocal stddev for the backward pass.
void layernorm_rows(double* out, double* mean, double* rstd, const double* x,
                    int n, int m, double eps);
void layernorm_rows_backward(double* dx, const double* x, const double* mean,
                             const double* rstd, const double* dy, int n,
                             int m);

// Causal multi-head self attention on a packed qkv buffer.
// qkv is (B*T x 3C) laid out [q | k | v], heads split C into H slices.
// probs is scratch of size B*H*T*T holding attention weights for backward.
void attention(double* out, double* probs, const double* qkv, int batch,
               int seqlen, int heads, int channels);
void attention_backward(double* dqkv, const double* dout, const double* probs,
                        const double* qkv, int batch, int seqlen, int heads,
                        int channels);

// cos (n x n): cosine similarity of rows of v (n x d); norms below eps are
// clamped to eps so zero vectors yield similarity 0. unit/clamped saved for
// backward: unit is (n x d) rows v_i / max(|v_i|, eps), clamped is (n).
void pairwise_cosine(double* cos, double* unit, double* clamped,
                     const double* v, int n, int d, double eps);
void pairwise_cosine_backward(double* dv, const double* dcos,
                              const double* cos, const double* unit,
                              const double* clamped, int n, int d, double eps);

// Mean negative log likelihood of labels under row softmax of logits
// (n x classes). probs scratch (n x classes) saved for backward.
double cross_entropy(double* probs, const double* logits, const int* labels,
                     int n, int classes);
void cross_entropy_backward(double* dlogits, const double* probs,
                            const int* labels, int n, int classes,
                            double dloss);

// Decoupled weight decay followed by bias-corrected Adam.
void adamw_update(double* param, const double* grad, double* m, double* v,
                  int n, double lr, double beta1, double beta2, double eps,
                  double weight_decay, long step);

}  // namespace serial

namespace par {

void matmul(double* c, const double* a, const double* b, int n, int k, int m);
void matmul_bt_acc(double* c, const double* a, const double* b, int n, int m,
                   int k);
void matmul_at_acc(double* c, const double* a, const double* b, int n, int k,
                   int m);
void add(double* out, const double* a, const double* b, int n);
void mul(double* out, const double* a, const double* b, int n);
void add_row(double* out, const double* x, const double* row, int n, int m);
void mul_row(double* out, const double* x, const double* row, int n, int m);
void relu(double* out, const double* x, int n);
void relu_backward(double* dx, const double* x, const double* dy, int n);
void gelu(double* out, const double* x, int n);
void gelu_backward(double* dx, const double* x, const double* dy, int n);
void sigmoid(double* out, const double* x, int n);
void sigmoid_backward(double* dx, const double* y, const double* dy, int n);
void exp_(double* out, const double* x, int n);
void exp_backward(double* dx, const double* y, const double* dy, int n);
void softmax_rows(double* out, const double* x, int n, int m);
void softmax_rows_backward(double* dx, const double* y, const double* dy,
                           int n, int m);
void layernorm_rows(double* out, double* mean, double* rstd, const double* x,
                    int n, int m, double eps);
void layernorm_rows_backward(double* dx, const double* x, const double* mean,
                             const double* rstd, const double* dy, int n,
                             int m);
void attention(double* out, double* probs, const double* qkv, int batch,
               int seqlen, int heads, int channels);
void attention_backward(double* dqkv, const double* dout, const double* probs,
                        const double* qkv, int batch, int seqlen, int heads,
                        int channels);
void pairwise_cosine(double* cos, double* unit, double* clamped,
                     const double* v, int n, int d, double eps);
void pairwise_cosine_backward(double* dv, const double* dcos,
                              const double* cos, const double* unit,
                              const double* clamped, int n, int d, double eps);
double cross_entropy(double* probs, const double* logits, const int* labels,
                     int n, int classes);
void cross_entropy_backward(double* dlogits, const double* probs,
                            const int* labels, int n, int classes,
                            double dloss);
void adamw_update(double* param, const double* grad, double* m, double* v,
                  int n, double lr, double beta1, double beta2, double eps,
                  double weight_decay, long step);

}  // namespace par

// Dispatchers.
void matmul(double* c, const double* a, const double* b, int n, int k, int m);
void matmul_bt_acc(double* c, const double* a, const double* b, int n, int m,
                   int k);
void matmul_at_acc(double* c, const double* a, const double* b, int n, int k,
                   int m);
void add(double* out, const double* a, const double* b, int n);
void mul(double* out, const double* a, const double* b, int n);
void add_row(double* out, const double* x, const double* row, int n, int m);
void mul_row(double* out, const double* x, const double* row, int n, int m);
void relu(double* out, const double* x, int n);
void relu_backward(double* dx, const double* x, const double* dy, int n);
void gelu(double* out, const double* x, int n);
void gelu_backward(double* dx, const double* x, const double* dy, int n);
void sigmoid(double* out, const double* x, int n);
void sigmoid_backward(double* dx, const double* y, const double* dy, int n);
void exp_(double* out, const double* x, int n);
void exp_backward(double* dx, const double* y, const double* dy, int n);
void softmax_rows(double* out, const double* x, int n, int m);
void softmax_rows_backward(double* dx, const double* y, const double* dy,
                           int n, int m);
void layernorm_rows(double* out, double* mean, double* rstd, const double* x,
                    int n, int m, double eps);
void layernorm_rows_backward(double* dx, const double* x, const double* mean,
                             const double* rstd, const double* dy, int n,
                             int m);
void attention(double* out, double* probs, const double* qkv, int batch,
               int seqlen, int heads, int channels);
void attention_backward(double* dqkv, const double* dout, const double* probs,
                        const double* qkv, int batch, int seqlen, int heads,
                        int channels);
void pairwise_cosine(double* cos, double* unit, double* clamped,
                     const double* v, int n, int d, double eps);
void pairwise_cosine_backward(double* dv, const double* dcos,
                              const double* cos, const double* unit,
                              const double* clamped, int n, int d, double eps);
double cross_entropy(double* probs, const double* logits, const int* labels,
                     int n, int classes);
void cross_entropy_backward(double* dlogits, const double* probs,
                            const int* labels, int n, int classes,
                            double dloss);
void adamw_update(double* param, const double* grad, double* m, double* v,
                  int n, double lr, double beta1, double beta2, double eps,
                  double weight_decay, long step);

// Always-serial helpers (cheap, or order-sensitive accumulations).
double sum(const double* x, int n);
void gather_rows(double* out, const double* table, const int* ids, int n,
                 int d);
void scatter_rows_acc(double* dtable, const double* dout, const int* ids,
                      int n, int d);
bool all_finite(const double* x, int n);

}  // namespace cprobe::kernels
