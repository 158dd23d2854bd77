#include "cprobe/kernels.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>
#include <vector>

// Per-element/per-row arithmetic lives in the helpers below and is shared by
// the serial and OpenMP drivers, so the two variants execute the same FP
// sequence per output and differ only in how the independent outputs are
// scheduled. That is what makes them bit-identical.

namespace cprobe::kernels {

namespace {

bool g_parallel = true;

inline void mm_row(double* crow, const double* arow, const double* b, int k,
                   int m, bool zero) {
  if (zero) std::memset(crow, 0, sizeof(double) * m);
  for (int kk = 0; kk < k; ++kk) {
    const double aik = arow[kk];
    const double* brow = b + static_cast<std::size_t>(kk) * m;
    for (int j = 0; j < m; ++j) crow[j] += aik * brow[j];
  }
}

// C row kk (length m) += sum_i A[i][kk] * B[i][:], A is (n x k), B (n x m).
inline void mm_at_row(double* crow, const double* a, const double* b, int n,
                      int k, int m, int kk) {
  for (int i = 0; i < n; ++i) {
    const double aik = a[static_cast<std::size_t>(i) * k + kk];
    const double* brow = b + static_cast<std::size_t>(i) * m;
    for (int j = 0; j < m; ++j) crow[j] += aik * brow[j];
  }
}

inline double gelu_one(double x) {
  constexpr double kSqrt2OverPi = 0.7978845608028654;
  const double inner = kSqrt2OverPi * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(inner));
}

inline double gelu_grad_one(double x) {
  constexpr double kSqrt2OverPi = 0.7978845608028654;
  const double inner = kSqrt2OverPi * (x + 0.044715 * x * x * x);
  const double t = std::tanh(inner);
  const double dinner = kSqrt2OverPi * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
}

inline void softmax_row(double* out, const double* x, int m) {
  double maxv = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < m; ++j) maxv = std::max(maxv, x[j]);
  double sum = 0.0;
  for (int j = 0; j < m; ++j) {
    out[j] = std::exp(x[j] - maxv);
    sum += out[j];
  }
  const double inv = 1.0 / sum;
  for (int j = 0; j < m; ++j) out[j] *= inv;
}

inline void softmax_row_bwd(double* dx, const double* y, const double* dy,
                            int m) {
  double dot = 0.0;
  for (int j = 0; j < m; ++j) dot += y[j] * dy[j];
  for (int j = 0; j < m; ++j) dx[j] += y[j] * (dy[j] - dot);
}

inline void ln_row(double* out, double* mean, double* rstd, const double* x,
                   int m, double eps) {
  double mu = 0.0;
  for (int j = 0; j < m; ++j) mu += x[j];
  mu /= m;
  double var = 0.0;
  for (int j = 0; j < m; ++j) var += (x[j] - mu) * (x[j] - mu);
  var /= m;
  const double rs = 1.0 / std::sqrt(var + eps);
  for (int j = 0; j < m; ++j) out[j] = (x[j] - mu) * rs;
  *mean = mu;
  *rstd = rs;
}

inline void ln_row_bwd(double* dx, const double* x, double mean, double rstd,
                       const double* dy, int m) {
  double a = 0.0, b = 0.0;
  for (int j = 0; j < m; ++j) {
    const double xhat = (x[j] - mean) * rstd;
    a += dy[j];
    b += dy[j] * xhat;
  }
  a /= m;
  b /= m;
  for (int j = 0; j < m; ++j) {
    const double xhat = (x[j] - mean) * rstd;
    dx[j] += rstd * (dy[j] - a - xhat * b);
  }
}

// One (batch, head) slice of causal attention. qkv rows are [q | k | v]
// with C channels each; head h owns channels [h*hs, (h+1)*hs).
inline void attn_bh(double* out, double* probs, const double* qkv, int b,
                    int h, int seqlen, int channels, int hs) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(hs));
  const std::size_t row3 = static_cast<std::size_t>(3) * channels;
  for (int t = 0; t < seqlen; ++t) {
    const double* q = qkv + (static_cast<std::size_t>(b) * seqlen + t) * row3 +
                      static_cast<std::size_t>(h) * hs;
    // probs is pre-offset by the caller to this batch's base.
    double* prow =
        probs + (static_cast<std::size_t>(h) * seqlen + t) * seqlen;
    std::memset(prow, 0, sizeof(double) * seqlen);
    double maxv = -std::numeric_limits<double>::infinity();
    for (int s = 0; s <= t; ++s) {
      const double* kvec = qkv +
                           (static_cast<std::size_t>(b) * seqlen + s) * row3 +
                           channels + static_cast<std::size_t>(h) * hs;
      double dot = 0.0;
      for (int j = 0; j < hs; ++j) dot += q[j] * kvec[j];
      prow[s] = dot * scale;
      maxv = std::max(maxv, prow[s]);
    }
    double sum = 0.0;
    for (int s = 0; s <= t; ++s) {
      prow[s] = std::exp(prow[s] - maxv);
      sum += prow[s];
    }
    const double inv = 1.0 / sum;
    for (int s = 0; s <= t; ++s) prow[s] *= inv;
    double* orow = out + (static_cast<std::size_t>(b) * seqlen + t) * channels +
                   static_cast<std::size_t>(h) * hs;
    std::memset(orow, 0, sizeof(double) * hs);
    for (int s = 0; s <= t; ++s) {
      const double p = prow[s];
      const double* vvec = qkv +
                           (static_cast<std::size_t>(b) * seqlen + s) * row3 +
                           2 * channels + static_cast<std::size_t>(h) * hs;
      for (int j = 0; j < hs; ++j) orow[j] += p * vvec[j];
    }
  }
}

inline void attn_bh_bwd(double* dqkv, const double* dout, const double* probs,
                        const double* qkv, int b, int h, int seqlen,
                        int channels, int hs) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(hs));
  const std::size_t row3 = static_cast<std::size_t>(3) * channels;
  std::vector<double> datt(seqlen), dsc(seqlen);
  for (int t = 0; t < seqlen; ++t) {
    const double* dorow = dout +
                          (static_cast<std::size_t>(b) * seqlen + t) * channels +
                          static_cast<std::size_t>(h) * hs;
    const double* prow = probs + (static_cast<std::size_t>(h) * seqlen + t) *
                                     seqlen;  // offset as in attn_bh
    // d attention weights and dV.
    for (int s = 0; s <= t; ++s) {
      const double* vvec = qkv +
                           (static_cast<std::size_t>(b) * seqlen + s) * row3 +
                           2 * channels + static_cast<std::size_t>(h) * hs;
      double* dv = dqkv + (static_cast<std::size_t>(b) * seqlen + s) * row3 +
                   2 * channels + static_cast<std::size_t>(h) * hs;
      double dot = 0.0;
      const double p = prow[s];
      for (int j = 0; j < hs; ++j) {
        dot += dorow[j] * vvec[j];
        dv[j] += p * dorow[j];
      }
      datt[s] = dot;
    }
    // Softmax backward over s <= t.
    double dsum = 0.0;
    for (int s = 0; s <= t; ++s) dsum += prow[s] * datt[s];
    for (int s = 0; s <= t; ++s) dsc[s] = prow[s] * (datt[s] - dsum) * scale;
    // dQ and dK.
    const double* q = qkv + (static_cast<std::size_t>(b) * seqlen + t) * row3 +
                      static_cast<std::size_t>(h) * hs;
    double* dq = dqkv + (static_cast<std::size_t>(b) * seqlen + t) * row3 +
                 static_cast<std::size_t>(h) * hs;
    for (int s = 0; s <= t; ++s) {
      const double* kvec = qkv +
                           (static_cast<std::size_t>(b) * seqlen + s) * row3 +
                           channels + static_cast<std::size_t>(h) * hs;
      double* dk = dqkv + (static_cast<std::size_t>(b) * seqlen + s) * row3 +
                   channels + static_cast<std::size_t>(h) * hs;
      const double ds = dsc[s];
      for (int j = 0; j < hs; ++j) {
        dq[j] += ds * kvec[j];
        dk[j] += ds * q[j];
      }
    }
  }
}

inline void cosine_row_bwd(double* dvrow, const double* dcos,
                           const double* cos, const double* unit,
                           const double* clamped, int n, int d, double eps,
                           int i) {
  std::vector<double> s1(d, 0.0);
  double s2 = 0.0;
  for (int j = 0; j < n; ++j) {
    const double w = dcos[static_cast<std::size_t>(i) * n + j] +
                     dcos[static_cast<std::size_t>(j) * n + i];
    if (w == 0.0) continue;
    const double* uj = unit + static_cast<std::size_t>(j) * d;
    for (int q = 0; q < d; ++q) s1[q] += w * uj[q];
    s2 += w * cos[static_cast<std::size_t>(i) * n + j];
  }
  const double inv = 1.0 / clamped[i];
  const double* ui = unit + static_cast<std::size_t>(i) * d;
  if (clamped[i] > eps) {
    for (int q = 0; q < d; ++q) dvrow[q] += (s1[q] - s2 * ui[q]) * inv;
  } else {
    for (int q = 0; q < d; ++q) dvrow[q] += s1[q] * inv;
  }
}

inline double ce_row(double* prow, const double* zrow, int classes,
                     int label) {
  double maxv = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < classes; ++c) maxv = std::max(maxv, zrow[c]);
  double sum = 0.0;
  for (int c = 0; c < classes; ++c) {
    prow[c] = std::exp(zrow[c] - maxv);
    sum += prow[c];
  }
  const double inv = 1.0 / sum;
  for (int c = 0; c < classes; ++c) prow[c] *= inv;
  return std::log(sum) + maxv - zrow[label];
}

inline void adamw_one(double* p, const double* g, double* m, double* v, int i,
                      double lr, double beta1, double beta2, double eps,
                      double weight_decay, double bc1, double bc2) {
  p[i] -= lr * weight_decay * p[i];
  m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
  v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
  const double mhat = m[i] / bc1;
  const double vhat = v[i] / bc2;
  p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
}

void check_labels(const int* labels, int n, int classes) {
  for (int i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= classes) {
      throw std::out_of_range("cross_entropy: label " +
                              std::to_string(labels[i]) + " at row " +
                              std::to_string(i) + " outside [0, " +
                              std::to_string(classes) + ")");
    }
  }
}

}  // namespace

bool parallel_enabled() { return g_parallel; }
void set_parallel(bool on) { g_parallel = on; }

namespace serial {

void matmul(double* c, const double* a, const double* b, int n, int k, int m) {
  for (int i = 0; i < n; ++i)
    mm_row(c + static_cast<std::size_t>(i) * m,
           a + static_cast<std::size_t>(i) * k, b, k, m, true);
}

void matmul_bt_acc(double* c, const double* a, const double* b, int n, int m,
                   int k) {
  std::vector<double> bt(static_cast<std::size_t>(m) * k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < m; ++j)
      bt[static_cast<std::size_t>(j) * k + i] =
          b[static_cast<std::size_t>(i) * m + j];
  for (int i = 0; i < n; ++i)
    mm_row(c + static_cast<std::size_t>(i) * k,
           a + static_cast<std::size_t>(i) * m, bt.data(), m, k, false);
}

void matmul_at_acc(double* c, const double* a, const double* b, int n, int k,
                   int m) {
  for (int kk = 0; kk < k; ++kk)
    mm_at_row(c + static_cast<std::size_t>(kk) * m, a, b, n, k, m, kk);
}

void add(double* out, const double* a, const double* b, int n) {
  for (int i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void mul(double* out, const double* a, const double* b, int n) {
  for (int i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void add_row(double* out, const double* x, const double* row, int n, int m) {
  for (int i = 0; i < n; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * m;
    for (int j = 0; j < m; ++j) out[off + j] = x[off + j] + row[j];
  }
}

void mul_row(double* out, const double* x, const double* row, int n, int m) {
  for (int i = 0; i < n; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * m;
    for (int j = 0; j < m; ++j) out[off + j] = x[off + j] * row[j];
  }
}

void relu(double* out, const double* x, int n) {
  for (int i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(double* dx, const double* x, const double* dy, int n) {
  for (int i = 0; i < n; ++i) dx[i] += x[i] > 0.0 ? dy[i] : 0.0;
}

void gelu(double* out, const double* x, int n) {
  for (int i = 0; i < n; ++i) out[i] = gelu_one(x[i]);
}

void gelu_backward(double* dx, const double* x, const double* dy, int n) {
  for (int i = 0; i < n; ++i) dx[i] += gelu_grad_one(x[i]) * dy[i];
}

void sigmoid(double* out, const double* x, int n) {
  for (int i = 0; i < n; ++i) out[i] = 1.0 / (1.0 + std::exp(-x[i]));
}

void sigmoid_backward(double* dx, const double* y, const double* dy, int n) {
  for (int i = 0; i < n; ++i) dx[i] += y[i] * (1.0 - y[i]) * dy[i];
}

void exp_(double* out, const double* x, int n) {
  for (int i = 0; i < n; ++i) out[i] = std::exp(x[i]);
}

void exp_backward(double* dx, const double* y, const double* dy, int n) {
  for (int i = 0; i < n; ++i) dx[i] += y[i] * dy[i];
}

void softmax_rows(double* out, const double* x, int n, int m) {
  for (int i = 0; i < n; ++i)
    softmax_row(out + static_cast<std::size_t>(i) * m,
                x + static_cast<std::size_t>(i) * m, m);
}

void softmax_rows_backward(double* dx, const double* y, const double* dy,
                           int n, int m) {
  for (int i = 0; i < n; ++i)
    softmax_row_bwd(dx + static_cast<std::size_t>(i) * m,
                    y + static_cast<std::size_t>(i) * m,
                    dy + static_cast<std::size_t>(i) * m, m);
}

void layernorm_rows(double* out, double* mean, double* rstd, const double* x,
                    int n, int m, double eps) {
  for (int i = 0; i < n; ++i)
    ln_row(out + static_cast<std::size_t>(i) * m, mean + i, rstd + i,
           x + static_cast<std::size_t>(i) * m, m, eps);
}

void layernorm_rows_backward(double* dx, const double* x, const double* mean,
                             const double* rstd, const double* dy, int n,
                             int m) {
  for (int i = 0; i < n; ++i)
    ln_row_bwd(dx + static_cast<std::size_t>(i) * m,
               x + static_cast<std::size_t>(i) * m, mean[i], rstd[i],
               dy + static_cast<std::size_t>(i) * m, m);
}

void attention(double* out, double* probs, const double* qkv, int batch,
               int seqlen, int heads, int channels) {
  const int hs = channels / heads;
  for (int bh = 0; bh < batch * heads; ++bh) {
    const int b = bh / heads, h = bh % heads;
    double* pbase =
        probs + static_cast<std::size_t>(b) * heads * seqlen * seqlen;
    attn_bh(out, pbase, qkv, b, h, seqlen, channels, hs);
  }
}

void attention_backward(double* dqkv, const double* dout, const double* probs,
                        const double* qkv, int batch, int seqlen, int heads,
                        int channels) {
  const int hs = channels / heads;
  for (int bh = 0; bh < batch * heads; ++bh) {
    const int b = bh / heads, h = bh % heads;
    const double* pbase =
        probs + static_cast<std::size_t>(b) * heads * seqlen * seqlen;
    attn_bh_bwd(dqkv, dout, pbase, qkv, b, h, seqlen, channels, hs);
  }
}

void pairwise_cosine(double* cos, double* unit, double* clamped,
                     const double* v, int n, int d, double eps) {
  for (int i = 0; i < n; ++i) {
    const double* vi = v + static_cast<std::size_t>(i) * d;
    double sq = 0.0;
    for (int q = 0; q < d; ++q) sq += vi[q] * vi[q];
    const double norm = std::sqrt(sq);
    clamped[i] = norm > eps ? norm : eps;
    const double inv = 1.0 / clamped[i];
    double* ui = unit + static_cast<std::size_t>(i) * d;
    for (int q = 0; q < d; ++q) ui[q] = vi[q] * inv;
  }
  std::vector<double> ut(static_cast<std::size_t>(d) * n);
  for (int i = 0; i < n; ++i)
    for (int q = 0; q < d; ++q)
      ut[static_cast<std::size_t>(q) * n + i] =
          unit[static_cast<std::size_t>(i) * d + q];
  for (int i = 0; i < n; ++i)
    mm_row(cos + static_cast<std::size_t>(i) * n,
           unit + static_cast<std::size_t>(i) * d, ut.data(), d, n, true);
}

void pairwise_cosine_backward(double* dv, const double* dcos,
                              const double* cos, const double* unit,
                              const double* clamped, int n, int d,
                              double eps) {
  for (int i = 0; i < n; ++i)
    cosine_row_bwd(dv + static_cast<std::size_t>(i) * d, dcos, cos, unit,
                   clamped, n, d, eps, i);
}

double cross_entropy(double* probs, const double* logits, const int* labels,
                     int n, int classes) {
  check_labels(labels, n, classes);
  double total = 0.0;
  for (int i = 0; i < n; ++i)
    total += ce_row(probs + static_cast<std::size_t>(i) * classes,
                    logits + static_cast<std::size_t>(i) * classes, classes,
                    labels[i]);
  return total / n;
}

void cross_entropy_backward(double* dlogits, const double* probs,
                            const int* labels, int n, int classes,
                            double dloss) {
  const double scale = dloss / n;
  for (int i = 0; i < n; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * classes;
    for (int c = 0; c < classes; ++c) dlogits[off + c] += scale * probs[off + c];
    dlogits[off + labels[i]] -= scale;
  }
}

void adamw_update(double* param, const double* grad, double* m, double* v,
                  int n, double lr, double beta1, double beta2, double eps,
                  double weight_decay, long step) {
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (int i = 0; i < n; ++i)
    adamw_one(param, grad, m, v, i, lr, beta1, beta2, eps, weight_decay, bc1,
              bc2);
}

}  // namespace serial

namespace par {

void matmul(double* c, const double* a, const double* b, int n, int k, int m) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i)
    mm_row(c + static_cast<std::size_t>(i) * m,
           a + static_cast<std::size_t>(i) * k, b, k, m, true);
}

void matmul_bt_acc(double* c, const double* a, const double* b, int n, int m,
                   int k) {
  std::vector<double> bt(static_cast<std::size_t>(m) * k);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < m; ++j)
      bt[static_cast<std::size_t>(j) * k + i] =
          b[static_cast<std::size_t>(i) * m + j];
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i)
    mm_row(c + static_cast<std::size_t>(i) * k,
           a + static_cast<std::size_t>(i) * m, bt.data(), m, k, false);
}

void matmul_at_acc(double* c, const double* a, const double* b, int n, int k,
                   int m) {
#pragma omp parallel for schedule(static)
  for (int kk = 0; kk < k; ++kk)
    mm_at_row(c + static_cast<std::size_t>(kk) * m, a, b, n, k, m, kk);
}

void add(double* out, const double* a, const double* b, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void mul(double* out, const double* a, const double* b, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void add_row(double* out, const double* x, const double* row, int n, int m) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * m;
    for (int j = 0; j < m; ++j) out[off + j] = x[off + j] + row[j];
  }
}

void mul_row(double* out, const double* x, const double* row, int n, int m) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * m;
    for (int j = 0; j < m; ++j) out[off + j] = x[off + j] * row[j];
  }
}

void relu(double* out, const double* x, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(double* dx, const double* x, const double* dy, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) dx[i] += x[i] > 0.0 ? dy[i] : 0.0;
}

void gelu(double* out, const double* x, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) out[i] = gelu_one(x[i]);
}

void gelu_backward(double* dx, const double* x, const double* dy, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) dx[i] += gelu_grad_one(x[i]) * dy[i];
}

void sigmoid(double* out, const double* x, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) out[i] = 1.0 / (1.0 + std::exp(-x[i]));
}

void sigmoid_backward(double* dx, const double* y, const double* dy, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) dx[i] += y[i] * (1.0 - y[i]) * dy[i];
}

void exp_(double* out, const double* x, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) out[i] = std::exp(x[i]);
}

void exp_backward(double* dx, const double* y, const double* dy, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) dx[i] += y[i] * dy[i];
}

void softmax_rows(double* out, const double* x, int n, int m) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i)
    softmax_row(out + static_cast<std::size_t>(i) * m,
                x + static_cast<std::size_t>(i) * m, m);
}

void softmax_rows_backward(double* dx, const double* y, const double* dy,
                           int n, int m) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i)
    softmax_row_bwd(dx + static_cast<std::size_t>(i) * m,
                    y + static_cast<std::size_t>(i) * m,
                    dy + static_cast<std::size_t>(i) * m, m);
}

void layernorm_rows(double* out, double* mean, double* rstd, const double* x,
                    int n, int m, double eps) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i)
    ln_row(out + static_cast<std::size_t>(i) * m, mean + i, rstd + i,
           x + static_cast<std::size_t>(i) * m, m, eps);
}

void layernorm_rows_backward(double* dx, const double* x, const double* mean,
                             const double* rstd, const double* dy, int n,
                             int m) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i)
    ln_row_bwd(dx + static_cast<std::size_t>(i) * m,
               x + static_cast<std::size_t>(i) * m, mean[i], rstd[i],
               dy + static_cast<std::size_t>(i) * m, m);
}

void attention(double* out, double* probs, const double* qkv, int batch,
               int seqlen, int heads, int channels) {
  const int hs = channels / heads;
#pragma omp parallel for schedule(static)
  for (int bh = 0; bh < batch * heads; ++bh) {
    const int b = bh / heads, h = bh % heads;
    double* pbase =
        probs + static_cast<std::size_t>(b) * heads * seqlen * seqlen;
    attn_bh(out, pbase, qkv, b, h, seqlen, channels, hs);
  }
}

void attention_backward(double* dqkv, const double* dout, const double* probs,
                        const double* qkv, int batch, int seqlen, int heads,
                        int channels) {
  const int hs = channels / heads;
  // Writes within one (b, h) pair touch only that batch row range and that
  // head's channel slice of dqkv, so iterations are independent.
#pragma omp parallel for schedule(static)
  for (int bh = 0; bh < batch * heads; ++bh) {
    const int b = bh / heads, h = bh % heads;
    const double* pbase =
        probs + static_cast<std::size_t>(b) * heads * seqlen * seqlen;
    attn_bh_bwd(dqkv, dout, pbase, qkv, b, h, seqlen, channels, hs);
  }
}

void pairwise_cosine(double* cos, double* unit, double* clamped,
                     const double* v, int n, int d, double eps) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    const double* vi = v + static_cast<std::size_t>(i) * d;
    double sq = 0.0;
    for (int q = 0; q < d; ++q) sq += vi[q] * vi[q];
    const double norm = std::sqrt(sq);
    clamped[i] = norm > eps ? norm : eps;
    const double inv = 1.0 / clamped[i];
    double* ui = unit + static_cast<std::size_t>(i) * d;
    for (int q = 0; q < d; ++q) ui[q] = vi[q] * inv;
  }
  std::vector<double> ut(static_cast<std::size_t>(d) * n);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i)
    for (int q = 0; q < d; ++q)
      ut[static_cast<std::size_t>(q) * n + i] =
          unit[static_cast<std::size_t>(i) * d + q];
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i)
    mm_row(cos + static_cast<std::size_t>(i) * n,
           unit + static_cast<std::size_t>(i) * d, ut.data(), d, n, true);
}

void pairwise_cosine_backward(double* dv, const double* dcos,
                              const double* cos, const double* unit,
                              const double* clamped, int n, int d,
                              double eps) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i)
    cosine_row_bwd(dv + static_cast<std::size_t>(i) * d, dcos, cos, unit,
                   clamped, n, d, eps, i);
}

double cross_entropy(double* probs, const double* logits, const int* labels,
                     int n, int classes) {
  check_labels(labels, n, classes);
  std::vector<double> nll(n);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i)
    nll[i] = ce_row(probs + static_cast<std::size_t>(i) * classes,
                    logits + static_cast<std::size_t>(i) * classes, classes,
                    labels[i]);
  // Serial reduction in index order so the total matches serial:: bit for bit.
  double total = 0.0;
  for (int i = 0; i < n; ++i) total += nll[i];
  return total / n;
}

void cross_entropy_backward(double* dlogits, const double* probs,
                            const int* labels, int n, int classes,
                            double dloss) {
  const double scale = dloss / n;
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * classes;
    for (int c = 0; c < classes; ++c) dlogits[off + c] += scale * probs[off + c];
    dlogits[off + labels[i]] -= scale;
  }
}

void adamw_update(double* param, const double* grad, double* m, double* v,
                  int n, double lr, double beta1, double beta2, double eps,
                  double weight_decay, long step) {
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i)
    adamw_one(param, grad, m, v, i, lr, beta1, beta2, eps, weight_decay, bc1,
              bc2);
}

}  // namespace par

#define CPROBE_DISPATCH(call) \
  do {                        \
    if (g_parallel)           \
      par::call;              \
    else                      \
      serial::call;           \
  } while (0)

void matmul(double* c, const double* a, const double* b, int n, int k, int m) {
  CPROBE_DISPATCH(matmul(c, a, b, n, k, m));
}
void matmul_bt_acc(double* c, const double* a, const double* b, int n, int m,
                   int k) {
  CPROBE_DISPATCH(matmul_bt_acc(c, a, b, n, m, k));
}
void matmul_at_acc(double* c, const double* a, const double* b, int n, int k,
                   int m) {
  CPROBE_DISPATCH(matmul_at_acc(c, a, b, n, k, m));
}
void add(double* out, const double* a, const double* b, int n) {
  CPROBE_DISPATCH(add(out, a, b, n));
}
void mul(double* out, const double* a, const double* b, int n) {
  CPROBE_DISPATCH(mul(out, a, b, n));
}
void add_row(double* out, const double* x, const double* row, int n, int m) {
  CPROBE_DISPATCH(add_row(out, x, row, n, m));
}
void mul_row(double* out, const double* x, const double* row, int n, int m) {
  CPROBE_DISPATCH(mul_row(out, x, row, n, m));
}
void relu(double* out, const double* x, int n) {
  CPROBE_DISPATCH(relu(out, x, n));
}
void relu_backward(double* dx, const double* x, const double* dy, int n) {
  CPROBE_DISPATCH(relu_backward(dx, x, dy, n));
}
void gelu(double* out, const double* x, int n) {
  CPROBE_DISPATCH(gelu(out, x, n));
}
void gelu_backward(double* dx, const double* x, const double* dy, int n) {
  CPROBE_DISPATCH(gelu_backward(dx, x, dy, n));
}
void sigmoid(double* out, const double* x, int n) {
  CPROBE_DISPATCH(sigmoid(out, x, n));
}
void sigmoid_backward(double* dx, const double* y, const double* dy, int n) {
  CPROBE_DISPATCH(sigmoid_backward(dx, y, dy, n));
}
void exp_(double* out, const double* x, int n) {
  CPROBE_DISPATCH(exp_(out, x, n));
}
void exp_backward(double* dx, const double* y, const double* dy, int n) {
  CPROBE_DISPATCH(exp_backward(dx, y, dy, n));
}
void softmax_rows(double* out, const double* x, int n, int m) {
  CPROBE_DISPATCH(softmax_rows(out, x, n, m));
}
void softmax_rows_backward(double* dx, const double* y, const double* dy,
                           int n, int m) {
  CPROBE_DISPATCH(softmax_rows_backward(dx, y, dy, n, m));
}
void layernorm_rows(double* out, double* mean, double* rstd, const double* x,
                    int n, int m, double eps) {
  CPROBE_DISPATCH(layernorm_rows(out, mean, rstd, x, n, m, eps));
}
void layernorm_rows_backward(double* dx, const double* x, const double* mean,
                             const double* rstd, const double* dy, int n,
                             int m) {
  CPROBE_DISPATCH(layernorm_rows_backward(dx, x, mean, rstd, dy, n, m));
}
void attention(double* out, double* probs, const double* qkv, int batch,
               int seqlen, int heads, int channels) {
  CPROBE_DISPATCH(attention(out, probs, qkv, batch, seqlen, heads, channels));
}
void attention_backward(double* dqkv, const double* dout, const double* probs,
                        const double* qkv, int batch, int seqlen, int heads,
                        int channels) {
  CPROBE_DISPATCH(
      attention_backward(dqkv, dout, probs, qkv, batch, seqlen, heads,
                         channels));
}
void pairwise_cosine(double* cos, double* unit, double* clamped,
                     const double* v, int n, int d, double eps) {
  CPROBE_DISPATCH(pairwise_cosine(cos, unit, clamped, v, n, d, eps));
}
void pairwise_cosine_backward(double* dv, const double* dcos,
                              const double* cos, const double* unit,
                              const double* clamped, int n, int d,
                              double eps) {
  CPROBE_DISPATCH(
      pairwise_cosine_backward(dv, dcos, cos, unit, clamped, n, d, eps));
}
double cross_entropy(double* probs, const double* logits, const int* labels,
                     int n, int classes) {
  return g_parallel ? par::cross_entropy(probs, logits, labels, n, classes)
                    : serial::cross_entropy(probs, logits, labels, n, classes);
}
void cross_entropy_backward(double* dlogits, const double* probs,
                            const int* labels, int n, int classes,
                            double dloss) {
  CPROBE_DISPATCH(
      cross_entropy_backward(dlogits, probs, labels, n, classes, dloss));
}
void adamw_update(double* param, const double* grad, double* m, double* v,
                  int n, double lr, double beta1, double beta2, double eps,
                  double weight_decay, long step) {
  CPROBE_DISPATCH(adamw_update(param, grad, m, v, n, lr, beta1, beta2, eps,
                               weight_decay, step));
}

#undef CPROBE_DISPATCH

double sum(const double* x, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += x[i];
  return s;
}

void gather_rows(double* out, const double* table, const int* ids, int n,
                 int d) {
  for (int i = 0; i < n; ++i)
    std::memcpy(out + static_cast<std::size_t>(i) * d,
                table + static_cast<std::size_t>(ids[i]) * d,
                sizeof(double) * d);
}

void scatter_rows_acc(double* dtable, const double* dout, const int* ids,
                      int n, int d) {
  // Serial on purpose: repeated ids collide, and accumulation order must be
  // deterministic.
  for (int i = 0; i < n; ++i) {
    double* drow = dtable + static_cast<std::size_t>(ids[i]) * d;
    const double* srow = dout + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) drow[j] += srow[j];
  }
}

bool all_finite(const double* x, int n) {
  for (int i = 0; i < n; ++i)
    if (!std::isfinite(x[i])) return false;
  return true;
}

}  // namespace cprobe::kernels
