#include "cprobe/ops.hpp"

#include <cstring>
#include <stdexcept>
#include <string>

#include "cprobe/kernels.hpp"

namespace cprobe::ops {

namespace {

using detail::Node;

Node* N(Tensor t) { return &t.tape()->node(t.id()); }

std::string dims(const Node* n) {
  return std::to_string(n->rows) + "x" + std::to_string(n->cols);
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void require_same_tape(Tensor a, Tensor b, const char* op) {
  require(a.tape() == b.tape(),
          std::string(op) + ": operands live on different tapes");
}

Tensor out_like(Tensor a, int rows, int cols, bool rg) {
  return a.tape()->make(rows, cols, rg);
}

void acc(double* dst, const double* src, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

}  // namespace

Tensor matmul(Tensor a, Tensor b) {
  require_same_tape(a, b, "matmul");
  Node *na = N(a), *nb = N(b);
  require(na->cols == nb->rows,
          "matmul: inner dims differ, " + dims(na) + " @ " + dims(nb));
  const int n = na->rows, k = na->cols, m = nb->cols;
  const bool rg = na->requires_grad || nb->requires_grad;
  Tensor out = out_like(a, n, m, rg);
  Node* no = N(out);
  kernels::matmul(no->data, na->data, nb->data, n, k, m);
  if (rg) {
    no->backward = [na, nb, no, n, k, m] {
      if (na->requires_grad)
        kernels::matmul_bt_acc(na->grad, no->grad, nb->data, n, m, k);
      if (nb->requires_grad)
        kernels::matmul_at_acc(nb->grad, na->data, no->grad, n, k, m);
    };
  }
  return out;
}

Tensor add(Tensor a, Tensor b) {
  require_same_tape(a, b, "add");
  Node *na = N(a), *nb = N(b);
  require(na->rows == nb->rows && na->cols == nb->cols,
          "add: shapes differ, " + dims(na) + " vs " + dims(nb));
  const bool rg = na->requires_grad || nb->requires_grad;
  Tensor out = out_like(a, na->rows, na->cols, rg);
  Node* no = N(out);
  const int total = static_cast<int>(out.size());
  kernels::add(no->data, na->data, nb->data, total);
  if (rg) {
    no->backward = [na, nb, no, total] {
      if (na->requires_grad) acc(na->grad, no->grad, total);
      if (nb->requires_grad) acc(nb->grad, no->grad, total);
    };
  }
  return out;
}

Tensor mul(Tensor a, Tensor b) {
  require_same_tape(a, b, "mul");
  Node *na = N(a), *nb = N(b);
  require(na->rows == nb->rows && na->cols == nb->cols,
          "mul: shapes differ, " + dims(na) + " vs " + dims(nb));
  const bool rg = na->requires_grad || nb->requires_grad;
  Tensor out = out_like(a, na->rows, na->cols, rg);
  Node* no = N(out);
  const int total = static_cast<int>(out.size());
  kernels::mul(no->data, na->data, nb->data, total);
  if (rg) {
    no->backward = [na, nb, no, total] {
      if (na->requires_grad)
        for (int i = 0; i < total; ++i) na->grad[i] += no->grad[i] * nb->data[i];
      if (nb->requires_grad)
        for (int i = 0; i < total; ++i) nb->grad[i] += no->grad[i] * na->data[i];
    };
  }
  return out;
}

Tensor div(Tensor a, Tensor b) {
  require_same_tape(a, b, "div");
  Node *na = N(a), *nb = N(b);
  require(na->rows == nb->rows && na->cols == nb->cols,
          "div: shapes differ, " + dims(na) + " vs " + dims(nb));
  const bool rg = na->requires_grad || nb->requires_grad;
  Tensor out = out_like(a, na->rows, na->cols, rg);
  Node* no = N(out);
  const int total = static_cast<int>(out.size());
  for (int i = 0; i < total; ++i) no->data[i] = na->data[i] / nb->data[i];
  if (rg) {
    no->backward = [na, nb, no, total] {
      if (na->requires_grad)
        for (int i = 0; i < total; ++i) na->grad[i] += no->grad[i] / nb->data[i];
      if (nb->requires_grad)
        for (int i = 0; i < total; ++i)
          nb->grad[i] -= no->grad[i] * no->data[i] / nb->data[i];
    };
  }
  return out;
}

Tensor add_rowvec(Tensor x, Tensor row) {
  require_same_tape(x, row, "add_rowvec");
  Node *nx = N(x), *nr = N(row);
  require(nr->rows == 1 && nr->cols == nx->cols,
          "add_rowvec: need 1x" + std::to_string(nx->cols) + " row, got " +
              dims(nr) + " for x " + dims(nx));
  const bool rg = nx->requires_grad || nr->requires_grad;
  Tensor out = out_like(x, nx->rows, nx->cols, rg);
  Node* no = N(out);
  kernels::add_row(no->data, nx->data, nr->data, nx->rows, nx->cols);
  if (rg) {
    no->backward = [nx, nr, no] {
      const int n = nx->rows, m = nx->cols;
      if (nx->requires_grad)
        acc(nx->grad, no->grad, static_cast<std::size_t>(n) * m);
      if (nr->requires_grad)
        for (int i = 0; i < n; ++i)
          acc(nr->grad, no->grad + static_cast<std::size_t>(i) * m, m);
    };
  }
  return out;
}

Tensor mul_rowvec(Tensor x, Tensor row) {
  require_same_tape(x, row, "mul_rowvec");
  Node *nx = N(x), *nr = N(row);
  require(nr->rows == 1 && nr->cols == nx->cols,
          "mul_rowvec: need 1x" + std::to_string(nx->cols) + " row, got " +
              dims(nr) + " for x " + dims(nx));
  const bool rg = nx->requires_grad || nr->requires_grad;
  Tensor out = out_like(x, nx->rows, nx->cols, rg);
  Node* no = N(out);
  kernels::mul_row(no->data, nx->data, nr->data, nx->rows, nx->cols);
  if (rg) {
    no->backward = [nx, nr, no] {
      const int n = nx->rows, m = nx->cols;
      for (int i = 0; i < n; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * m;
        if (nx->requires_grad)
          for (int j = 0; j < m; ++j)
            nx->grad[off + j] += no->grad[off + j] * nr->data[j];
        if (nr->requires_grad)
          for (int j = 0; j < m; ++j)
            nr->grad[j] += no->grad[off + j] * nx->data[off + j];
      }
    };
  }
  return out;
}

Tensor scale(Tensor a, double c) {
  Node* na = N(a);
  Tensor out = out_like(a, na->rows, na->cols, na->requires_grad);
  Node* no = N(out);
  const int total = static_cast<int>(out.size());
  for (int i = 0; i < total; ++i) no->data[i] = c * na->data[i];
  if (na->requires_grad) {
    no->backward = [na, no, c, total] {
      for (int i = 0; i < total; ++i) na->grad[i] += c * no->grad[i];
    };
  }
  return out;
}

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(Tensor x, Fwd fwd, Bwd bwd) {
  Node* nx = N(x);
  Tensor out = x.tape()->make(nx->rows, nx->cols, nx->requires_grad);
  Node* no = N(out);
  const int total = static_cast<int>(out.size());
  fwd(no->data, nx->data, total);
  if (nx->requires_grad) {
    no->backward = [nx, no, bwd, total] { bwd(nx, no, total); };
  }
  return out;
}

}  // namespace

Tensor relu(Tensor x) {
  return unary_op(
      x, [](double* o, const double* i, int n) { kernels::relu(o, i, n); },
      [](Node* nx, Node* no, int n) {
        kernels::relu_backward(nx->grad, nx->data, no->grad, n);
      });
}

Tensor gelu(Tensor x) {
  return unary_op(
      x, [](double* o, const double* i, int n) { kernels::gelu(o, i, n); },
      [](Node* nx, Node* no, int n) {
        kernels::gelu_backward(nx->grad, nx->data, no->grad, n);
      });
}

Tensor sigmoid(Tensor x) {
  return unary_op(
      x, [](double* o, const double* i, int n) { kernels::sigmoid(o, i, n); },
      [](Node* nx, Node* no, int n) {
        kernels::sigmoid_backward(nx->grad, no->data, no->grad, n);
      });
}

Tensor exp(Tensor x) {
  return unary_op(
      x, [](double* o, const double* i, int n) { kernels::exp_(o, i, n); },
      [](Node* nx, Node* no, int n) {
        kernels::exp_backward(nx->grad, no->data, no->grad, n);
      });
}

Tensor softmax_rows(Tensor x) {
  Node* nx = N(x);
  Tensor out = x.tape()->make(nx->rows, nx->cols, nx->requires_grad);
  Node* no = N(out);
  kernels::softmax_rows(no->data, nx->data, nx->rows, nx->cols);
  if (nx->requires_grad) {
    no->backward = [nx, no] {
      kernels::softmax_rows_backward(nx->grad, no->data, no->grad, nx->rows,
                                     nx->cols);
    };
  }
  return out;
}

Tensor layernorm_rows(Tensor x, double eps) {
  Node* nx = N(x);
  Tensor out = x.tape()->make(nx->rows, nx->cols, nx->requires_grad);
  Node* no = N(out);
  no->aux.resize(2 * static_cast<std::size_t>(nx->rows));
  double* mean = no->aux.data();
  double* rstd = no->aux.data() + nx->rows;
  kernels::layernorm_rows(no->data, mean, rstd, nx->data, nx->rows, nx->cols,
                          eps);
  if (nx->requires_grad) {
    no->backward = [nx, no, mean, rstd] {
      kernels::layernorm_rows_backward(nx->grad, nx->data, mean, rstd,
                                       no->grad, nx->rows, nx->cols);
    };
  }
  return out;
}

Tensor attention(Tensor qkv, int batch, int seqlen, int heads) {
  Node* nq = N(qkv);
  require(nq->cols % 3 == 0,
          "attention: qkv cols must be 3*channels, got " + dims(nq));
  const int channels = nq->cols / 3;
  require(channels % heads == 0,
          "attention: channels " + std::to_string(channels) +
              " not divisible by heads " + std::to_string(heads));
  require(nq->rows == batch * seqlen,
          "attention: qkv rows " + std::to_string(nq->rows) + " != batch*seqlen " +
              std::to_string(batch * seqlen));
  Tensor out = qkv.tape()->make(nq->rows, channels, nq->requires_grad);
  Node* no = N(out);
  no->aux.resize(static_cast<std::size_t>(batch) * heads * seqlen * seqlen);
  kernels::attention(no->data, no->aux.data(), nq->data, batch, seqlen, heads,
                     channels);
  if (nq->requires_grad) {
    no->backward = [nq, no, batch, seqlen, heads, channels] {
      kernels::attention_backward(nq->grad, no->grad, no->aux.data(), nq->data,
                                  batch, seqlen, heads, channels);
    };
  }
  return out;
}

Tensor pairwise_cosine(Tensor v, double eps) {
  Node* nv = N(v);
  const int n = nv->rows, d = nv->cols;
  Tensor out = v.tape()->make(n, n, nv->requires_grad);
  Node* no = N(out);
  no->aux.resize(static_cast<std::size_t>(n) * d + n);
  double* unit = no->aux.data();
  double* clamped = no->aux.data() + static_cast<std::size_t>(n) * d;
  kernels::pairwise_cosine(no->data, unit, clamped, nv->data, n, d, eps);
  if (nv->requires_grad) {
    no->backward = [nv, no, unit, clamped, n, d, eps] {
      kernels::pairwise_cosine_backward(nv->grad, no->grad, no->data, unit,
                                        clamped, n, d, eps);
    };
  }
  return out;
}

Tensor cross_entropy(Tensor logits, const std::vector<int>& labels) {
  Node* nl = N(logits);
  require(static_cast<int>(labels.size()) == nl->rows,
          "cross_entropy: " + std::to_string(labels.size()) + " labels for " +
              dims(nl) + " logits");
  require(nl->rows >= 1, "cross_entropy: empty batch");
  const int n = nl->rows, classes = nl->cols;
  Tensor out = logits.tape()->make(1, 1, nl->requires_grad);
  Node* no = N(out);
  no->aux.resize(static_cast<std::size_t>(n) * classes);
  no->aux_int = labels;
  no->data[0] =
      kernels::cross_entropy(no->aux.data(), nl->data, labels.data(), n,
                             classes);
  if (nl->requires_grad) {
    no->backward = [nl, no, n, classes] {
      kernels::cross_entropy_backward(nl->grad, no->aux.data(),
                                      no->aux_int.data(), n, classes,
                                      no->grad[0]);
    };
  }
  return out;
}

Tensor gather(Tensor table, const std::vector<int>& ids) {
  Node* nt = N(table);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < nt->rows,
            "gather: id " + std::to_string(ids[i]) + " at position " +
                std::to_string(i) + " outside vocab of " +
                std::to_string(nt->rows));
  }
  const int n = static_cast<int>(ids.size()), d = nt->cols;
  Tensor out = table.tape()->make(n, d, nt->requires_grad);
  Node* no = N(out);
  no->aux_int = ids;
  kernels::gather_rows(no->data, nt->data, ids.data(), n, d);
  if (nt->requires_grad) {
    no->backward = [nt, no, n, d] {
      kernels::scatter_rows_acc(nt->grad, no->grad, no->aux_int.data(), n, d);
    };
  }
  return out;
}

Tensor select_rows(Tensor x, const std::vector<int>& ids) {
  Node* nx = N(x);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < nx->rows,
            "select_rows: row " + std::to_string(ids[i]) + " at position " +
                std::to_string(i) + " outside " + dims(nx));
  }
  const int n = static_cast<int>(ids.size()), d = nx->cols;
  Tensor out = x.tape()->make(n, d, nx->requires_grad);
  Node* no = N(out);
  no->aux_int = ids;
  kernels::gather_rows(no->data, nx->data, ids.data(), n, d);
  if (nx->requires_grad) {
    no->backward = [nx, no, n, d] {
      kernels::scatter_rows_acc(nx->grad, no->grad, no->aux_int.data(), n, d);
    };
  }
  return out;
}

Tensor slice_cols(Tensor x, int c0, int c1) {
  Node* nx = N(x);
  require(0 <= c0 && c0 < c1 && c1 <= nx->cols,
          "slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) +
              ") invalid for " + dims(nx));
  const int n = nx->rows, m = nx->cols, w = c1 - c0;
  Tensor out = x.tape()->make(n, w, nx->requires_grad);
  Node* no = N(out);
  for (int i = 0; i < n; ++i)
    std::memcpy(no->data + static_cast<std::size_t>(i) * w,
                nx->data + static_cast<std::size_t>(i) * m + c0,
                sizeof(double) * w);
  if (nx->requires_grad) {
    no->backward = [nx, no, n, m, w, c0] {
      for (int i = 0; i < n; ++i) {
        double* drow = nx->grad + static_cast<std::size_t>(i) * m + c0;
        const double* srow = no->grad + static_cast<std::size_t>(i) * w;
        for (int j = 0; j < w; ++j) drow[j] += srow[j];
      }
    };
  }
  return out;
}

Tensor rowsum(Tensor x) {
  Node* nx = N(x);
  const int n = nx->rows, m = nx->cols;
  Tensor out = x.tape()->make(n, 1, nx->requires_grad);
  Node* no = N(out);
  for (int i = 0; i < n; ++i)
    no->data[i] = kernels::sum(nx->data + static_cast<std::size_t>(i) * m, m);
  if (nx->requires_grad) {
    no->backward = [nx, no, n, m] {
      for (int i = 0; i < n; ++i) {
        const double g = no->grad[i];
        double* drow = nx->grad + static_cast<std::size_t>(i) * m;
        for (int j = 0; j < m; ++j) drow[j] += g;
      }
    };
  }
  return out;
}

Tensor sum_all(Tensor x) {
  Node* nx = N(x);
  const int total = static_cast<int>(x.size());
  Tensor out = x.tape()->make(1, 1, nx->requires_grad);
  Node* no = N(out);
  no->data[0] = kernels::sum(nx->data, total);
  if (nx->requires_grad) {
    no->backward = [nx, no, total] {
      const double g = no->grad[0];
      for (int i = 0; i < total; ++i) nx->grad[i] += g;
    };
  }
  return out;
}

Tensor mean_all(Tensor x) {
  Node* nx = N(x);
  const int total = static_cast<int>(x.size());
  require(total > 0, "mean_all: empty tensor");
  Tensor out = x.tape()->make(1, 1, nx->requires_grad);
  Node* no = N(out);
  no->data[0] = kernels::sum(nx->data, total) / total;
  if (nx->requires_grad) {
    no->backward = [nx, no, total] {
      const double g = no->grad[0] / total;
      for (int i = 0; i < total; ++i) nx->grad[i] += g;
    };
  }
  return out;
}

Tensor pick(Tensor x, int r, int c) {
  Node* nx = N(x);
  require(r >= 0 && r < nx->rows && c >= 0 && c < nx->cols,
          "pick: (" + std::to_string(r) + "," + std::to_string(c) +
              ") outside " + dims(nx));
  Tensor out = x.tape()->make(1, 1, nx->requires_grad);
  Node* no = N(out);
  const std::size_t idx = static_cast<std::size_t>(r) * nx->cols + c;
  no->data[0] = nx->data[idx];
  if (nx->requires_grad) {
    no->backward = [nx, no, idx] { nx->grad[idx] += no->grad[0]; };
  }
  return out;
}

}  // namespace cprobe::ops
