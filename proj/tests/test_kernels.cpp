#include <doctest.h>
#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include "cprobe/kernels.hpp"
#include "cprobe/rng.hpp"

namespace k = cprobe::kernels;
using cprobe::Rng;

namespace {

std::vector<double> randvec(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal() * scale;
  return v;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("matmul matches a naive reference") {
  Rng rng(1);
  const int n = 7, kk = 5, m = 9;
  const auto a = randvec(rng, n * kk), b = randvec(rng, kk * m);
  std::vector<double> c(n * m), ref(n * m);
  k::serial::matmul(c.data(), a.data(), b.data(), n, kk, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      double s = 0.0;
      for (int q = 0; q < kk; ++q) s += a[i * kk + q] * b[q * m + j];
      ref[i * m + j] = s;
    }
  for (int i = 0; i < n * m; ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-13));
}

TEST_CASE("matmul transpose variants match explicit transposition") {
  Rng rng(2);
  const int n = 6, m = 8, kk = 4;
  const auto a = randvec(rng, n * m);
  const auto b = randvec(rng, kk * m);
  // C (n x kk) += A (n x m) * B^T
  std::vector<double> c(n * kk, 0.5), ref = c;
  k::serial::matmul_bt_acc(c.data(), a.data(), b.data(), n, m, kk);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < kk; ++j) {
      double s = 0.0;
      for (int q = 0; q < m; ++q) s += a[i * m + q] * b[j * m + q];
      ref[i * kk + j] += s;
    }
  for (int i = 0; i < n * kk; ++i)
    CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-13));

  // C (m x kk) += A^T, A is (n x m), B is (n x kk)
  const auto b2 = randvec(rng, n * kk);
  std::vector<double> c2(m * kk, -0.25), ref2 = c2;
  k::serial::matmul_at_acc(c2.data(), a.data(), b2.data(), n, m, kk);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < kk; ++j) {
      double s = 0.0;
      for (int q = 0; q < n; ++q) s += a[q * m + i] * b2[q * kk + j];
      ref2[i * kk + j] += s;
    }
  for (int i = 0; i < m * kk; ++i)
    CHECK(c2[i] == doctest::Approx(ref2[i]).epsilon(1e-13));
}

TEST_CASE("gelu tracks the erf-exact curve closely and hits the fixpoints") {
  std::vector<double> xs, ys;
  for (double x = -5.0; x <= 5.0; x += 0.1) xs.push_back(x);
  ys.resize(xs.size());
  k::serial::gelu(ys.data(), xs.data(), static_cast<int>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double exact = 0.5 * xs[i] * (1.0 + std::erf(xs[i] / std::sqrt(2.0)));
    CHECK(std::abs(ys[i] - exact) < 1e-2);
  }
  double y0, y10;
  const double x0 = 0.0, x10 = 10.0;
  k::serial::gelu(&y0, &x0, 1);
  k::serial::gelu(&y10, &x10, 1);
  CHECK(y0 == 0.0);
  CHECK(y10 == doctest::Approx(10.0).epsilon(1e-9));
}

TEST_CASE("layernorm rows come out standardized") {
  Rng rng(3);
  const int n = 5, m = 64;
  const auto x = randvec(rng, n * m, 3.0);
  std::vector<double> y(n * m), mean(n), rstd(n);
  k::serial::layernorm_rows(y.data(), mean.data(), rstd.data(), x.data(), n, m,
                            1e-5);
  for (int i = 0; i < n; ++i) {
    double mu = 0.0, var = 0.0;
    for (int j = 0; j < m; ++j) mu += y[i * m + j];
    mu /= m;
    for (int j = 0; j < m; ++j) var += (y[i * m + j] - mu) * (y[i * m + j] - mu);
    var /= m;
    CHECK(mu == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps shrinks it a hair
  }
}

TEST_CASE("softmax rows sum to one and survive huge offsets") {
  const int m = 4;
  std::vector<double> x = {1e6, 1e6 + 1, 1e6 - 2, 1e6 + 0.5};
  std::vector<double> y(m);
  k::serial::softmax_rows(y.data(), x.data(), 1, m);
  double s = 0.0;
  for (const double v : y) {
    CHECK(std::isfinite(v));
    s += v;
  }
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(y[1] > y[3]);
  CHECK(y[3] > y[0]);
  CHECK(y[0] > y[2]);
}

TEST_CASE("attention is causal and matches a hand computation at T=2") {
  // Head size 1: qkv row = [q, k, v].
  const int B = 1, T = 2, H = 1, C = 1;
  std::vector<double> qkv = {0.3, -0.7, 2.0,   // t = 0
                             1.1, 0.4, -1.5};  // t = 1
  std::vector<double> out(B * T * C), probs(B * H * T * T);
  k::serial::attention(out.data(), probs.data(), qkv.data(), B, T, H, C);
  CHECK(out[0] == doctest::Approx(2.0).epsilon(1e-12));
  const double s0 = 1.1 * -0.7, s1 = 1.1 * 0.4;
  const double mx = std::max(s0, s1);
  const double e0 = std::exp(s0 - mx), e1 = std::exp(s1 - mx);
  const double expect = (e0 * 2.0 + e1 * -1.5) / (e0 + e1);
  CHECK(out[1] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("future tokens cannot influence earlier outputs") {
  Rng rng(4);
  const int B = 2, T = 5, H = 4, C = 8;
  auto qkv = randvec(rng, static_cast<std::size_t>(B) * T * 3 * C);
  std::vector<double> out1(B * T * C), out2(B * T * C),
      probs(static_cast<std::size_t>(B) * H * T * T);
  k::serial::attention(out1.data(), probs.data(), qkv.data(), B, T, H, C);
  // Perturb the last position of each sequence.
  for (int b = 0; b < B; ++b)
    for (int j = 0; j < 3 * C; ++j) qkv[(b * T + T - 1) * 3 * C + j] += 10.0;
  k::serial::attention(out2.data(), probs.data(), qkv.data(), B, T, H, C);
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < T - 1; ++t)
      for (int c = 0; c < C; ++c)
        CHECK(out1[(b * T + t) * C + c] == out2[(b * T + t) * C + c]);
}

TEST_CASE("pairwise cosine handles known vectors and zero rows") {
  const int n = 3, d = 2;
  std::vector<double> v = {1.0, 0.0, 1.0, 1.0, 0.0, 0.0};
  std::vector<double> cos(n * n), unit(n * d), clamped(n);
  k::serial::pairwise_cosine(cos.data(), unit.data(), clamped.data(), v.data(),
                             n, d, 1e-8);
  CHECK(cos[0 * n + 0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cos[0 * n + 1] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(cos[1 * n + 0] == cos[0 * n + 1]);
  // The zero row has similarity 0 with everything, itself included.
  for (int j = 0; j < n; ++j) {
    CHECK(cos[2 * n + j] == 0.0);
    CHECK(cos[j * n + 2] == 0.0);
  }
}

TEST_CASE("cross entropy matches closed forms and validates labels") {
  const int n = 2, classes = 3;
  std::vector<double> logits = {0.0, 0.0, 0.0, 0.0, std::log(3.0), 0.0};
  std::vector<int> labels = {1, 1};
  std::vector<double> probs(n * classes);
  const double loss = k::serial::cross_entropy(probs.data(), logits.data(),
                                               labels.data(), n, classes);
  const double row0 = std::log(3.0);        // uniform
  const double row1 = -std::log(3.0 / 5.0); // p(label) = 3/5
  CHECK(loss == doctest::Approx(0.5 * (row0 + row1)).epsilon(1e-12));
  std::vector<int> bad = {1, 3};
  CHECK_THROWS_AS(k::serial::cross_entropy(probs.data(), logits.data(),
                                           bad.data(), n, classes),
                  std::out_of_range);
}

TEST_CASE("adamw applies decoupled decay before the moment update") {
  const double lr = 0.001, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.5;
  double p = 1.0, g = 1.0, m = 0.0, v = 0.0;
  k::serial::adamw_update(&p, &g, &m, &v, 1, lr, b1, b2, eps, wd, 1);
  // Decay first, then Adam on the decayed value.
  const double pd = 1.0 - lr * wd * 1.0;
  const double mhat = (0.1 * g) / (1.0 - b1);
  const double vhat = (0.001 * g * g) / (1.0 - b2);
  const double before = pd - lr * mhat / (std::sqrt(vhat) + eps);
  // The other order would decay the post-Adam value instead.
  const double adam_first = 1.0 - lr * mhat / (std::sqrt(vhat) + eps);
  const double after = adam_first - lr * wd * adam_first;
  CHECK(p == doctest::Approx(before).epsilon(1e-15));
  CHECK(p != doctest::Approx(after).epsilon(1e-9));

  // No decay, unit gradient: the classic first-step size is ~lr.
  p = 1.0;
  m = v = 0.0;
  k::serial::adamw_update(&p, &g, &m, &v, 1, lr, b1, b2, eps, 0.0, 1);
  CHECK(p == doctest::Approx(0.999).epsilon(1e-6));
}

TEST_CASE("serial and OpenMP kernels agree bit for bit") {
  omp_set_num_threads(3);  // force real multi-thread scheduling
  Rng rng(5);
  const int n = 33, kk = 17, m = 29;

  SUBCASE("matmul family") {
    const auto a = randvec(rng, n * kk), b = randvec(rng, kk * m);
    std::vector<double> c1(n * m), c2(n * m);
    k::serial::matmul(c1.data(), a.data(), b.data(), n, kk, m);
    k::par::matmul(c2.data(), a.data(), b.data(), n, kk, m);
    CHECK(bit_equal(c1, c2));

    const auto a2 = randvec(rng, n * m), b2 = randvec(rng, kk * m);
    std::vector<double> d1(n * kk, 0.125), d2 = d1;
    k::serial::matmul_bt_acc(d1.data(), a2.data(), b2.data(), n, m, kk);
    k::par::matmul_bt_acc(d2.data(), a2.data(), b2.data(), n, m, kk);
    CHECK(bit_equal(d1, d2));

    const auto b3 = randvec(rng, n * m);
    std::vector<double> e1(kk * m, -0.5), e2 = e1;
    const auto a3 = randvec(rng, n * kk);
    k::serial::matmul_at_acc(e1.data(), a3.data(), b3.data(), n, kk, m);
    k::par::matmul_at_acc(e2.data(), a3.data(), b3.data(), n, kk, m);
    CHECK(bit_equal(e1, e2));
  }

  SUBCASE("row kernels") {
    const auto x = randvec(rng, n * m), row = randvec(rng, m);
    std::vector<double> y1(n * m), y2(n * m);
    k::serial::add_row(y1.data(), x.data(), row.data(), n, m);
    k::par::add_row(y2.data(), x.data(), row.data(), n, m);
    CHECK(bit_equal(y1, y2));
    k::serial::mul_row(y1.data(), x.data(), row.data(), n, m);
    k::par::mul_row(y2.data(), x.data(), row.data(), n, m);
    CHECK(bit_equal(y1, y2));
    k::serial::softmax_rows(y1.data(), x.data(), n, m);
    k::par::softmax_rows(y2.data(), x.data(), n, m);
    CHECK(bit_equal(y1, y2));
  }

  SUBCASE("layernorm forward and backward") {
    const auto x = randvec(rng, n * m, 2.0), dy = randvec(rng, n * m);
    std::vector<double> y1(n * m), y2(n * m), mu1(n), mu2(n), rs1(n), rs2(n);
    k::serial::layernorm_rows(y1.data(), mu1.data(), rs1.data(), x.data(), n,
                              m, 1e-5);
    k::par::layernorm_rows(y2.data(), mu2.data(), rs2.data(), x.data(), n, m,
                           1e-5);
    CHECK(bit_equal(y1, y2));
    std::vector<double> dx1(n * m, 0.25), dx2 = dx1;
    k::serial::layernorm_rows_backward(dx1.data(), x.data(), mu1.data(),
                                       rs1.data(), dy.data(), n, m);
    k::par::layernorm_rows_backward(dx2.data(), x.data(), mu2.data(),
                                    rs2.data(), dy.data(), n, m);
    CHECK(bit_equal(dx1, dx2));
  }

  SUBCASE("attention forward and backward") {
    const int B = 3, T = 5, H = 4, C = 16;
    const auto qkv = randvec(rng, static_cast<std::size_t>(B) * T * 3 * C);
    const auto dout = randvec(rng, static_cast<std::size_t>(B) * T * C);
    std::vector<double> o1(B * T * C), o2(B * T * C);
    std::vector<double> p1(static_cast<std::size_t>(B) * H * T * T),
        p2(p1.size());
    k::serial::attention(o1.data(), p1.data(), qkv.data(), B, T, H, C);
    k::par::attention(o2.data(), p2.data(), qkv.data(), B, T, H, C);
    CHECK(bit_equal(o1, o2));
    CHECK(bit_equal(p1, p2));
    std::vector<double> dq1(qkv.size(), 0.0), dq2(qkv.size(), 0.0);
    k::serial::attention_backward(dq1.data(), dout.data(), p1.data(),
                                  qkv.data(), B, T, H, C);
    k::par::attention_backward(dq2.data(), dout.data(), p2.data(), qkv.data(),
                               B, T, H, C);
    CHECK(bit_equal(dq1, dq2));
  }

  SUBCASE("pairwise cosine forward and backward") {
    const int nn = 21, d = 13;
    auto v = randvec(rng, static_cast<std::size_t>(nn) * d);
    // Inject a zero row to hit the clamped branch.
    for (int q = 0; q < d; ++q) v[3 * d + q] = 0.0;
    const auto dcos = randvec(rng, static_cast<std::size_t>(nn) * nn);
    std::vector<double> c1(nn * nn), c2(nn * nn), u1(nn * d), u2(nn * d),
        cl1(nn), cl2(nn);
    k::serial::pairwise_cosine(c1.data(), u1.data(), cl1.data(), v.data(), nn,
                               d, 1e-8);
    k::par::pairwise_cosine(c2.data(), u2.data(), cl2.data(), v.data(), nn, d,
                            1e-8);
    CHECK(bit_equal(c1, c2));
    std::vector<double> dv1(nn * d, 0.0), dv2(nn * d, 0.0);
    k::serial::pairwise_cosine_backward(dv1.data(), dcos.data(), c1.data(),
                                        u1.data(), cl1.data(), nn, d, 1e-8);
    k::par::pairwise_cosine_backward(dv2.data(), dcos.data(), c2.data(),
                                     u2.data(), cl2.data(), nn, d, 1e-8);
    CHECK(bit_equal(dv1, dv2));
  }

  SUBCASE("cross entropy and adamw") {
    const int rows = 37, classes = 11;
    const auto logits = randvec(rng, static_cast<std::size_t>(rows) * classes);
    std::vector<int> labels(rows);
    for (int i = 0; i < rows; ++i)
      labels[i] = static_cast<int>(rng.below(classes));
    std::vector<double> pr1(rows * classes), pr2(rows * classes);
    const double l1 = k::serial::cross_entropy(pr1.data(), logits.data(),
                                               labels.data(), rows, classes);
    const double l2 = k::par::cross_entropy(pr2.data(), logits.data(),
                                            labels.data(), rows, classes);
    CHECK(std::memcmp(&l1, &l2, sizeof(double)) == 0);
    CHECK(bit_equal(pr1, pr2));
    std::vector<double> dl1(rows * classes, 0.0), dl2(rows * classes, 0.0);
    k::serial::cross_entropy_backward(dl1.data(), pr1.data(), labels.data(),
                                      rows, classes, 1.0);
    k::par::cross_entropy_backward(dl2.data(), pr2.data(), labels.data(), rows,
                                   classes, 1.0);
    CHECK(bit_equal(dl1, dl2));

    const int np = 501;
    auto param1 = randvec(rng, np);
    auto param2 = param1;
    const auto grad = randvec(rng, np);
    std::vector<double> m1(np, 0.0), m2(np, 0.0), v1(np, 0.0), v2(np, 0.0);
    k::serial::adamw_update(param1.data(), grad.data(), m1.data(), v1.data(),
                            np, 1e-3, 0.9, 0.999, 1e-8, 0.1, 7);
    k::par::adamw_update(param2.data(), grad.data(), m2.data(), v2.data(), np,
                         1e-3, 0.9, 0.999, 1e-8, 0.1, 7);
    CHECK(bit_equal(param1, param2));
    CHECK(bit_equal(m1, m2));
    CHECK(bit_equal(v1, v2));
  }

  SUBCASE("dispatch honors the parallel toggle") {
    const auto a = randvec(rng, n * kk), b = randvec(rng, kk * m);
    std::vector<double> c1(n * m), c2(n * m);
    k::set_parallel(false);
    CHECK_FALSE(k::parallel_enabled());
    k::matmul(c1.data(), a.data(), b.data(), n, kk, m);
    k::set_parallel(true);
    CHECK(k::parallel_enabled());
    k::matmul(c2.data(), a.data(), b.data(), n, kk, m);
    CHECK(bit_equal(c1, c2));
  }
}

TEST_CASE("scatter accumulates repeated ids deterministically") {
  const int d = 3;
  std::vector<double> table(2 * d, 0.0);
  std::vector<double> dout = {1, 2, 3, 10, 20, 30, 100, 200, 300};
  std::vector<int> ids = {1, 0, 1};
  k::scatter_rows_acc(table.data(), dout.data(), ids.data(), 3, d);
  CHECK(table[0 * d + 0] == 10.0);
  CHECK(table[1 * d + 0] == 101.0);
  CHECK(table[1 * d + 2] == 303.0);
}

TEST_CASE("all_finite flags NaN and infinity") {
  std::vector<double> ok = {1.0, -2.0, 0.0};
  CHECK(k::all_finite(ok.data(), 3));
  ok[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(k::all_finite(ok.data(), 3));
  ok[1] = std::numeric_limits<double>::infinity();
  CHECK_FALSE(k::all_finite(ok.data(), 3));
}
