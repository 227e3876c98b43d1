#include "densebody/core/kernels.hpp"

#include <atomic>
#include <cassert>
#include <cmath>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace densebody::core {

namespace {
std::atomic<bool> g_parallel{true};

bool in_parallel_region() {
#ifdef _OPENMP
  return omp_in_parallel() != 0;
#else
  return false;
#endif
}

inline Scalar gelu_one(Scalar x) {
  // tanh approximation; smooth, so finite-difference checks behave.
  const Scalar c = 0.7978845608028654;  // sqrt(2/pi)
  const Scalar u = c * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

inline void softmax_row(const Scalar* x, Scalar* y, int64_t n) {
  Scalar mx = x[0];
  for (int64_t j = 1; j < n; ++j) mx = x[j] > mx ? x[j] : mx;
  Scalar sum = 0.0;
  for (int64_t j = 0; j < n; ++j) {
    y[j] = std::exp(x[j] - mx);
    sum += y[j];
  }
  const Scalar inv = 1.0 / sum;
  for (int64_t j = 0; j < n; ++j) y[j] *= inv;
}

inline void layernorm_row(const Scalar* x, const Scalar* gamma,
                          const Scalar* beta, Scalar* y, Scalar* mean_out,
                          Scalar* rstd_out, int64_t n, Scalar eps) {
  Scalar mu = 0.0;
  for (int64_t j = 0; j < n; ++j) mu += x[j];
  mu /= Scalar(n);
  Scalar var = 0.0;
  for (int64_t j = 0; j < n; ++j) {
    const Scalar d = x[j] - mu;
    var += d * d;
  }
  var /= Scalar(n);
  const Scalar rstd = 1.0 / std::sqrt(var + eps);
  for (int64_t j = 0; j < n; ++j) y[j] = (x[j] - mu) * rstd * gamma[j] + beta[j];
  *mean_out = mu;
  *rstd_out = rstd;
}

// One output row of gemm, summation over k in ascending order for every
// (i, j). Both the serial reference and the OpenMP kernel call this, which is
// what makes them bit-identical.
inline void gemm_row(const Scalar* A, const Scalar* B, Scalar* Crow, int64_t i,
                     int64_t k, int64_t n, bool ta, bool tb, int64_t lda,
                     bool accumulate) {
  if (!accumulate) {
    for (int64_t j = 0; j < n; ++j) Crow[j] = 0.0;
  }
  if (!tb) {
    // Stream rows of B; inner loop over j vectorizes.
    for (int64_t kk = 0; kk < k; ++kk) {
      const Scalar a = ta ? A[kk * lda + i] : A[i * k + kk];
      const Scalar* Brow = B + kk * n;
      for (int64_t j = 0; j < n; ++j) Crow[j] += a * Brow[j];
    }
  } else {
    // B is n x k: C[i,j] = dot(A_i, B_j) over contiguous rows. The sum seeds
    // from the existing C value so the add order matches the streaming path.
    for (int64_t j = 0; j < n; ++j) {
      const Scalar* Brow = B + j * k;
      Scalar s = Crow[j];
      if (!ta) {
        const Scalar* Arow = A + i * k;
        for (int64_t kk = 0; kk < k; ++kk) s += Arow[kk] * Brow[kk];
      } else {
        for (int64_t kk = 0; kk < k; ++kk) s += A[kk * lda + i] * Brow[kk];
      }
      Crow[j] = s;
    }
  }
}

}  // namespace

void set_parallel(bool on) { g_parallel.store(on); }
bool parallel_enabled() { return g_parallel.load(); }

namespace ref {

void gemm(const Scalar* A, const Scalar* B, Scalar* C, int64_t m, int64_t k,
          int64_t n, bool ta, bool tb, bool accumulate) {
  const int64_t lda = ta ? m : k;
  for (int64_t i = 0; i < m; ++i)
    gemm_row(A, B, C + i * n, i, k, n, ta, tb, lda, accumulate);
}

void softmax_rows(const Scalar* X, Scalar* Y, int64_t m, int64_t n) {
  for (int64_t i = 0; i < m; ++i) softmax_row(X + i * n, Y + i * n, n);
}

void layernorm_rows(const Scalar* X, const Scalar* gamma, const Scalar* beta,
                    Scalar* Y, Scalar* mean, Scalar* rstd, int64_t m, int64_t n,
                    Scalar eps) {
  for (int64_t i = 0; i < m; ++i)
    layernorm_row(X + i * n, gamma, beta, Y + i * n, mean + i, rstd + i, n, eps);
}

void gelu(const Scalar* X, Scalar* Y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) Y[i] = gelu_one(X[i]);
}

}  // namespace ref

namespace par {

void gemm(const Scalar* A, const Scalar* B, Scalar* C, int64_t m, int64_t k,
          int64_t n, bool ta, bool tb, bool accumulate) {
  const int64_t lda = ta ? m : k;
#pragma omp parallel for schedule(static) if (m >= 8)
  for (int64_t i = 0; i < m; ++i)
    gemm_row(A, B, C + i * n, i, k, n, ta, tb, lda, accumulate);
}

void softmax_rows(const Scalar* X, Scalar* Y, int64_t m, int64_t n) {
#pragma omp parallel for schedule(static) if (m >= 16)
  for (int64_t i = 0; i < m; ++i) softmax_row(X + i * n, Y + i * n, n);
}

void layernorm_rows(const Scalar* X, const Scalar* gamma, const Scalar* beta,
                    Scalar* Y, Scalar* mean, Scalar* rstd, int64_t m, int64_t n,
                    Scalar eps) {
#pragma omp parallel for schedule(static) if (m >= 16)
  for (int64_t i = 0; i < m; ++i)
    layernorm_row(X + i * n, gamma, beta, Y + i * n, mean + i, rstd + i, n, eps);
}

void gelu(const Scalar* X, Scalar* Y, int64_t n) {
#pragma omp parallel for schedule(static) if (n >= 4096)
  for (int64_t i = 0; i < n; ++i) Y[i] = gelu_one(X[i]);
}

}  // namespace par

void gemm(const Scalar* A, const Scalar* B, Scalar* C, int64_t m, int64_t k,
          int64_t n, bool ta, bool tb, bool accumulate) {
  if (parallel_enabled() && !in_parallel_region())
    par::gemm(A, B, C, m, k, n, ta, tb, accumulate);
  else
    ref::gemm(A, B, C, m, k, n, ta, tb, accumulate);
}

void softmax_rows(const Scalar* X, Scalar* Y, int64_t m, int64_t n) {
  if (parallel_enabled() && !in_parallel_region())
    par::softmax_rows(X, Y, m, n);
  else
    ref::softmax_rows(X, Y, m, n);
}

void layernorm_rows(const Scalar* X, const Scalar* gamma, const Scalar* beta,
                    Scalar* Y, Scalar* mean, Scalar* rstd, int64_t m, int64_t n,
                    Scalar eps) {
  if (parallel_enabled() && !in_parallel_region())
    par::layernorm_rows(X, gamma, beta, Y, mean, rstd, m, n, eps);
  else
    ref::layernorm_rows(X, gamma, beta, Y, mean, rstd, m, n, eps);
}

void gelu(const Scalar* X, Scalar* Y, int64_t n) {
  if (parallel_enabled() && !in_parallel_region())
    par::gelu(X, Y, n);
  else
    ref::gelu(X, Y, n);
}

Tensor matmul(const Tensor& A, const Tensor& B, bool ta, bool tb) {
  const int64_t m = ta ? A.cols() : A.rows();
  const int64_t k = ta ? A.rows() : A.cols();
  const int64_t kb = tb ? B.cols() : B.rows();
  const int64_t n = tb ? B.rows() : B.cols();
  if (k != kb) throw std::invalid_argument("matmul: inner dims disagree");
  Tensor C(m, n);
  gemm(A.data(), B.data(), C.data(), m, k, n, ta, tb, false);
  return C;
}

}  // namespace densebody::core
