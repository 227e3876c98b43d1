#pragma once

#include <cstdint>

#include "densebody/core/tensor.hpp"

namespace densebody::core {

// Process-wide switch for the OpenMP kernel paths. Both paths produce
// bit-identical results: parallel kernels split work over independent output
// elements and keep the per-element summation order of the serial reference,
// so results do not depend on thread count or scheduling.
void set_parallel(bool on);
bool parallel_enabled();

// Serial reference kernels. Kept as the ground truth the OpenMP variants are
// tested and benchmarked against.
namespace ref {

// C = op(A) * op(B) (+ C if accumulate). op(X) = X or X^T per flag.
// A is m x k after op, B is k x n after op, C is m x n.
void gemm(const Scalar* A, const Scalar* B, Scalar* C, int64_t m, int64_t k,
          int64_t n, bool ta, bool tb, bool accumulate);
void softmax_rows(const Scalar* X, Scalar* Y, int64_t m, int64_t n);
void layernorm_rows(const Scalar* X, const Scalar* gamma, const Scalar* beta,
                    Scalar* Y, Scalar* mean, Scalar* rstd, int64_t m, int64_t n,
                    Scalar eps);
void gelu(const Scalar* X, Scalar* Y, int64_t n);

}  // namespace ref

// OpenMP kernels (dispatched): identical numerics, parallel over rows.
namespace par {

void gemm(const Scalar* A, const Scalar* B, Scalar* C, int64_t m, int64_t k,
          int64_t n, bool ta, bool tb, bool accumulate);
void softmax_rows(const Scalar* X, Scalar* Y, int64_t m, int64_t n);
void layernorm_rows(const Scalar* X, const Scalar* gamma, const Scalar* beta,
                    Scalar* Y, Scalar* mean, Scalar* rstd, int64_t m, int64_t n,
                    Scalar eps);
void gelu(const Scalar* X, Scalar* Y, int64_t n);

}  // namespace par

// Dispatching entry points used by the rest of the library. They pick the
// OpenMP path unless parallelism is disabled or we are already inside a
// parallel region (nested parallelism is never spawned).
void gemm(const Scalar* A, const Scalar* B, Scalar* C, int64_t m, int64_t k,
          int64_t n, bool ta, bool tb, bool accumulate);
void softmax_rows(const Scalar* X, Scalar* Y, int64_t m, int64_t n);
void layernorm_rows(const Scalar* X, const Scalar* gamma, const Scalar* beta,
                    Scalar* Y, Scalar* mean, Scalar* rstd, int64_t m, int64_t n,
                    Scalar eps);
void gelu(const Scalar* X, Scalar* Y, int64_t n);

// Convenience wrappers on Tensor.
Tensor matmul(const Tensor& A, const Tensor& B, bool ta = false, bool tb = false);

}  // namespace densebody::core
