#pragma once

#include <cstddef>

namespace npssl::kern {

/// Table of data-parallel inner-loop kernels. Two implementations exist:
/// a scalar reference and an AVX2/FMA variant; the active table is picked
/// once at startup from cpuid (override with NPSSL_KERNEL=scalar|avx2).
///
/// GEMM conventions, all row-major:
///   gemm_nn: C[M x N] += A[M x K] * B[K x N]
///   gemm_tn: C[M x N] += A^T * B with A[R x M], B[R x N]
///   gemm_nt: C[M x N] += A * B^T with A[M x K], B[N x K]
/// Reductions and FMA-bearing kernels may differ from the scalar path in
/// the last ulps (different association / fused rounding); everything is
/// equivalence-tested against the reference at tight tolerances.
struct Ops {
    const char* name;

    // y += a * x
    void (*axpy)(std::size_t n, double a, const double* x, double* y);
    // x *= a
    void (*scal)(std::size_t n, double a, double* x);
    // x = a * x + b
    void (*axpb)(std::size_t n, double a, double b, double* x);
    // s += (1 - m) * (t - s); the delta form keeps s == t an exact fixed point
    void (*ema_blend)(std::size_t n, double m, double* s, const double* t);
    // v = mom * v + g + wd * p;  p -= lr * v
    void (*sgd_momentum)(std::size_t n, double mom, double wd, double lr,
                         double* v, const double* g, double* p);

    double (*dot)(std::size_t n, const double* x, const double* y);
    double (*sum)(std::size_t n, const double* x);
    // sum of (x[i] - mean)^2
    double (*sq_dev_sum)(std::size_t n, const double* x, double mean);

    void (*relu)(std::size_t n, const double* x, double* y);
    // dx = pre > 0 ? dy : 0   (subgradient at 0 is 0)
    void (*relu_bwd)(std::size_t n, const double* pre, const double* dy, double* dx);

    // acc[i] += w * (x[i] - m)^2
    void (*sq_diff_w_acc)(std::size_t n, const double* x, double m, double w, double* acc);
    // acc[i] += a * (x[i] - m)
    void (*diff_axpy)(std::size_t n, double a, const double* x, double m, double* acc);

    void (*gemm_nn)(std::size_t M, std::size_t K, std::size_t N,
                    const double* A, const double* B, double* C);
    void (*gemm_tn)(std::size_t R, std::size_t M, std::size_t N,
                    const double* A, const double* B, double* C);
    void (*gemm_nt)(std::size_t M, std::size_t K, std::size_t N,
                    const double* A, const double* B, double* C);
};

/// Active kernel table (runtime-dispatched, resolved once).
const Ops& ops();

/// Scalar reference table; always available.
const Ops& scalar_ops();

/// AVX2 table, or nullptr when the CPU lacks AVX2+FMA.
const Ops* avx2_ops();

}  // namespace npssl::kern
