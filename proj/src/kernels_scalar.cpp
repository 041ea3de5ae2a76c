#include "npssl/kernels.hpp"

// Scalar reference kernels. These define the semantics the SIMD variants
// are tested against; keep the loops dumb and obvious.

namespace npssl::kern {
namespace {

void axpy_scalar(std::size_t n, double a, const double* x, double* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scal_scalar(std::size_t n, double a, double* x) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

void axpb_scalar(std::size_t n, double a, double b, double* x) {
    for (std::size_t i = 0; i < n; ++i) x[i] = a * x[i] + b;
}

void ema_blend_scalar(std::size_t n, double m, double* s, const double* t) {
    const double one_minus_m = 1.0 - m;
    for (std::size_t i = 0; i < n; ++i) s[i] += one_minus_m * (t[i] - s[i]);
}

void sgd_momentum_scalar(std::size_t n, double mom, double wd, double lr,
                         double* v, const double* g, double* p) {
    for (std::size_t i = 0; i < n; ++i) {
        v[i] = mom * v[i] + g[i] + wd * p[i];
        p[i] -= lr * v[i];
    }
}

double dot_scalar(std::size_t n, const double* x, const double* y) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

double sum_scalar(std::size_t n, const double* x) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

double sq_dev_sum_scalar(std::size_t n, const double* x, double mean) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = x[i] - mean;
        acc += d * d;
    }
    return acc;
}

void relu_scalar(std::size_t n, const double* x, double* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_bwd_scalar(std::size_t n, const double* pre, const double* dy, double* dx) {
    for (std::size_t i = 0; i < n; ++i) dx[i] = pre[i] > 0.0 ? dy[i] : 0.0;
}

void sq_diff_w_acc_scalar(std::size_t n, const double* x, double m, double w, double* acc) {
    for (std::size_t i = 0; i < n; ++i) {
        const double d = x[i] - m;
        acc[i] += w * d * d;
    }
}

void diff_axpy_scalar(std::size_t n, double a, const double* x, double m, double* acc) {
    for (std::size_t i = 0; i < n; ++i) acc[i] += a * (x[i] - m);
}

void gemm_nn_scalar(std::size_t M, std::size_t K, std::size_t N,
                    const double* A, const double* B, double* C) {
    for (std::size_t i = 0; i < M; ++i) {
        for (std::size_t k = 0; k < K; ++k) {
            const double a = A[i * K + k];
            const double* brow = B + k * N;
            double* crow = C + i * N;
            for (std::size_t j = 0; j < N; ++j) crow[j] += a * brow[j];
        }
    }
}

void gemm_tn_scalar(std::size_t R, std::size_t M, std::size_t N,
                    const double* A, const double* B, double* C) {
    for (std::size_t r = 0; r < R; ++r) {
        const double* arow = A + r * M;
        const double* brow = B + r * N;
        for (std::size_t i = 0; i < M; ++i) {
            const double a = arow[i];
            double* crow = C + i * N;
            for (std::size_t j = 0; j < N; ++j) crow[j] += a * brow[j];
        }
    }
}

void gemm_nt_scalar(std::size_t M, std::size_t K, std::size_t N,
                    const double* A, const double* B, double* C) {
    for (std::size_t i = 0; i < M; ++i) {
        const double* arow = A + i * K;
        for (std::size_t j = 0; j < N; ++j) {
            const double* brow = B + j * K;
            double acc = 0.0;
            for (std::size_t k = 0; k < K; ++k) acc += arow[k] * brow[k];
            C[i * N + j] += acc;
        }
    }
}

}  // namespace

const Ops& scalar_ops() {
    static const Ops table = {
        "scalar",
        axpy_scalar,
        scal_scalar,
        axpb_scalar,
        ema_blend_scalar,
        sgd_momentum_scalar,
        dot_scalar,
        sum_scalar,
        sq_dev_sum_scalar,
        relu_scalar,
        relu_bwd_scalar,
        sq_diff_w_acc_scalar,
        diff_axpy_scalar,
        gemm_nn_scalar,
        gemm_tn_scalar,
        gemm_nt_scalar,
    };
    return table;
}

}  // namespace npssl::kern
