#include "npssl/kernels.hpp"

// AVX2/FMA kernels, 4 doubles per vector, scalar remainder loops.
// This TU is the only one compiled with -mavx2 -mfma.

#if defined(__x86_64__) || defined(_M_X64)
#define NPSSL_X86 1
#else
#define NPSSL_X86 0
#endif

#if NPSSL_X86 && defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

namespace npssl::kern {
namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d swapped = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

void axpy_avx2(std::size_t n, double a, const double* x, double* y) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void scal_avx2(std::size_t n, double a, double* x) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) x[i] *= a;
}

void axpb_avx2(std::size_t n, double a, double b, double* x) {
    const __m256d va = _mm256_set1_pd(a);
    const __m256d vb = _mm256_set1_pd(b);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(x + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vb));
    for (; i < n; ++i) x[i] = a * x[i] + b;
}

void ema_blend_avx2(std::size_t n, double m, double* s, const double* t) {
    const double one_minus_m = 1.0 - m;
    const __m256d vc = _mm256_set1_pd(one_minus_m);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vs = _mm256_loadu_pd(s + i);
        const __m256d vd = _mm256_sub_pd(_mm256_loadu_pd(t + i), vs);
        vs = _mm256_fmadd_pd(vc, vd, vs);
        _mm256_storeu_pd(s + i, vs);
    }
    for (; i < n; ++i) s[i] += one_minus_m * (t[i] - s[i]);
}

void sgd_momentum_avx2(std::size_t n, double mom, double wd, double lr,
                       double* v, const double* g, double* p) {
    const __m256d vmom = _mm256_set1_pd(mom);
    const __m256d vwd = _mm256_set1_pd(wd);
    const __m256d vlr = _mm256_set1_pd(lr);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vp = _mm256_loadu_pd(p + i);
        __m256d vv = _mm256_loadu_pd(v + i);
        vv = _mm256_fmadd_pd(vmom, vv, _mm256_fmadd_pd(vwd, vp, _mm256_loadu_pd(g + i)));
        vp = _mm256_fnmadd_pd(vlr, vv, vp);
        _mm256_storeu_pd(v + i, vv);
        _mm256_storeu_pd(p + i, vp);
    }
    for (; i < n; ++i) {
        v[i] = mom * v[i] + g[i] + wd * p[i];
        p[i] -= lr * v[i];
    }
}

double dot_avx2(std::size_t n, const double* x, const double* y) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc);
    double r = hsum(acc);
    for (; i < n; ++i) r += x[i] * y[i];
    return r;
}

double sum_avx2(std::size_t n, const double* x) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double r = hsum(acc);
    for (; i < n; ++i) r += x[i];
    return r;
}

double sq_dev_sum_avx2(std::size_t n, const double* x, double mean) {
    const __m256d vm = _mm256_set1_pd(mean);
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), vm);
        acc = _mm256_fmadd_pd(d, d, acc);
    }
    double r = hsum(acc);
    for (; i < n; ++i) {
        const double d = x[i] - mean;
        r += d * d;
    }
    return r;
}

void relu_avx2(std::size_t n, const double* x, double* y) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_max_pd(zero, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_bwd_avx2(std::size_t n, const double* pre, const double* dy, double* dx) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(pre + i), zero, _CMP_GT_OQ);
        _mm256_storeu_pd(dx + i, _mm256_and_pd(mask, _mm256_loadu_pd(dy + i)));
    }
    for (; i < n; ++i) dx[i] = pre[i] > 0.0 ? dy[i] : 0.0;
}

void sq_diff_w_acc_avx2(std::size_t n, const double* x, double m, double w, double* acc) {
    const __m256d vm = _mm256_set1_pd(m);
    const __m256d vw = _mm256_set1_pd(w);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), vm);
        __m256d va = _mm256_loadu_pd(acc + i);
        va = _mm256_fmadd_pd(vw, _mm256_mul_pd(d, d), va);
        _mm256_storeu_pd(acc + i, va);
    }
    for (; i < n; ++i) {
        const double d = x[i] - m;
        acc[i] += w * d * d;
    }
}

void diff_axpy_avx2(std::size_t n, double a, const double* x, double m, double* acc) {
    const __m256d vm = _mm256_set1_pd(m);
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), vm);
        __m256d vacc = _mm256_loadu_pd(acc + i);
        vacc = _mm256_fmadd_pd(va, d, vacc);
        _mm256_storeu_pd(acc + i, vacc);
    }
    for (; i < n; ++i) acc[i] += a * (x[i] - m);
}

void gemm_nn_avx2(std::size_t M, std::size_t K, std::size_t N,
                  const double* A, const double* B, double* C) {
    for (std::size_t i = 0; i < M; ++i) {
        double* crow = C + i * N;
        for (std::size_t k = 0; k < K; ++k) {
            const double* brow = B + k * N;
            const __m256d va = _mm256_set1_pd(A[i * K + k]);
            std::size_t j = 0;
            for (; j + 4 <= N; j += 4) {
                __m256d vc = _mm256_loadu_pd(crow + j);
                vc = _mm256_fmadd_pd(va, _mm256_loadu_pd(brow + j), vc);
                _mm256_storeu_pd(crow + j, vc);
            }
            const double a = A[i * K + k];
            for (; j < N; ++j) crow[j] += a * brow[j];
        }
    }
}

void gemm_tn_avx2(std::size_t R, std::size_t M, std::size_t N,
                  const double* A, const double* B, double* C) {
    for (std::size_t r = 0; r < R; ++r) {
        const double* arow = A + r * M;
        const double* brow = B + r * N;
        for (std::size_t i = 0; i < M; ++i) {
            double* crow = C + i * N;
            const __m256d va = _mm256_set1_pd(arow[i]);
            std::size_t j = 0;
            for (; j + 4 <= N; j += 4) {
                __m256d vc = _mm256_loadu_pd(crow + j);
                vc = _mm256_fmadd_pd(va, _mm256_loadu_pd(brow + j), vc);
                _mm256_storeu_pd(crow + j, vc);
            }
            const double a = arow[i];
            for (; j < N; ++j) crow[j] += a * brow[j];
        }
    }
}

void gemm_nt_avx2(std::size_t M, std::size_t K, std::size_t N,
                  const double* A, const double* B, double* C) {
    for (std::size_t i = 0; i < M; ++i) {
        const double* arow = A + i * K;
        for (std::size_t j = 0; j < N; ++j) {
            const double* brow = B + j * K;
            __m256d acc = _mm256_setzero_pd();
            std::size_t k = 0;
            for (; k + 4 <= K; k += 4)
                acc = _mm256_fmadd_pd(_mm256_loadu_pd(arow + k), _mm256_loadu_pd(brow + k), acc);
            double r = hsum(acc);
            for (; k < K; ++k) r += arow[k] * brow[k];
            C[i * N + j] += r;
        }
    }
}

}  // namespace

const Ops* avx2_ops() {
    static const Ops table = {
        "avx2",
        axpy_avx2,
        scal_avx2,
        axpb_avx2,
        ema_blend_avx2,
        sgd_momentum_avx2,
        dot_avx2,
        sum_avx2,
        sq_dev_sum_avx2,
        relu_avx2,
        relu_bwd_avx2,
        sq_diff_w_acc_avx2,
        diff_axpy_avx2,
        gemm_nn_avx2,
        gemm_tn_avx2,
        gemm_nt_avx2,
    };
    return &table;
}

}  // namespace npssl::kern

#else  // no AVX2 on this target

namespace npssl::kern {
const Ops* avx2_ops() { return nullptr; }
}  // namespace npssl::kern

#endif
