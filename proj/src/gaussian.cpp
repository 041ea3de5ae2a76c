#include "npssl/gaussian.hpp"

#include <cmath>
#include <cstdio>
#include <utility>

#include "npssl/kernels.hpp"
#include "npssl/rng.hpp"

namespace npssl::gauss {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // ln(2*pi)
constexpr double kSymTol = 1e-10;
constexpr double kNegTol = -1e-12;

[[noreturn]] void dim_fail(const char* what, std::size_t a, std::size_t b) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%s: dimension mismatch (%zu vs %zu)", what, a, b);
    throw DimError(buf);
}

// Forward substitution: solve L y = b for lower-triangular L (row-major).
void solve_lower(std::size_t d, const double* L, const double* b, double* y) {
    for (std::size_t i = 0; i < d; ++i) {
        double acc = b[i];
        for (std::size_t k = 0; k < i; ++k) acc -= L[i * d + k] * y[k];
        y[i] = acc / L[i * d + i];
    }
}

// Back substitution: solve L^T x = y.
void solve_lower_t(std::size_t d, const double* L, const double* y, double* x) {
    for (std::size_t i = d; i-- > 0;) {
        double acc = y[i];
        for (std::size_t k = i + 1; k < d; ++k) acc -= L[k * d + i] * x[k];
        x[i] = acc / L[i * d + i];
    }
}

// Solve A x = b given the Cholesky factor L of A.
void chol_solve(std::size_t d, const double* L, const double* b, double* x) {
    static thread_local Vector tmp;
    tmp.resize(d);
    solve_lower(d, L, b, tmp.data());
    solve_lower_t(d, L, tmp.data(), x);
}

double chol_log_det(std::size_t d, const double* L) {
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) acc += std::log(L[i * d + i]);
    return 2.0 * acc;
}

// A^{-1} from the Cholesky factor, by solving against identity columns.
Matrix chol_inverse(std::size_t d, const double* L) {
    Matrix inv(d, d);
    Vector e(d, 0.0), col(d);
    for (std::size_t j = 0; j < d; ++j) {
        e[j] = 1.0;
        chol_solve(d, L, e.data(), col.data());
        for (std::size_t i = 0; i < d; ++i) inv(i, j) = col[i];
        e[j] = 0.0;
    }
    return inv;
}

double quad_form_inv(const Gaussian& g, const Vector& x) {
    // x^T Sigma^{-1} x
    const std::size_t d = g.dim();
    if (g.kind() == CovKind::Diagonal) {
        double acc = 0.0;
        for (std::size_t i = 0; i < d; ++i) acc += x[i] * x[i] / g.var()[i];
        return acc;
    }
    Vector y(d);
    solve_lower(d, g.chol().data(), x.data(), y.data());
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) acc += y[i] * y[i];
    return acc;
}

// Shared per-dimension accumulation of the expanded JS^{G_a} formula,
// with optional gradients. Both js_geometric (diagonal route) and
// js_geometric_diag_grad call this, so their values agree bit for bit.
double js_diag_accumulate(std::span<const double> mu1, std::span<const double> var1,
                          std::span<const double> mu2, std::span<const double> var2,
                          double alpha, DiagPairGrad* grad) {
    const double a = 1.0 - alpha;
    const double b = alpha;
    const std::size_t d = mu1.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double v1 = var1[i], v2 = var2[i];
        const double p1 = 1.0 / v1, p2 = 1.0 / v2;
        const double pa = a * p1 + b * p2;
        const double va = 1.0 / pa;
        const double mua = (a * p1 * mu1[i] + b * p2 * mu2[i]) * va;
        const double d1 = mua - mu1[i];
        const double d2 = mua - mu2[i];
        const double S = a * v1 + b * v2;
        const double Q = a * d1 * d1 + b * d2 * d2;
        acc += std::log(va) - (a * std::log(v1) + b * std::log(v2)) - 1.0 + pa * S + pa * Q;
        if (grad != nullptr) {
            const double w1 = a * p1 * va;
            const double w2 = b * p2 * va;
            const double G = a * d1 + b * d2;
            grad->dmu1[i] += pa * (w1 * G - a * d1);
            grad->dmu2[i] += pa * (w2 * G - b * d2);
            const double dp1 = 0.5 * a * (-va + S + Q - 2.0 * d1 * G);
            const double dp2 = 0.5 * b * (-va + S + Q - 2.0 * d2 * G);
            grad->dvar1[i] += dp1 * (-p1 * p1) + 0.5 * a * (pa - p1);
            grad->dvar2[i] += dp2 * (-p2 * p2) + 0.5 * b * (pa - p2);
        }
    }
    return 0.5 * acc;
}

}  // namespace

SkewParameter::SkewParameter(double a) : alpha(a) {
    if (!(a >= 0.0 && a <= 1.0)) throw NumericError("skew parameter must lie in [0, 1]");
}

double clamp_divergence(double v, const char* what) {
    if (v >= 0.0) return v;
    if (v >= kNegTol) return 0.0;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%s: negative divergence %.17g below round-off tolerance", what, v);
    throw NumericError(buf);
}

bool cholesky(std::size_t d, const double* a, double* lower) {
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) lower[i * d + j] = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double acc = a[i * d + j];
            for (std::size_t k = 0; k < j; ++k) acc -= lower[i * d + k] * lower[j * d + k];
            if (i == j) {
                if (!(acc > 0.0) || !std::isfinite(acc)) return false;
                lower[i * d + i] = std::sqrt(acc);
            } else {
                lower[i * d + j] = acc / lower[j * d + j];
            }
        }
    }
    return true;
}

Gaussian Gaussian::diagonal(Vector mean, Vector var) {
    if (mean.empty()) throw DimError("Gaussian: dimension must be >= 1");
    if (mean.size() != var.size()) dim_fail("Gaussian::diagonal", mean.size(), var.size());
    if (!all_finite(mean)) throw NumericError("Gaussian: non-finite mean entry");
    for (double v : var)
        if (!(v > 0.0) || !std::isfinite(v))
            throw NotSpdError("Gaussian: diagonal variances must be strictly positive and finite");
    Gaussian g;
    g.kind_ = CovKind::Diagonal;
    g.mean_ = std::move(mean);
    g.var_ = std::move(var);
    return g;
}

Gaussian Gaussian::full(Vector mean, Matrix cov) {
    const std::size_t d = mean.size();
    if (d == 0) throw DimError("Gaussian: dimension must be >= 1");
    if (cov.rows() != d || cov.cols() != d) dim_fail("Gaussian::full", d, cov.rows());
    if (!all_finite(mean) || !all_finite(cov.flat()))
        throw NumericError("Gaussian: non-finite entry");
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i + 1; j < d; ++j)
            if (std::abs(cov(i, j) - cov(j, i)) > kSymTol)
                throw NotSpdError("Gaussian: covariance not symmetric within 1e-10");
    // Symmetrize exactly, then factor; a failure here is a hard error.
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i + 1; j < d; ++j) {
            const double s = 0.5 * (cov(i, j) + cov(j, i));
            cov(i, j) = s;
            cov(j, i) = s;
        }
    Matrix L(d, d);
    if (!cholesky(d, cov.data(), L.data()))
        throw NotSpdError("Gaussian: covariance is not positive definite (Cholesky failed)");
    Gaussian g;
    g.kind_ = CovKind::Full;
    g.mean_ = std::move(mean);
    g.cov_ = std::move(cov);
    g.chol_ = std::move(L);
    return g;
}

double Gaussian::log_det() const {
    if (kind_ == CovKind::Diagonal) {
        double acc = 0.0;
        for (double v : var_) acc += std::log(v);
        return acc;
    }
    return chol_log_det(dim(), chol_.data());
}

Matrix Gaussian::cov_dense() const {
    if (kind_ == CovKind::Full) return cov_;
    Matrix m(dim(), dim());
    for (std::size_t i = 0; i < dim(); ++i) m(i, i) = var_[i];
    return m;
}

double log_pdf(const Gaussian& g, std::span<const double> x) {
    const std::size_t d = g.dim();
    if (x.size() != d) dim_fail("log_pdf", x.size(), d);
    double quad = 0.0;
    if (g.kind() == CovKind::Diagonal) {
        for (std::size_t i = 0; i < d; ++i) {
            const double c = x[i] - g.mean()[i];
            quad += c * c / g.var()[i];
        }
    } else {
        Vector diff(d), y(d);
        for (std::size_t i = 0; i < d; ++i) diff[i] = x[i] - g.mean()[i];
        solve_lower(d, g.chol().data(), diff.data(), y.data());
        for (std::size_t i = 0; i < d; ++i) quad += y[i] * y[i];
    }
    return -0.5 * (static_cast<double>(d) * kLog2Pi + g.log_det() + quad);
}

Gaussian geometric_mean(const Gaussian& g1, const Gaussian& g2, SkewParameter a) {
    const std::size_t d = g1.dim();
    if (g2.dim() != d) dim_fail("geometric_mean", d, g2.dim());
    // Path endpoints are the operands themselves, exactly.
    if (a.alpha == 0.0) return g1;
    if (a.alpha == 1.0) return g2;
    const double w1 = 1.0 - a.alpha;
    const double w2 = a.alpha;

    if (g1.kind() == CovKind::Diagonal && g2.kind() == CovKind::Diagonal) {
        Vector var(d), mean(d);
        for (std::size_t i = 0; i < d; ++i) {
            const double p = w1 / g1.var()[i] + w2 / g2.var()[i];
            var[i] = 1.0 / p;
            mean[i] = (w1 * g1.mean()[i] / g1.var()[i] + w2 * g2.mean()[i] / g2.var()[i]) * var[i];
        }
        return Gaussian::diagonal(std::move(mean), std::move(var));
    }

    // Mixed representations promote to full.
    const Matrix c1 = g1.cov_dense();
    const Matrix c2 = g2.cov_dense();
    Matrix l1(d, d), l2(d, d);
    if (!cholesky(d, c1.data(), l1.data()) || !cholesky(d, c2.data(), l2.data()))
        throw NotSpdError("geometric_mean: operand covariance not SPD");
    const Matrix inv1 = chol_inverse(d, l1.data());
    const Matrix inv2 = chol_inverse(d, l2.data());

    Matrix prec(d, d);
    for (std::size_t i = 0; i < d * d; ++i)
        prec.data()[i] = w1 * inv1.data()[i] + w2 * inv2.data()[i];
    Matrix lp(d, d);
    if (!cholesky(d, prec.data(), lp.data()))
        throw NotSpdError("geometric_mean: precision sum is numerically singular");

    Vector h(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j)
            acc += w1 * inv1(i, j) * g1.mean()[j] + w2 * inv2(i, j) * g2.mean()[j];
        h[i] = acc;
    }
    Vector mu(d);
    chol_solve(d, lp.data(), h.data(), mu.data());
    Matrix cov = chol_inverse(d, lp.data());
    return Gaussian::full(std::move(mu), std::move(cov));
}

double kl(const Gaussian& g1, const Gaussian& g2) {
    const std::size_t d = g1.dim();
    if (g2.dim() != d) dim_fail("kl", d, g2.dim());

    if (g1.kind() == CovKind::Diagonal && g2.kind() == CovKind::Diagonal)
        return clamp_divergence(kl_diag(g1.mean(), g1.var(), g2.mean(), g2.var()), "kl");

    const Matrix c1 = g1.cov_dense();
    const Matrix c2 = g2.cov_dense();
    Matrix l2(d, d);
    if (!cholesky(d, c2.data(), l2.data())) throw NotSpdError("kl: covariance not SPD");
    Matrix l1(d, d);
    if (!cholesky(d, c1.data(), l1.data())) throw NotSpdError("kl: covariance not SPD");

    // tr(Sigma2^{-1} Sigma1) column by column.
    double trace = 0.0;
    Vector col(d), sol(d);
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < d; ++i) col[i] = c1(i, j);
        chol_solve(d, l2.data(), col.data(), sol.data());
        trace += sol[j];
    }
    Vector diff(d), y(d);
    for (std::size_t i = 0; i < d; ++i) diff[i] = g2.mean()[i] - g1.mean()[i];
    solve_lower(d, l2.data(), diff.data(), y.data());
    double quad = 0.0;
    for (std::size_t i = 0; i < d; ++i) quad += y[i] * y[i];

    const double val = 0.5 * (chol_log_det(d, l2.data()) - chol_log_det(d, l1.data()) -
                              static_cast<double>(d) + trace + quad);
    return clamp_divergence(val, "kl");
}

double js_geometric(const Gaussian& g1, const Gaussian& g2, SkewParameter a) {
    const std::size_t d = g1.dim();
    if (g2.dim() != d) dim_fail("js_geometric", d, g2.dim());
    if (a.alpha == 0.0 || a.alpha == 1.0) return 0.0;  // N_a coincides with an endpoint

    if (g1.kind() == CovKind::Diagonal && g2.kind() == CovKind::Diagonal) {
        const double v = js_diag_accumulate(g1.mean(), g1.var(), g2.mean(), g2.var(),
                                            a.alpha, nullptr);
        return clamp_divergence(v, "js_geometric");
    }

    const double w1 = 1.0 - a.alpha;
    const double w2 = a.alpha;
    const Gaussian na = geometric_mean(g1, g2, a);
    const Matrix ca = na.cov_dense();
    Matrix la(d, d);
    if (!cholesky(d, ca.data(), la.data()))
        throw NotSpdError("js_geometric: N_a covariance not SPD");

    // tr( Sigma_a^{-1} ((1-a) Sigma1 + a Sigma2) )
    const Matrix c1 = g1.cov_dense();
    const Matrix c2 = g2.cov_dense();
    double trace = 0.0;
    Vector col(d), sol(d);
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < d; ++i) col[i] = w1 * c1(i, j) + w2 * c2(i, j);
        chol_solve(d, la.data(), col.data(), sol.data());
        trace += sol[j];
    }

    auto quad_against_na = [&](const Vector& mu) {
        Vector diff(d), y(d);
        for (std::size_t i = 0; i < d; ++i) diff[i] = na.mean()[i] - mu[i];
        solve_lower(d, la.data(), diff.data(), y.data());
        double acc = 0.0;
        for (std::size_t i = 0; i < d; ++i) acc += y[i] * y[i];
        return acc;
    };

    const double log_ratio = chol_log_det(d, la.data()) -
                             (w1 * g1.log_det() + w2 * g2.log_det());
    const double val = 0.5 * (log_ratio - static_cast<double>(d) + trace +
                              w1 * quad_against_na(g1.mean()) + w2 * quad_against_na(g2.mean()));
    return clamp_divergence(val, "js_geometric");
}

double js_geometric_dual(const Gaussian& g1, const Gaussian& g2, SkewParameter a) {
    const std::size_t d = g1.dim();
    if (g2.dim() != d) dim_fail("js_geometric_dual", d, g2.dim());
    if (a.alpha == 0.0 || a.alpha == 1.0) return 0.0;

    const double w1 = 1.0 - a.alpha;
    const double w2 = a.alpha;
    const Gaussian na = geometric_mean(g1, g2, a);

    const double log_ratio = w1 * g1.log_det() + w2 * g2.log_det() - na.log_det();
    Vector mu1(g1.mean()), mu2(g2.mean()), mua(na.mean());
    const double val = 0.5 * (log_ratio + w1 * quad_form_inv(g1, mu1) +
                              w2 * quad_form_inv(g2, mu2) - quad_form_inv(na, mua));
    return clamp_divergence(val, "js_geometric_dual");
}

double js_geometric_composed(const Gaussian& g1, const Gaussian& g2, SkewParameter a) {
    const Gaussian na = geometric_mean(g1, g2, a);
    return (1.0 - a.alpha) * kl(g1, na) + a.alpha * kl(g2, na);
}

double js_geometric_dual_composed(const Gaussian& g1, const Gaussian& g2, SkewParameter a) {
    const Gaussian na = geometric_mean(g1, g2, a);
    return (1.0 - a.alpha) * kl(na, g1) + a.alpha * kl(na, g2);
}

Matrix sample(const Gaussian& g, std::size_t n, std::uint64_t seed) {
    if (n < 1) throw DimError("sample: n must be >= 1");
    const std::size_t d = g.dim();
    Matrix out(n, d);
    Rng rng(seed);
    if (g.kind() == CovKind::Diagonal) {
        Vector sd(d);
        for (std::size_t j = 0; j < d; ++j) sd[j] = std::sqrt(g.var()[j]);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j)
                out(i, j) = g.mean()[j] + sd[j] * rng.normal();
        return out;
    }
    const Matrix& L = g.chol();
    Vector z(d);
    for (std::size_t i = 0; i < n; ++i) {
        rng.fill_normal(z);
        for (std::size_t r = 0; r < d; ++r) {
            double acc = g.mean()[r];
            for (std::size_t k = 0; k <= r; ++k) acc += L(r, k) * z[k];
            out(i, r) = acc;
        }
    }
    return out;
}

void DiagPairGrad::resize_zero(std::size_t d) {
    dmu1.assign(d, 0.0);
    dvar1.assign(d, 0.0);
    dmu2.assign(d, 0.0);
    dvar2.assign(d, 0.0);
}

double kl_diag(std::span<const double> mu1, std::span<const double> var1,
               std::span<const double> mu2, std::span<const double> var2) {
    const std::size_t d = mu1.size();
    if (var1.size() != d || mu2.size() != d || var2.size() != d)
        dim_fail("kl_diag", d, mu2.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double dm = mu1[i] - mu2[i];
        acc += std::log(var2[i]) - std::log(var1[i]) - 1.0 + var1[i] / var2[i] +
               dm * dm / var2[i];
    }
    return 0.5 * acc;
}

double kl_diag_grad(std::span<const double> mu1, std::span<const double> var1,
                    std::span<const double> mu2, std::span<const double> var2,
                    DiagPairGrad& grad) {
    const std::size_t d = mu1.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double v1 = var1[i], v2 = var2[i];
        const double dm = mu1[i] - mu2[i];
        acc += std::log(v2) - std::log(v1) - 1.0 + v1 / v2 + dm * dm / v2;
        grad.dmu1[i] += dm / v2;
        grad.dmu2[i] -= dm / v2;
        grad.dvar1[i] += 0.5 * (1.0 / v2 - 1.0 / v1);
        grad.dvar2[i] += 0.5 * (1.0 / v2 - v1 / (v2 * v2) - dm * dm / (v2 * v2));
    }
    return 0.5 * acc;
}

double js_geometric_diag_grad(std::span<const double> mu1, std::span<const double> var1,
                              std::span<const double> mu2, std::span<const double> var2,
                              double alpha, DiagPairGrad& grad) {
    if (alpha == 0.0 || alpha == 1.0) return 0.0;
    const double v = js_diag_accumulate(mu1, var1, mu2, var2, alpha, &grad);
    return clamp_divergence(v, "js_geometric");
}

}  // namespace npssl::gauss
