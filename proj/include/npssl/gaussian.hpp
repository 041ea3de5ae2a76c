#pragma once

#include <cstdint>
#include <span>

#include "npssl/matrix.hpp"

namespace npssl::gauss {

/// Skew weight of the geometric path between two Gaussians.
struct SkewParameter {
    double alpha;
    explicit SkewParameter(double a);
};

enum class CovKind { Diagonal, Full };

/// Multivariate Gaussian with either a diagonal or a full SPD covariance.
/// Construction validates the invariants once (finite mean, positive
/// variances, symmetry within 1e-10, Cholesky factorizability); a full
/// covariance keeps its lower Cholesky factor around for the density and
/// divergence paths. No regularization jitter is ever added: a failed
/// factorization is a hard error.
class Gaussian {
  public:
    static Gaussian diagonal(Vector mean, Vector var);
    static Gaussian full(Vector mean, Matrix cov);

    std::size_t dim() const { return mean_.size(); }
    CovKind kind() const { return kind_; }

    const Vector& mean() const { return mean_; }
    /// Diagonal variances; only valid for CovKind::Diagonal.
    const Vector& var() const { return var_; }
    /// Full covariance (symmetrized); only valid for CovKind::Full.
    const Matrix& cov() const { return cov_; }
    /// Lower Cholesky factor of the covariance; only valid for Full.
    const Matrix& chol() const { return chol_; }

    /// log det of the covariance.
    double log_det() const;

    /// Covariance materialized as a dense matrix (copies for Diagonal).
    Matrix cov_dense() const;

  private:
    Gaussian() = default;
    CovKind kind_ = CovKind::Diagonal;
    Vector mean_;
    Vector var_;    // Diagonal only
    Matrix cov_;    // Full only
    Matrix chol_;   // Full only
};

/// Log of the normalized density at x. Determinants go through the
/// Cholesky factor, never a naive determinant expansion.
double log_pdf(const Gaussian& g, std::span<const double> x);

/// Normalized weighted geometric mean N_a of two Gaussians:
/// precision Sigma_a^{-1} = (1-a) Sigma_1^{-1} + a Sigma_2^{-1},
/// mean mu_a = Sigma_a ((1-a) Sigma_1^{-1} mu_1 + a Sigma_2^{-1} mu_2).
/// The endpoints a = 0 and a = 1 return exact copies of g1 / g2. Two
/// diagonal inputs stay diagonal; mixed representations promote to full.
Gaussian geometric_mean(const Gaussian& g1, const Gaussian& g2, SkewParameter a);

/// KL(g1 || g2) in closed form. Values in (-1e-12, 0) clamp to 0;
/// anything below that tolerance is a formula bug and throws.
double kl(const Gaussian& g1, const Gaussian& g2);

/// Skew-geometric Jensen-Shannon divergence,
///   JS = (1-a) KL(N1 || N_a) + a KL(N2 || N_a),
/// computed from the single expanded closed form.
double js_geometric(const Gaussian& g1, const Gaussian& g2, SkewParameter a);

/// Dual form, JS* = (1-a) KL(N_a || N1) + a KL(N_a || N2), expanded:
/// 1/2 ( log( det S1^{1-a} det S2^a / det S_a )
///       + (1-a) mu1' S1^{-1} mu1 + a mu2' S2^{-1} mu2 - mu_a' S_a^{-1} mu_a ).
double js_geometric_dual(const Gaussian& g1, const Gaussian& g2, SkewParameter a);

/// Cross-check route for js_geometric: the explicit two-KL composition
/// through geometric_mean. Kept independent of the expanded formula.
double js_geometric_composed(const Gaussian& g1, const Gaussian& g2, SkewParameter a);
double js_geometric_dual_composed(const Gaussian& g1, const Gaussian& g2, SkewParameter a);

/// n x D sample matrix, deterministic in seed. Full covariances draw
/// through the Cholesky factor.
Matrix sample(const Gaussian& g, std::size_t n, std::uint64_t seed);

// ---- diagonal fast paths with analytic gradients ----
// These operate on raw (mean, variance) vectors so the training loop can
// differentiate through latent posteriors without building Gaussian
// objects on the hot path. Values match the Gaussian overloads bit for
// bit on diagonal inputs (same expression order).

/// KL( N(mu1, var1) || N(mu2, var2) ), all diagonal.
double kl_diag(std::span<const double> mu1, std::span<const double> var1,
               std::span<const double> mu2, std::span<const double> var2);

struct DiagPairGrad {
    Vector dmu1, dvar1, dmu2, dvar2;
    void resize_zero(std::size_t d);
};

/// kl_diag plus accumulation of d KL / d(mu, var) for both operands.
double kl_diag_grad(std::span<const double> mu1, std::span<const double> var1,
                    std::span<const double> mu2, std::span<const double> var2,
                    DiagPairGrad& grad);

/// Expanded JS^{G_a} on diagonal Gaussians plus gradients w.r.t. both
/// means and variances. The forward value matches js_geometric on the
/// same inputs.
double js_geometric_diag_grad(std::span<const double> mu1, std::span<const double> var1,
                              std::span<const double> mu2, std::span<const double> var2,
                              double alpha, DiagPairGrad& grad);

// ---- small SPD helpers shared with the oracles ----

/// Lower Cholesky factor of a row-major SPD matrix; false on failure.
bool cholesky(std::size_t d, const double* a, double* lower);

/// Clamp tiny negative divergences to zero; throw below -1e-12.
double clamp_divergence(double v, const char* what);

}  // namespace npssl::gauss
