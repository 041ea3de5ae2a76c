#include "npssl/mc.hpp"

#include <cmath>

#include "npssl/kernels.hpp"
#include "npssl/rng.hpp"

namespace npssl::gauss {
namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Column-major sample block: cols[d][i] is coordinate d of sample i.
using SoaBlock = std::vector<Vector>;

SoaBlock sample_soa(const Gaussian& g, std::size_t n, Rng& rng) {
    const std::size_t d = g.dim();
    const auto& k = kern::ops();
    SoaBlock cols(d, Vector(n));
    if (g.kind() == CovKind::Diagonal) {
        for (std::size_t j = 0; j < d; ++j) {
            rng.fill_normal(cols[j]);
            k.axpb(n, std::sqrt(g.var()[j]), g.mean()[j], cols[j].data());
        }
        return cols;
    }
    SoaBlock z(d, Vector(n));
    for (std::size_t j = 0; j < d; ++j) rng.fill_normal(z[j]);
    const Matrix& L = g.chol();
    for (std::size_t r = 0; r < d; ++r) {
        Vector& xr = cols[r];
        std::fill(xr.begin(), xr.end(), 0.0);
        for (std::size_t c = 0; c <= r; ++c) k.axpy(n, L(r, c), z[c].data(), xr.data());
        k.axpb(n, 1.0, g.mean()[r], xr.data());
    }
    return cols;
}

// out[i] = log pdf of sample i (overwrites out).
void log_pdf_soa(const Gaussian& g, const SoaBlock& x, Vector& out) {
    const std::size_t d = g.dim();
    const std::size_t n = x[0].size();
    const auto& k = kern::ops();
    const double c0 = -0.5 * (static_cast<double>(d) * kLog2Pi + g.log_det());
    out.assign(n, c0);
    if (g.kind() == CovKind::Diagonal) {
        for (std::size_t j = 0; j < d; ++j)
            k.sq_diff_w_acc(n, x[j].data(), g.mean()[j], -0.5 / g.var()[j], out.data());
        return;
    }
    // y = L^{-1} (x - mu), forward substitution across columns.
    const Matrix& L = g.chol();
    SoaBlock y(d, Vector(n));
    for (std::size_t r = 0; r < d; ++r) {
        Vector& yr = y[r];
        std::fill(yr.begin(), yr.end(), 0.0);
        k.diff_axpy(n, 1.0, x[r].data(), g.mean()[r], yr.data());
        for (std::size_t c = 0; c < r; ++c) k.axpy(n, -L(r, c), y[c].data(), yr.data());
        k.scal(n, 1.0 / L(r, r), yr.data());
        k.sq_diff_w_acc(n, yr.data(), 0.0, -0.5, out.data());
    }
}

struct MeanSe {
    double mean;
    double se;
};

MeanSe mean_se(const Vector& t) {
    const auto& k = kern::ops();
    const std::size_t n = t.size();
    const double mean = k.sum(n, t.data()) / static_cast<double>(n);
    const double var = k.sq_dev_sum(n, t.data(), mean) / static_cast<double>(n - 1);
    return {mean, std::sqrt(var / static_cast<double>(n))};
}

// E_{from}[ log p - log q ] with per-sample terms.
MeanSe expected_log_ratio(const Gaussian& from, const Gaussian& p, const Gaussian& q,
                          std::size_t n, Rng& rng) {
    const SoaBlock x = sample_soa(from, n, rng);
    Vector lp, lq;
    log_pdf_soa(p, x, lp);
    log_pdf_soa(q, x, lq);
    kern::ops().axpy(n, -1.0, lq.data(), lp.data());
    return mean_se(lp);
}

}  // namespace

McEstimate mc_divergence(const Gaussian& g1, const Gaussian& g2, SkewParameter a,
                         McKind kind, std::size_t n, std::uint64_t seed) {
    if (g1.dim() != g2.dim()) throw DimError("mc_divergence: dimension mismatch");
    if (n < 10000) throw NumericError("mc_divergence: n must be >= 10^4");

    if (kind == McKind::Kl) {
        Rng rng = Rng::substream(seed, 1);
        const MeanSe r = expected_log_ratio(g1, g1, g2, n, rng);
        return {r.mean, r.se, n};
    }

    const Gaussian na = geometric_mean(g1, g2, a);
    const double w1 = 1.0 - a.alpha;
    const double w2 = a.alpha;

    if (kind == McKind::Js) {
        Rng rng1 = Rng::substream(seed, 1);
        Rng rng2 = Rng::substream(seed, 2);
        const MeanSe r1 = expected_log_ratio(g1, g1, na, n, rng1);
        const MeanSe r2 = expected_log_ratio(g2, g2, na, n, rng2);
        const double se = std::sqrt(w1 * w1 * r1.se * r1.se + w2 * w2 * r2.se * r2.se);
        return {w1 * r1.mean + w2 * r2.mean, se, n};
    }

    // Dual: single stream under N_a, per-sample combined term.
    Rng rng = Rng::substream(seed, 1);
    const SoaBlock x = sample_soa(na, n, rng);
    Vector la, l1, l2;
    log_pdf_soa(na, x, la);
    log_pdf_soa(g1, x, l1);
    log_pdf_soa(g2, x, l2);
    // t = (1-a)(la - l1) + a(la - l2) = la - (1-a) l1 - a l2
    const auto& k = kern::ops();
    k.axpy(n, -w1, l1.data(), la.data());
    k.axpy(n, -w2, l2.data(), la.data());
    const MeanSe r = mean_se(la);
    return {r.mean, r.se, n};
}

}  // namespace npssl::gauss
