#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "npssl/gaussian.hpp"
#include "npssl/rng.hpp"
#include "test_util.hpp"

using namespace npssl;
using namespace npssl::gauss;
using npssl::testutil::random_diag;
using npssl::testutil::random_full;
using npssl::testutil::random_gaussian;

namespace {
Gaussian std_normal_1d() { return Gaussian::diagonal({0.0}, {1.0}); }
}  // namespace

TEST_CASE("construction validates invariants") {
    CHECK_THROWS_AS(Gaussian::diagonal({0.0}, {-1.0}), NotSpdError);
    CHECK_THROWS_AS(Gaussian::diagonal({0.0}, {0.0}), NotSpdError);
    CHECK_THROWS_AS(Gaussian::diagonal({std::nan("")}, {1.0}), NumericError);
    CHECK_THROWS_AS(Gaussian::diagonal({0.0, 1.0}, {1.0}), DimError);
    CHECK_THROWS_AS(Gaussian::diagonal({}, {}), DimError);

    Matrix asym(2, 2);
    asym(0, 0) = 1.0;
    asym(0, 1) = 0.5;
    asym(1, 0) = 0.5 + 1e-8;  // beyond the 1e-10 symmetry tolerance
    asym(1, 1) = 1.0;
    CHECK_THROWS_AS(Gaussian::full({0.0, 0.0}, asym), NotSpdError);

    Matrix indef(2, 2);
    indef(0, 0) = 1.0;
    indef(0, 1) = 2.0;
    indef(1, 0) = 2.0;
    indef(1, 1) = 1.0;  // eigenvalues 3 and -1
    CHECK_THROWS_AS(Gaussian::full({0.0, 0.0}, indef), NotSpdError);

    // The near-degenerate limit is accepted as long as it is positive.
    CHECK_NOTHROW(Gaussian::diagonal({0.0}, {1e-12}));
}

TEST_CASE("skew parameter range") {
    CHECK_NOTHROW(SkewParameter(0.0));
    CHECK_NOTHROW(SkewParameter(1.0));
    CHECK_THROWS_AS(SkewParameter(-0.01), NumericError);
    CHECK_THROWS_AS(SkewParameter(1.01), NumericError);
}

TEST_CASE("log_pdf standard normal mode") {
    const double v = log_pdf(std_normal_1d(), Vector{0.0});
    CHECK(v == doctest::Approx(-0.9189385332046727).epsilon(1e-12));
}

TEST_CASE("log_pdf at the mean drops the quadratic term") {
    Rng rng(11);
    for (std::size_t d : {1u, 2u, 4u}) {
        for (bool diag : {true, false}) {
            const Gaussian g = random_gaussian(rng, d, diag);
            const double expected =
                -0.5 * (static_cast<double>(d) * std::log(2.0 * 3.14159265358979323846) +
                        g.log_det());
            CHECK(log_pdf(g, g.mean()) == doctest::Approx(expected).epsilon(1e-12));
        }
    }
}

TEST_CASE("log_pdf dimension mismatch") {
    CHECK_THROWS_AS(log_pdf(std_normal_1d(), Vector{0.0, 1.0}), DimError);
}

TEST_CASE("log_pdf normalization via importance sampling") {
    // Independent oracle: integrate exp(log_pdf) against a wider proposal.
    Rng rng(42);
    const Gaussian g = random_full(rng, 3);
    Matrix wide = g.cov_dense();
    for (double& v : wide.flat()) v *= 2.25;
    const Gaussian proposal = Gaussian::full(g.mean(), wide);

    const std::size_t n = 1000000;
    const Matrix xs = sample(proposal, n, 20240917);
    double acc = 0.0, acc2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = std::exp(log_pdf(g, xs.row(i)) - log_pdf(proposal, xs.row(i)));
        acc += w;
        acc2 += w * w;
    }
    const double mean = acc / static_cast<double>(n);
    const double var =
        (acc2 - static_cast<double>(n) * mean * mean) / static_cast<double>(n - 1);
    const double se = std::sqrt(var / static_cast<double>(n));
    CHECK(std::abs(mean - 1.0) <= 3.0 * se);
    CHECK(mean == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("geometric_mean endpoints return the operands exactly") {
    Rng rng(7);
    const Gaussian g1 = random_diag(rng, 3);
    const Gaussian g2 = random_full(rng, 3);
    const Gaussian a0 = geometric_mean(g1, g2, SkewParameter(0.0));
    REQUIRE(a0.kind() == CovKind::Diagonal);
    CHECK(a0.mean() == g1.mean());
    CHECK(a0.var() == g1.var());
    const Gaussian a1 = geometric_mean(g1, g2, SkewParameter(1.0));
    REQUIRE(a1.kind() == CovKind::Full);
    CHECK(a1.mean() == g2.mean());
}

TEST_CASE("geometric_mean 1-d precision weighting") {
    // Scalar oracle: p = 0.5/1 + 0.5/4 = 0.625, v = 1.6,
    // mu = 1.6 * (0.5*0/1 + 0.5*2/4) = 0.4.
    const Gaussian g1 = Gaussian::diagonal({0.0}, {1.0});
    const Gaussian g2 = Gaussian::diagonal({2.0}, {4.0});
    const Gaussian ga = geometric_mean(g1, g2, SkewParameter(0.5));
    CHECK(ga.var()[0] == doctest::Approx(1.6).epsilon(1e-12));
    CHECK(ga.mean()[0] == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("geometric_mean idempotence and representation rules") {
    Rng rng(9);
    const Gaussian gd = random_diag(rng, 2);
    const Gaussian ga = geometric_mean(gd, gd, SkewParameter(0.37));
    REQUIRE(ga.kind() == CovKind::Diagonal);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(ga.mean()[i] == doctest::Approx(gd.mean()[i]).epsilon(1e-12));
        CHECK(ga.var()[i] == doctest::Approx(gd.var()[i]).epsilon(1e-12));
    }
    const Gaussian gf = random_full(rng, 2);
    CHECK(geometric_mean(gd, gf, SkewParameter(0.5)).kind() == CovKind::Full);
    CHECK_THROWS_AS(geometric_mean(gd, random_diag(rng, 3), SkewParameter(0.5)), DimError);
}

TEST_CASE("kl closed-form values") {
    Rng rng(13);
    for (bool diag : {true, false}) {
        const Gaussian g = random_gaussian(rng, 3, diag);
        CHECK(kl(g, g) >= 0.0);
        CHECK(kl(g, g) <= 1e-12);
    }
    // 1-d hand evaluations
    CHECK(kl(Gaussian::diagonal({0.0}, {1.0}), Gaussian::diagonal({1.0}, {1.0})) ==
          doctest::Approx(0.5).epsilon(1e-12));
    CHECK(kl(Gaussian::diagonal({0.0}, {1.0}), Gaussian::diagonal({0.0}, {4.0})) ==
          doctest::Approx(0.3181471805599453).epsilon(1e-12));
}

TEST_CASE("kl of mixed representations matches promoted form") {
    Rng rng(14);
    const Gaussian gd = random_diag(rng, 3);
    const Gaussian gf = random_full(rng, 3);
    const Gaussian gd_full = Gaussian::full(gd.mean(), gd.cov_dense());
    CHECK(kl(gd, gf) == doctest::Approx(kl(gd_full, gf)).epsilon(1e-12));
}

TEST_CASE("js endpoint and identity degeneracies") {
    Rng rng(15);
    for (bool diag : {true, false}) {
        const Gaussian g1 = random_gaussian(rng, 2, diag);
        const Gaussian g2 = random_gaussian(rng, 2, diag);
        CHECK(js_geometric(g1, g2, SkewParameter(0.0)) == 0.0);
        CHECK(js_geometric(g1, g2, SkewParameter(1.0)) == 0.0);
        CHECK(js_geometric_dual(g1, g2, SkewParameter(0.0)) == 0.0);
        CHECK(js_geometric_dual(g1, g2, SkewParameter(1.0)) == 0.0);
        for (double a : {0.2, 0.5, 0.8}) {
            CHECK(js_geometric(g1, g1, SkewParameter(a)) <= 1e-12);
            CHECK(js_geometric_dual(g1, g1, SkewParameter(a)) <= 1e-12);
        }
    }
}

TEST_CASE("js hand case: unit-variance pair two apart at alpha one half") {
    // N_a = N(1, 1); both KLs are 0.5, so both divergences equal 0.5.
    const Gaussian g1 = Gaussian::diagonal({0.0}, {1.0});
    const Gaussian g2 = Gaussian::diagonal({2.0}, {1.0});
    const SkewParameter half(0.5);
    CHECK(js_geometric(g1, g2, half) == doctest::Approx(0.5).epsilon(1e-10));
    CHECK(js_geometric_dual(g1, g2, half) == doctest::Approx(0.5).epsilon(1e-10));
    CHECK(js_geometric_composed(g1, g2, half) == doctest::Approx(0.5).epsilon(1e-10));
    CHECK(js_geometric_dual_composed(g1, g2, half) == doctest::Approx(0.5).epsilon(1e-10));
}

TEST_CASE("skew symmetry js(g1,g2,a) == js(g2,g1,1-a)") {
    Rng rng(16);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t d = 1 + rng.index(4);
        const bool diag = rng.uniform() < 0.5;
        const Gaussian g1 = random_gaussian(rng, d, diag);
        const Gaussian g2 = random_gaussian(rng, d, diag);
        const double a = rng.uniform(0.02, 0.98);
        CHECK(std::abs(js_geometric(g1, g2, SkewParameter(a)) -
                       js_geometric(g2, g1, SkewParameter(1.0 - a))) <= 1e-12);
        CHECK(std::abs(js_geometric_dual(g1, g2, SkewParameter(a)) -
                       js_geometric_dual(g2, g1, SkewParameter(1.0 - a))) <= 1e-12);
    }
}

TEST_CASE("expanded forms agree with the two-KL compositions") {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t d = 1 + rng.index(4);
        const bool diag = rng.uniform() < 0.5;
        const Gaussian g1 = random_gaussian(rng, d, diag);
        const Gaussian g2 = random_gaussian(rng, d, diag);
        const SkewParameter a(rng.uniform(0.05, 0.95));
        const double js = js_geometric(g1, g2, a);
        const double jsc = js_geometric_composed(g1, g2, a);
        CHECK(js == doctest::Approx(jsc).epsilon(1e-10));
        const double jd = js_geometric_dual(g1, g2, a);
        const double jdc = js_geometric_dual_composed(g1, g2, a);
        CHECK(jd == doctest::Approx(jdc).epsilon(1e-10));
        CHECK(js >= 0.0);
        CHECK(jd >= 0.0);
    }
}

TEST_CASE("unnormalized weighted product is proportional to the geometric mean") {
    // (1-a) log N1 + a log N2 - log N_a must be constant in x.
    Rng rng(18);
    const std::size_t dims[3] = {1, 2, 4};
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t d = dims[trial % 3];
        const bool diag = trial % 2 == 0;
        const Gaussian g1 = random_gaussian(rng, d, diag);
        const Gaussian g2 = random_gaussian(rng, d, diag);
        const SkewParameter a(rng.uniform(0.05, 0.95));
        const Gaussian ga = geometric_mean(g1, g2, a);
        double lo = 1e300, hi = -1e300;
        Vector x(d);
        for (int p = 0; p < 50; ++p) {
            for (double& v : x) v = rng.uniform(-6.0, 6.0);
            const double s = (1.0 - a.alpha) * log_pdf(g1, x) + a.alpha * log_pdf(g2, x) -
                             log_pdf(ga, x);
            lo = std::min(lo, s);
            hi = std::max(hi, s);
        }
        CHECK(hi - lo <= 1e-8);
    }
}

TEST_CASE("negative divergences beyond tolerance are errors") {
    CHECK(clamp_divergence(-5e-13, "t") == 0.0);
    CHECK(clamp_divergence(3.0, "t") == 3.0);
    CHECK_THROWS_AS(clamp_divergence(-1e-9, "t"), NumericError);
}

TEST_CASE("sample determinism and moments") {
    const Gaussian g = Gaussian::diagonal({0.0, 0.0}, {1.0, 1.0});
    const Matrix a = sample(g, 512, 99);
    const Matrix b = sample(g, 512, 99);
    CHECK(std::equal(a.flat().begin(), a.flat().end(), b.flat().begin()));

    const std::size_t n = 1000000;
    const Matrix big = sample(g, n, 1234);
    for (std::size_t j = 0; j < 2; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += big(i, j);
        mean /= static_cast<double>(n);
        CHECK(std::abs(mean) <= 5e-3);
    }
}

TEST_CASE("sample near-degenerate variance concentrates on the mean") {
    const Gaussian g = Gaussian::diagonal({2.0}, {1e-12});
    const Matrix xs = sample(g, 1000, 5);
    for (std::size_t i = 0; i < xs.rows(); ++i)
        CHECK(std::abs(xs(i, 0) - 2.0) <= 1e-5);
}

TEST_CASE("full-covariance sampling reproduces the covariance") {
    Rng rng(21);
    const Gaussian g = random_full(rng, 3);
    const std::size_t n = 200000;
    const Matrix xs = sample(g, n, 777);
    Matrix cov(3, 3);
    Vector mean(3, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < 3; ++j) mean[j] += xs(i, j);
    for (double& m : mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t c = 0; c < 3; ++c)
                cov(r, c) += (xs(i, r) - mean[r]) * (xs(i, c) - mean[c]);
    for (double& v : cov.flat()) v /= static_cast<double>(n - 1);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 3; ++c)
            CHECK(std::abs(cov(r, c) - g.cov()(r, c)) <= 0.05);
}

TEST_CASE("diagonal gradient routines match finite differences") {
    Rng rng(22);
    const std::size_t d = 4;
    Vector mu1(d), v1(d), mu2(d), v2(d);
    for (std::size_t i = 0; i < d; ++i) {
        mu1[i] = rng.uniform(-2.0, 2.0);
        mu2[i] = rng.uniform(-2.0, 2.0);
        v1[i] = rng.uniform(0.3, 3.0);
        v2[i] = rng.uniform(0.3, 3.0);
    }
    const double alpha = 0.37;
    const double h = 1e-6;

    auto fd = [&](Vector& vec, std::size_t i, auto&& fn) {
        const double saved = vec[i];
        vec[i] = saved + h;
        const double fp = fn();
        vec[i] = saved - h;
        const double fm = fn();
        vec[i] = saved;
        return (fp - fm) / (2.0 * h);
    };

    SUBCASE("js") {
        DiagPairGrad g;
        g.resize_zero(d);
        js_geometric_diag_grad(mu1, v1, mu2, v2, alpha, g);
        auto f = [&] {
            DiagPairGrad scratch;
            scratch.resize_zero(d);
            return js_geometric_diag_grad(mu1, v1, mu2, v2, alpha, scratch);
        };
        for (std::size_t i = 0; i < d; ++i) {
            CHECK(g.dmu1[i] == doctest::Approx(fd(mu1, i, f)).epsilon(1e-5));
            CHECK(g.dmu2[i] == doctest::Approx(fd(mu2, i, f)).epsilon(1e-5));
            CHECK(g.dvar1[i] == doctest::Approx(fd(v1, i, f)).epsilon(1e-5));
            CHECK(g.dvar2[i] == doctest::Approx(fd(v2, i, f)).epsilon(1e-5));
        }
    }
    SUBCASE("kl") {
        DiagPairGrad g;
        g.resize_zero(d);
        kl_diag_grad(mu1, v1, mu2, v2, g);
        auto f = [&] { return kl_diag(mu1, v1, mu2, v2); };
        for (std::size_t i = 0; i < d; ++i) {
            CHECK(g.dmu1[i] == doctest::Approx(fd(mu1, i, f)).epsilon(1e-5));
            CHECK(g.dmu2[i] == doctest::Approx(fd(mu2, i, f)).epsilon(1e-5));
            CHECK(g.dvar1[i] == doctest::Approx(fd(v1, i, f)).epsilon(1e-5));
            CHECK(g.dvar2[i] == doctest::Approx(fd(v2, i, f)).epsilon(1e-5));
        }
    }
}

TEST_CASE("diagonal js matches the Gaussian overload bit for bit") {
    Rng rng(23);
    const Gaussian g1 = random_diag(rng, 5);
    const Gaussian g2 = random_diag(rng, 5);
    const double a = 0.42;
    DiagPairGrad scratch;
    scratch.resize_zero(5);
    CHECK(js_geometric(g1, g2, SkewParameter(a)) ==
          js_geometric_diag_grad(g1.mean(), g1.var(), g2.mean(), g2.var(), a, scratch));
}
