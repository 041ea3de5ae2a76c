#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "npssl/np_model.hpp"
#include "npssl/rng.hpp"

using namespace npssl;
using namespace npssl::np;

namespace {

NpModel toy_model(std::uint64_t seed = 1) { return NpModel::init(2, 6, 5, 3, 8, seed); }

ContextSet random_context(const NpModel& m, std::size_t n, std::uint64_t seed) {
    ContextSet ctx;
    ctx.features = Matrix(n, m.feat_dim);
    ctx.probs = Matrix(n, m.n_classes);
    Rng rng(seed);
    rng.fill_normal(ctx.features.flat());
    for (std::size_t i = 0; i < n; ++i) {
        ctx.probs(i, rng.index(m.n_classes)) = 1.0;
    }
    return ctx;
}

}  // namespace

TEST_CASE("encode: zero weights give zero features, rows map row-wise") {
    NpModel m = toy_model();
    m.enc = nn::Mlp::zeros(2, 8, 6);
    Matrix x(4, 2);
    Rng rng(2);
    rng.fill_normal(x.flat());
    const Matrix f = encode(m, x);
    for (double v : f.flat()) CHECK(v == 0.0);

    // Row permutation permutes features identically.
    m = toy_model(3);
    const Matrix f1 = encode(m, x);
    Matrix xp(4, 2);
    const std::size_t perm[4] = {2, 0, 3, 1};
    for (std::size_t i = 0; i < 4; ++i)
        std::copy(x.row(perm[i]).begin(), x.row(perm[i]).end(), xp.row(i).begin());
    const Matrix f2 = encode(m, xp);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 6; ++j) CHECK(f2(i, j) == f1(perm[i], j));
}

TEST_CASE("posterior: permutation of context records is bit-exact") {
    const NpModel m = toy_model(5);
    const std::size_t n = 33;
    ContextSet ctx = random_context(m, n, 7);

    const Posterior p1 = posterior_from_context(m, ctx.features, ctx.probs);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(8);
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
    Matrix pf(n, m.feat_dim), pp(n, m.n_classes);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(ctx.features.row(perm[i]).begin(), ctx.features.row(perm[i]).end(),
                  pf.row(i).begin());
        std::copy(ctx.probs.row(perm[i]).begin(), ctx.probs.row(perm[i]).end(),
                  pp.row(i).begin());
    }
    const Posterior p2 = posterior_from_context(m, pf, pp);
    CHECK(p1.mu == p2.mu);    // bitwise
    CHECK(p1.var == p2.var);  // bitwise
}

TEST_CASE("posterior: duplicated record equals the single record") {
    const NpModel m = toy_model(9);
    ContextSet one = random_context(m, 1, 11);
    const Posterior p1 = posterior_from_context(m, one.features, one.probs);
    for (std::size_t k : {2u, 3u, 5u}) {
        Matrix f(k, m.feat_dim), p(k, m.n_classes);
        for (std::size_t i = 0; i < k; ++i) {
            std::copy(one.features.row(0).begin(), one.features.row(0).end(), f.row(i).begin());
            std::copy(one.probs.row(0).begin(), one.probs.row(0).end(), p.row(i).begin());
        }
        const Posterior pk = posterior_from_context(m, f, p);
        for (std::size_t j = 0; j < m.latent_dim; ++j) {
            CHECK(pk.mu[j] == doctest::Approx(p1.mu[j]).epsilon(1e-12));
            CHECK(pk.var[j] == doctest::Approx(p1.var[j]).epsilon(1e-12));
        }
    }
}

TEST_CASE("posterior variance is strictly positive and empty context rejected") {
    const NpModel m = toy_model(13);
    ContextSet ctx = random_context(m, 9, 14);
    const Posterior p = posterior_from_context(m, ctx.features, ctx.probs);
    for (double v : p.var) CHECK(v > 0.0);
    CHECK_NOTHROW(p.as_gaussian());
    CHECK_THROWS_AS(posterior_from_context(m, Matrix(0, m.feat_dim), Matrix(0, m.n_classes)),
                    DimError);
}

TEST_CASE("predict: T = 1 mean equals the single row; determinism in seed") {
    const NpModel m = toy_model(15);
    const ContextSet ctx = random_context(m, 5, 16);
    Matrix targets(3, 2);
    Rng rng(17);
    rng.fill_normal(targets.flat());

    const auto preds = predict(m, targets, ctx, 1, 99, UncertaintyKind::Entropy);
    REQUIRE(preds.size() == 3);
    for (const auto& p : preds) {
        REQUIRE(p.probs.rows() == 1);
        for (std::size_t j = 0; j < 3; ++j) CHECK(p.mean_probs[j] == p.probs(0, j));
    }

    const auto a = predict(m, targets, ctx, 4, 123, UncertaintyKind::Entropy);
    const auto b = predict(m, targets, ctx, 4, 123, UncertaintyKind::Entropy);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(std::equal(a[i].probs.flat().begin(), a[i].probs.flat().end(),
                         b[i].probs.flat().begin()));
        CHECK(a[i].uncertainty == b[i].uncertainty);
    }
}

TEST_CASE("predict: rows are on the simplex and confidence is bounded") {
    const NpModel m = toy_model(19);
    const ContextSet ctx = random_context(m, 7, 20);
    Matrix targets(10, 2);
    Rng rng(21);
    rng.fill_normal(targets.flat());
    const auto preds = predict(m, targets, ctx, 6, 5, UncertaintyKind::Entropy);
    for (const auto& p : preds) {
        for (std::size_t t = 0; t < p.probs.rows(); ++t) {
            double s = 0.0;
            for (std::size_t j = 0; j < p.probs.cols(); ++j) s += p.probs(t, j);
            CHECK(std::abs(s - 1.0) <= 1e-9);
        }
        CHECK(p.confidence >= 1.0 / 3.0 - 1e-12);
        CHECK(p.confidence <= 1.0 + 1e-12);
        CHECK(p.uncertainty >= 0.0);
    }
}

TEST_CASE("predict: decoder that ignores z gives identical rows and zero variance") {
    NpModel m = toy_model(23);
    // Zero the latent block of the decoder's first layer: predictions no
    // longer depend on the latent draw.
    for (std::size_t r = m.feat_dim; r < m.feat_dim + m.latent_dim; ++r)
        for (std::size_t c = 0; c < m.hidden_dim; ++c) m.dec.w1(r, c) = 0.0;
    const ContextSet ctx = random_context(m, 5, 24);
    Matrix targets(4, 2);
    Rng rng(25);
    rng.fill_normal(targets.flat());
    const auto preds = predict(m, targets, ctx, 5, 77, UncertaintyKind::Variance);
    for (const auto& p : preds) {
        for (std::size_t t = 1; t < p.probs.rows(); ++t)
            for (std::size_t j = 0; j < p.probs.cols(); ++j)
                CHECK(p.probs(t, j) == p.probs(0, j));
        CHECK(p.uncertainty == 0.0);
    }
}

TEST_CASE("predict: context permutation is bit-exact under a fixed seed") {
    const NpModel m = toy_model(27);
    ContextSet ctx = random_context(m, 12, 28);
    Matrix targets(3, 2);
    Rng rng(29);
    rng.fill_normal(targets.flat());
    const auto a = predict(m, targets, ctx, 3, 31, UncertaintyKind::Entropy);

    ContextSet flipped;
    flipped.features = Matrix(12, m.feat_dim);
    flipped.probs = Matrix(12, m.n_classes);
    for (std::size_t i = 0; i < 12; ++i) {
        std::copy(ctx.features.row(11 - i).begin(), ctx.features.row(11 - i).end(),
                  flipped.features.row(i).begin());
        std::copy(ctx.probs.row(11 - i).begin(), ctx.probs.row(11 - i).end(),
                  flipped.probs.row(i).begin());
    }
    const auto b = predict(m, targets, flipped, 3, 31, UncertaintyKind::Entropy);
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(std::equal(a[i].probs.flat().begin(), a[i].probs.flat().end(),
                         b[i].probs.flat().begin()));
}

TEST_CASE("predict rejects empty context and zero samples") {
    const NpModel m = toy_model(33);
    const ContextSet empty;
    Matrix targets(1, 2);
    CHECK_THROWS_AS(predict(m, targets, empty, 3, 1, UncertaintyKind::Entropy), DimError);
    const ContextSet ctx = random_context(m, 2, 34);
    CHECK_THROWS_AS(predict(m, targets, ctx, 0, 1, UncertaintyKind::Entropy), DimError);
}

TEST_CASE("uncertainty_entropy values") {
    CHECK(uncertainty_entropy(Vector{1.0, 0.0, 0.0}) == 0.0);
    CHECK(uncertainty_entropy(Vector{1.0 / 3, 1.0 / 3, 1.0 / 3}) ==
          doctest::Approx(std::log(3.0)).epsilon(1e-12));
    for (std::size_t c = 2; c <= 10; ++c) {
        Vector u(c, 1.0 / static_cast<double>(c));
        CHECK(uncertainty_entropy(u) == doctest::Approx(std::log(static_cast<double>(c))).epsilon(1e-9));
    }
    CHECK_THROWS_AS(uncertainty_entropy(Vector{0.7, 0.7}), NumericError);
}

TEST_CASE("uncertainty_entropy is maximal exactly at uniform") {
    const std::size_t c = 4;
    const double uniform_h = std::log(static_cast<double>(c));
    Rng rng(35);
    for (int trial = 0; trial < 20; ++trial) {
        Vector p(c, 1.0 / static_cast<double>(c));
        // 1e-3 perturbation, renormalized
        const std::size_t i = rng.index(c), j = (i + 1 + rng.index(c - 1)) % c;
        p[i] += 1e-3;
        p[j] -= 1e-3;
        CHECK(uncertainty_entropy(p) < uniform_h);
    }
}

TEST_CASE("uncertainty_variance values and invariances") {
    Matrix same(3, 2);
    for (std::size_t t = 0; t < 3; ++t) {
        same(t, 0) = 0.7;
        same(t, 1) = 0.3;
    }
    CHECK(uncertainty_variance(same) == 0.0);

    // Two opposite one-hot rows: per-class population variance 0.25.
    Matrix flip(2, 2);
    flip(0, 0) = 1.0;
    flip(1, 1) = 1.0;
    CHECK(uncertainty_variance(flip) == doctest::Approx(0.25).epsilon(1e-15));

    Matrix swapped(2, 2);
    swapped(0, 1) = 1.0;
    swapped(1, 0) = 1.0;
    CHECK(uncertainty_variance(swapped) == uncertainty_variance(flip));

    CHECK_THROWS_AS(uncertainty_variance(Matrix(1, 2)), DimError);
}

TEST_CASE("memory bank: seeded init, capacity, FIFO eviction") {
    MemoryBank bank(4, 3, 2, 42);
    CHECK(bank.size() == 1);
    CHECK(bank.capacity() == 4);
    MemoryBank bank2(4, 3, 2, 42);
    CHECK(bank.at(0).feature == bank2.at(0).feature);  // same seed, same record
    MemoryBank bank3(4, 3, 2, 43);
    CHECK(bank.at(0).feature != bank3.at(0).feature);
    for (double p : bank.at(0).probs) CHECK(p == 0.5);

    // Push capacity + 1 records: the seeded record and the first push fall out.
    for (int i = 0; i < 5; ++i) {
        BankRecord r;
        r.feature = {double(i), 0.0, 0.0};
        r.probs = {1.0, 0.0};
        bank.push(std::move(r));
    }
    CHECK(bank.size() == 4);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(bank.at(i).feature[0] == doctest::Approx(double(i + 1)));  // insertion order kept

    CHECK_THROWS_AS(bank.push(BankRecord{{1.0}, {1.0, 0.0}}), DimError);
    CHECK_THROWS_AS(bank.at(10), DimError);
}

TEST_CASE("memory bank default-capacity contract") {
    MemoryBank bank(2560, 8, 2, 7);
    CHECK(bank.capacity() == 2560);
    CHECK(bank.size() == 1);
}
