#include "npssl/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "npssl/errors.hpp"
#include "npssl/rng.hpp"

namespace npssl::data {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

Dataset two_moons(std::size_t n, double noise, std::uint64_t seed) {
    if (n < 4 || n % 2 != 0) throw DimError("two_moons: n must be even and >= 4");
    const std::size_t m = n / 2;
    Dataset ds;
    ds.points = Matrix(n, 2);
    ds.labels.resize(n);
    ds.n_classes = 2;
    Rng rng(seed);
    for (std::size_t i = 0; i < m; ++i) {
        const double t = kPi * static_cast<double>(i) / static_cast<double>(m - 1);
        ds.points(i, 0) = std::cos(t);
        ds.points(i, 1) = std::sin(t);
        ds.labels[i] = 0;
        ds.points(m + i, 0) = 1.0 - std::cos(t);
        ds.points(m + i, 1) = 0.5 - std::sin(t);
        ds.labels[m + i] = 1;
    }
    if (noise > 0.0)
        for (std::size_t i = 0; i < n; ++i) {
            ds.points(i, 0) += noise * rng.normal();
            ds.points(i, 1) += noise * rng.normal();
        }
    return ds;
}

Dataset gaussian_blobs(std::size_t n, std::size_t k, double spread, std::uint64_t seed) {
    if (k < 1 || n < 2 * k || n % k != 0)
        throw DimError("gaussian_blobs: need n divisible by k and n >= 2k");
    if (!(spread > 0.0)) throw NumericError("gaussian_blobs: spread must be positive");
    Dataset ds;
    ds.points = Matrix(n, 2);
    ds.labels.resize(n);
    ds.n_classes = k;
    // Adjacent centers 6.4 spreads apart: chord 2 r sin(pi/k).
    const double radius = k > 1 ? 3.2 * spread / std::sin(kPi / static_cast<double>(k)) : 0.0;
    const std::size_t per = n / k;
    Rng rng(seed);
    for (std::size_t c = 0; c < k; ++c) {
        const double angle = 2.0 * kPi * static_cast<double>(c) / static_cast<double>(k);
        const double cx = radius * std::cos(angle);
        const double cy = radius * std::sin(angle);
        for (std::size_t i = 0; i < per; ++i) {
            const std::size_t row = c * per + i;
            ds.points(row, 0) = cx + spread * rng.normal();
            ds.points(row, 1) = cy + spread * rng.normal();
            ds.labels[row] = static_cast<int>(c);
        }
    }
    return ds;
}

Dataset split(Dataset ds, std::size_t labels_per_class, double test_fraction,
              std::uint64_t seed) {
    const std::size_t n = ds.size();
    if (labels_per_class < 1) throw DimError("split: labels_per_class must be >= 1");
    if (!(test_fraction >= 0.0 && test_fraction < 1.0))
        throw NumericError("split: test_fraction must lie in [0, 1)");
    const auto n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(n)));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i)
        std::swap(order[i - 1], order[rng.index(i)]);

    ds.test_idx.assign(order.begin(), order.begin() + n_test);
    ds.labeled_idx.clear();
    ds.unlabeled_idx.clear();
    std::vector<std::size_t> taken(ds.n_classes, 0);
    for (std::size_t i = n_test; i < n; ++i) {
        const std::size_t idx = order[i];
        auto& count = taken[static_cast<std::size_t>(ds.labels[idx])];
        if (count < labels_per_class) {
            ds.labeled_idx.push_back(idx);
            ++count;
        } else {
            ds.unlabeled_idx.push_back(idx);
        }
    }
    for (std::size_t c = 0; c < ds.n_classes; ++c)
        if (taken[c] < labels_per_class)
            throw DimError("split: not enough non-test samples in some class");
    std::sort(ds.labeled_idx.begin(), ds.labeled_idx.end());
    std::sort(ds.unlabeled_idx.begin(), ds.unlabeled_idx.end());
    std::sort(ds.test_idx.begin(), ds.test_idx.end());
    return ds;
}

Matrix augment(const Matrix& points, Strength strength, const AugmentParams& params,
               std::uint64_t seed) {
    Matrix out = points;
    const std::size_t d = points.cols();
    for (std::size_t i = 0; i < points.rows(); ++i) {
        Rng rng = Rng::substream(seed, i);
        if (strength == Strength::Weak) {
            if (params.weak_sigma > 0.0)
                for (std::size_t j = 0; j < d; ++j)
                    out(i, j) += params.weak_sigma * rng.normal();
        } else {
            if (params.strong_sigma > 0.0)
                for (std::size_t j = 0; j < d; ++j)
                    out(i, j) += params.strong_sigma * rng.normal();
            for (std::size_t j = 0; j < d; ++j)
                if (rng.uniform() < params.strong_dropout) out(i, j) = 0.0;
        }
    }
    return out;
}

void write_csv(const Dataset& ds, std::ostream& out) {
    std::vector<const char*> role(ds.size(), "unlabeled");
    for (std::size_t i : ds.labeled_idx) role[i] = "labeled";
    for (std::size_t i : ds.test_idx) role[i] = "test";
    out << "x1,x2,label,split\n";
    char buf[96];
    for (std::size_t i = 0; i < ds.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%d,%s\n", ds.points(i, 0),
                      ds.points(i, 1), ds.labels[i], role[i]);
        out << buf;
    }
}

}  // namespace npssl::data
