#pragma once

// Shared generators for randomized tests.

#include "npssl/gaussian.hpp"
#include "npssl/rng.hpp"

namespace npssl::testutil {

inline gauss::Gaussian random_diag(Rng& rng, std::size_t d) {
    Vector mean(d), var(d);
    for (double& m : mean) m = rng.uniform(-3.0, 3.0);
    for (double& v : var) v = rng.uniform(0.2, 5.0);
    return gauss::Gaussian::diagonal(std::move(mean), std::move(var));
}

inline gauss::Gaussian random_full(Rng& rng, std::size_t d) {
    Vector mean(d);
    for (double& m : mean) m = rng.uniform(-3.0, 3.0);
    // A A^T / d + 0.4 I keeps the spectrum well away from singular.
    Matrix a(d, d);
    for (double& v : a.flat()) v = rng.normal();
    Matrix cov(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) acc += a(i, k) * a(j, k);
            cov(i, j) = acc / static_cast<double>(d);
        }
    for (std::size_t i = 0; i < d; ++i) cov(i, i) += 0.4;
    return gauss::Gaussian::full(std::move(mean), std::move(cov));
}

inline gauss::Gaussian random_gaussian(Rng& rng, std::size_t d, bool diag) {
    return diag ? random_diag(rng, d) : random_full(rng, d);
}

}  // namespace npssl::testutil
