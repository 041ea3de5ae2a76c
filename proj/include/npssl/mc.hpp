#pragma once

#include "npssl/gaussian.hpp"

namespace npssl::gauss {

enum class McKind { Kl, Js, JsDual };

struct McEstimate {
    double value;
    double std_error;  // standard error of the mean
    std::size_t n;
};

/// Unbiased Monte-Carlo estimate of a divergence from log-density
/// differences, the independent oracle for the closed forms:
///   Kl:     E_{N1}[ log N1 - log N2 ]
///   Js:     (1-a) E_{N1}[ log N1 - log N_a ] + a E_{N2}[ log N2 - log N_a ]
///   JsDual: E_{N_a}[ (1-a)(log N_a - log N1) + a(log N_a - log N2) ]
/// Deterministic in seed. The inner loops run in structure-of-arrays
/// layout through the kernel layer.
McEstimate mc_divergence(const Gaussian& g1, const Gaussian& g2, SkewParameter a,
                         McKind kind, std::size_t n, std::uint64_t seed);

}  // namespace npssl::gauss
