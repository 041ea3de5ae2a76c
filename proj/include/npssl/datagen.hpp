#pragma once

#include <cstdint>
#include <iosfwd>

#include "npssl/matrix.hpp"

namespace npssl::data {

/// 2-D synthetic dataset with disjoint labeled / unlabeled / test masks.
/// Generators leave the masks empty; split() fills them.
struct Dataset {
    Matrix points;            // n x 2
    std::vector<int> labels;  // n, class ids in [0, n_classes)
    std::size_t n_classes = 0;
    std::vector<std::size_t> labeled_idx;
    std::vector<std::size_t> unlabeled_idx;
    std::vector<std::size_t> test_idx;

    std::size_t size() const { return labels.size(); }
};

/// Two interleaving half-circles with Gaussian coordinate noise.
/// n must be even; noise 0 puts the points exactly on the arcs.
Dataset two_moons(std::size_t n, double noise, std::uint64_t seed);

/// k isotropic blobs with their centers equally spaced on a circle sized
/// so adjacent centers sit 6.4 * spread apart. n must be divisible by k.
Dataset gaussian_blobs(std::size_t n, std::size_t k, double spread, std::uint64_t seed);

/// Random disjoint masks: round(test_fraction * n) test points, exactly
/// labels_per_class labeled points per class from the remainder, the rest
/// unlabeled. Reseeding changes membership, never the counts.
Dataset split(Dataset ds, std::size_t labels_per_class, double test_fraction,
              std::uint64_t seed);

enum class Strength { Weak, Strong };

struct AugmentParams {
    double weak_sigma = 0.02;
    double strong_sigma = 0.15;
    double strong_dropout = 0.1;  // per-coordinate zeroing probability
};

/// Stochastic view of the points; weak = small jitter, strong = larger
/// jitter plus coordinate dropout. Row i draws from substream (seed, i),
/// so results depend only on (seed, index), never on batch composition.
Matrix augment(const Matrix& points, Strength strength, const AugmentParams& params,
               std::uint64_t seed);

/// CSV export: header x1,x2,label,split.
void write_csv(const Dataset& ds, std::ostream& out);

}  // namespace npssl::data
