#pragma once

#include <cstdint>
#include <functional>

#include "npssl/gaussian.hpp"
#include "npssl/mlp.hpp"

namespace npssl::np {

/// The NP predictor: a feature encoder, a latent head emitting the
/// parameters of a diagonal Gaussian over z, and a decoder that
/// classifies [feature || z]. Every net is a two-layer MLP with the
/// same hidden width.
struct NpModel {
    nn::Mlp enc;  // d_in -> M -> F
    nn::Mlp lat;  // (F + C) -> M -> 2L  (first L = mu, last L = log-variance)
    nn::Mlp dec;  // (F + L) -> M -> C

    std::size_t d_in = 0, feat_dim = 0, latent_dim = 0, n_classes = 0, hidden_dim = 0;

    static NpModel init(std::size_t d_in, std::size_t feat_dim, std::size_t latent_dim,
                        std::size_t n_classes, std::size_t hidden_dim, std::uint64_t seed);

    std::vector<nn::TensorRef> tensor_refs();
};

struct NpGrads {
    nn::MlpGrad enc, lat, dec;
    static NpGrads zeros_like(const NpModel& m);
    void zero();
    std::vector<nn::TensorRef> tensor_refs();
};

/// One context record: a feature vector paired with a class-probability
/// vector (one-hot for labeled data, model probabilities for pseudo-labels).
struct BankRecord {
    Vector feature;
    Vector probs;
};

/// Fixed-capacity FIFO of context records. Initialized with exactly one
/// seeded random record, so it is never empty.
class MemoryBank {
  public:
    MemoryBank(std::size_t capacity, std::size_t feat_dim, std::size_t n_classes,
               std::uint64_t seed);

    std::size_t capacity() const { return capacity_; }
    std::size_t size() const { return size_; }
    std::size_t feat_dim() const { return feat_dim_; }
    std::size_t n_classes() const { return n_classes_; }

    /// Appends; evicts the oldest record when full.
    void push(BankRecord record);

    /// Record i in insertion order, 0 = oldest surviving.
    const BankRecord& at(std::size_t i) const;

    /// Replace all contents (checkpoint restore), oldest first.
    void assign(std::vector<BankRecord> records);

  private:
    std::size_t capacity_;
    std::size_t feat_dim_;
    std::size_t n_classes_;
    std::vector<BankRecord> ring_;
    std::size_t head_ = 0;  // insertion cursor
    std::size_t size_ = 0;
};

/// Context as flat matrices: row r of `features` pairs with row r of `probs`.
struct ContextSet {
    Matrix features;  // n x F
    Matrix probs;     // n x C

    void append(const MemoryBank& bank);
    void append(const Matrix& feats, const Matrix& probs_rows);
    std::size_t size() const { return features.rows(); }
};

/// Diagonal latent posterior q(z | records).
struct Posterior {
    Vector mu;
    Vector var;
    gauss::Gaussian as_gaussian() const;
};

/// Cached intermediates of posterior_from_context for the backward pass.
struct PosteriorCache {
    Matrix r;            // 1 x (F + C) aggregated input
    nn::MlpCache lat_cache;
    Vector logvar_raw;   // pre-clamp head output
    std::size_t n_records = 0;
};

inline constexpr double kLogVarClamp = 10.0;

/// Mean-aggregates [feature || probs] over the records (exactly rounded
/// per dimension, hence permutation-invariant bit for bit), then maps the
/// aggregate through the latent head. Variance = exp of the log-variance
/// head clamped to [-10, 10], so it is strictly positive.
Posterior posterior_from_context(const NpModel& model, const Matrix& feats,
                                 const Matrix& probs, PosteriorCache* cache = nullptr);

/// Backward of posterior_from_context: dmu/dvar are gradients w.r.t. the
/// posterior mean and *variance*. Accumulates into lat_grad and, when
/// dfeats is given, into the per-record feature gradients (n x F).
void posterior_backward(const NpModel& model, const PosteriorCache& cache,
                        std::span<const double> dmu, std::span<const double> dvar,
                        nn::MlpGrad& lat_grad, Matrix* dfeats);

Matrix encode(const NpModel& model, const Matrix& x, nn::MlpCache* cache = nullptr);

enum class UncertaintyKind { Entropy, Variance };

/// T stochastic class-probability vectors for one target, their mean and
/// a scalar uncertainty.
struct NpPrediction {
    Matrix probs;       // T x C, rows on the simplex
    Vector mean_probs;  // C
    double confidence = 0.0;   // max of mean_probs
    double uncertainty = 0.0;
};

/// -sum p ln p with 0 ln 0 = 0; input must lie on the simplex (1e-6).
double uncertainty_entropy(std::span<const double> mean_probs);

/// Mean over classes of the per-class population variance across rows.
double uncertainty_variance(const Matrix& probs);

/// Draws T latent samples z_t from the context posterior (shared across
/// targets), decodes softmax(dec([feature || z_t])) for every target and
/// fills the per-target prediction. Deterministic in seed.
std::vector<NpPrediction> predict(const NpModel& model, const Matrix& targets,
                                  const ContextSet& context, std::size_t t_samples,
                                  std::uint64_t seed, UncertaintyKind kind);

}  // namespace npssl::np
