#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>

#include "npssl/datagen.hpp"
#include "npssl/gaussian.hpp"
#include "npssl/np_model.hpp"

namespace npssl::ssl {

/// Every threshold, coefficient and schedule constant of the training
/// loop. Defaults are the desk-scale values; validate() names the
/// offending key on violation.
struct TrainConfig {
    double tau_c = 0.95;      // confidence threshold
    double tau_u = 0.4;       // uncertainty threshold (raw entropy scale)
    double lambda_u = 1.0;    // unlabeled loss weight
    double beta = 0.01;       // JS regularizer coefficient
    std::size_t t_samples = 10;
    std::size_t batch_size = 16;  // B
    std::size_t mu_ratio = 7;     // unlabeled batch = mu_ratio * B
    double lr0 = 0.03;
    double weight_decay = 5e-4;
    double momentum = 0.9;
    double ema_momentum = 0.999;
    double grad_clip = 10.0;  // global L2 norm ceiling; 0 disables
    std::size_t t_max = 5000;
    std::uint64_t seed = 1;
    np::UncertaintyKind uncertainty = np::UncertaintyKind::Entropy;
    std::size_t feat_dim = 32;
    std::size_t latent_dim = 32;
    std::size_t hidden_dim = 32;
    std::size_t bank_capacity = 256;  // Q
    std::size_t log_interval = 100;
    data::AugmentParams augment;

    void validate() const;
};

/// Indices (into the prediction list) that passed both gates, with their
/// hard labels and the gating statistics.
struct PseudoLabelBatch {
    std::vector<std::size_t> indices;
    std::vector<std::size_t> labels;  // argmax of mean_probs
    Vector confidence;
    Vector uncertainty;
};

/// Dual-threshold gate: keep exactly the samples with
/// confidence >= tau_c and uncertainty < tau_u. Deterministic; an empty
/// selection is valid.
PseudoLabelBatch select_pseudo_labels(const std::vector<np::NpPrediction>& preds,
                                      const TrainConfig& cfg);

/// Maps a batch-mean uncertainty to the skew of the JS term:
/// entropy kind normalizes by ln C, variance kind by the 0.25 ceiling;
/// clamped to [0.01, 0.99].
gauss::SkewParameter skew_from_uncertainty(double u, const TrainConfig& cfg,
                                           std::size_t n_classes);

/// Loss value decomposition. total = supervised + lambda_u * unsupervised
/// + beta * js, with supervised = recon + kl.
struct LossDiagnostics {
    double total = 0.0;
    double supervised = 0.0;
    double recon = 0.0;
    double kl = 0.0;
    double unsupervised = 0.0;  // raw, before lambda_u
    double js = 0.0;            // raw, before beta
    double alpha_u = 0.0;
    std::size_t n_selected = 0;
    std::size_t n_unlabeled = 0;
};

struct ElboResult {
    double loss = 0.0;
    double recon = 0.0;
    double kl = 0.0;
};

/// Negative Eq.-2 objective on one labeled batch:
///   loss = sum_targets E_q[-log p(y_i | z, x_i)] + KL(q_all || q_ctx)
/// with q_ctx the posterior from the context split and q_all the
/// posterior from the whole batch (context plus targets); the expectation
/// uses the T reparameterized samples z_t = mu + sigma * eps_t from the
/// caller-supplied eps (T x L). Gradients accumulate when grads != nullptr.
ElboResult elbo_loss(const np::NpModel& model, const Matrix& x, const Matrix& y_onehot,
                     std::span<const std::size_t> ctx_idx,
                     std::span<const std::size_t> tgt_idx, const Matrix& eps,
                     np::NpGrads* grads);

/// Inputs of total_loss that come from the (frozen) teacher pass.
struct UnlabeledInputs {
    Matrix x_strong;                  // U x d, strong views
    std::vector<std::size_t> sel_indices;  // selected rows of x_strong
    std::vector<std::size_t> sel_labels;   // their pseudo-labels
    double alpha_u = 0.01;
    std::size_t total = 0;            // U, the normalization of the CE term
};

/// L_total = elbo + lambda_u * CE(pseudo, student strong views)
///         + beta * JS^{G_alpha}(q_ctx, q_all).
/// The unlabeled CE averages the masked per-sample CE over the full
/// unlabeled batch; the strong-view decode reuses the same z_t samples.
LossDiagnostics total_loss(const np::NpModel& student, const Matrix& x_labeled,
                           const Matrix& y_onehot, std::span<const std::size_t> ctx_idx,
                           std::span<const std::size_t> tgt_idx, const Matrix& eps,
                           const UnlabeledInputs& unl, const TrainConfig& cfg,
                           np::NpGrads* grads);

struct EvalResult {
    double accuracy = 0.0;
    double mean_confidence = 0.0;
    double mean_uncertainty = 0.0;
};

/// Accuracy of argmax(mean_probs) over the index set, prediction context
/// taken from the two memory banks.
EvalResult evaluate(const np::NpModel& model, const np::MemoryBank& bank_a,
                    const np::MemoryBank& bank_b, const data::Dataset& ds,
                    std::span<const std::size_t> idx, std::size_t t_samples,
                    std::uint64_t seed, np::UncertaintyKind kind);

struct MetricsRow {
    std::size_t iteration = 0;
    double lr = 0.0;
    double loss_total = 0.0;
    double loss_supervised = 0.0;
    double loss_unsupervised = 0.0;
    double loss_js = 0.0;
    double selected_frac = 0.0;
    double alpha_u = 0.0;
    double test_accuracy = 0.0;
    double mean_confidence = 0.0;
    double mean_uncertainty = 0.0;
};

/// Test-only instrumentation points.
struct TrainHooks {
    // bank id 0 = labeled bank, 1 = pseudo-label bank
    std::function<void(int, const np::BankRecord&)> on_bank_push;
};

struct TrainOutput {
    np::NpModel model;      // student
    np::NpModel ema;        // teacher / evaluation weights
    np::MemoryBank bank_a;  // labeled records
    np::MemoryBank bank_b;  // pseudo-labeled records
    std::vector<MetricsRow> metrics;
    EvalResult final_eval;
    std::size_t iterations = 0;
};

/// The full loop: sample batches, teacher-predict and gate, student
/// total_loss, SGD step at the cosine rate, EMA update, bank pushes,
/// periodic evaluation. Fully reproducible from cfg.seed; a non-finite
/// loss aborts with a diagnostic dump in the exception message.
TrainOutput train(const TrainConfig& cfg, const data::Dataset& ds,
                  const TrainHooks* hooks = nullptr);

/// Seed of the (iteration-independent) evaluation stream used inside
/// train(); checkpoint evaluation reuses it so a reloaded model scores
/// bit-identically to the training-time evaluation.
std::uint64_t eval_stream_seed(std::uint64_t train_seed);

/// CSV with a header row and one row per logged iteration (%.17g floats,
/// byte-stable for a fixed seed and platform).
void write_metrics_csv(std::ostream& out, std::span<const MetricsRow> rows);

// ---- finite-difference verification ----

struct GradCheckEntry {
    std::string suite;
    double worst_rel = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double worst_rel = 0.0;
    bool pass(double tol = 1e-4) const { return worst_rel < tol; }
};

/// Central finite differences (h = 1e-5) against the analytic gradients
/// of the MLP, the encoder, elbo_loss and total_loss (including the JS
/// term through both posteriors), on toy batches. The error metric is
/// |a - fd| / max(|a|, |fd|), treating |a - fd| <= 1e-8 as zero (below
/// the FD noise floor).
GradCheckReport grad_check(std::uint64_t seed);

}  // namespace npssl::ssl
