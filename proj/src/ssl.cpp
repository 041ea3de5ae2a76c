#include "npssl/ssl.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <sstream>

#include "npssl/kernels.hpp"
#include "npssl/optim.hpp"
#include "npssl/rng.hpp"

namespace npssl::ssl {

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose, std::uint64_t iter) {
    return splitmix64(splitmix64(seed ^ (purpose * 0x9e3779b97f4a7c15ULL)) ^ iter);
}

// Substream purposes of the training loop. Each consumer draws from its
// own stream so skipping one (e.g. the unlabeled path in a supervised
// ablation) never shifts the others.
enum Purpose : std::uint64_t {
    kBatchLabeled = 1,
    kAugLabeled = 2,
    kBatchUnlabeled = 3,
    kAugUnlabeledWeak = 4,
    kAugUnlabeledStrong = 5,
    kTeacherEps = 6,
    kContextSplit = 7,
    kElboEps = 8,
    kEval = 9,
    kModelInit = 100,
    kBankA = 101,
    kBankB = 102,
};

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
    Matrix out(idx.size(), m.cols());
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::copy(m.row(idx[r]).begin(), m.row(idx[r]).end(), out.row(r).begin());
    return out;
}

Matrix one_hot(std::span<const int> labels, std::size_t n_classes) {
    Matrix out(labels.size(), n_classes);
    for (std::size_t i = 0; i < labels.size(); ++i)
        out(i, static_cast<std::size_t>(labels[i])) = 1.0;
    return out;
}

void check_cfg(bool ok, const char* key, const char* what) {
    if (!ok) throw ConfigError(std::string(key) + " " + what);
}

// Shared forward/backward state of the labeled (ELBO) part of the loss.
struct LabeledPass {
    const np::NpModel& model;
    const Matrix& x;
    const Matrix& y;
    std::span<const std::size_t> ctx_idx;
    std::span<const std::size_t> tgt_idx;
    const Matrix& eps;

    Matrix feats;
    nn::MlpCache enc_cache;
    std::vector<std::size_t> union_idx;  // ctx then tgt
    np::PosteriorCache pc_ctx, pc_all;
    np::Posterior q_ctx, q_all;
    Vector sigma_all;
    Matrix z;  // T x L
    nn::MlpCache dec_cache;
    Matrix dlogits;  // (|tgt| T) x C, already scaled by 1/T
    double recon = 0.0;
    double klv = 0.0;

    // accumulators, live only when want_grads
    Vector dmu_ctx, dvar_ctx, dmu_all, dvar_all;
    Matrix dfeats;  // B x F
    Matrix dz;      // T x L

    LabeledPass(const np::NpModel& m, const Matrix& x_, const Matrix& y_,
                std::span<const std::size_t> c, std::span<const std::size_t> t,
                const Matrix& e)
        : model(m), x(x_), y(y_), ctx_idx(c), tgt_idx(t), eps(e) {}

    void forward(bool want_grads) {
        const std::size_t B = x.rows();
        const std::size_t T = eps.rows();
        const std::size_t L = model.latent_dim;
        const std::size_t C = model.n_classes;
        if (ctx_idx.empty() || tgt_idx.empty())
            throw DimError("elbo_loss: context and target splits must be non-empty");
        if (y.rows() != B || y.cols() != C) throw DimError("elbo_loss: label shape mismatch");
        if (eps.cols() != L) throw DimError("elbo_loss: eps width must equal latent dim");
        for (std::size_t i : ctx_idx)
            if (i >= B) throw DimError("elbo_loss: context index out of range");
        for (std::size_t i : tgt_idx)
            if (i >= B) throw DimError("elbo_loss: target index out of range");

        feats = nn::forward(model.enc, x, want_grads ? &enc_cache : nullptr);

        const Matrix fc = gather_rows(feats, ctx_idx);
        const Matrix yc = gather_rows(y, ctx_idx);
        q_ctx = np::posterior_from_context(model, fc, yc, want_grads ? &pc_ctx : nullptr);

        union_idx.assign(ctx_idx.begin(), ctx_idx.end());
        union_idx.insert(union_idx.end(), tgt_idx.begin(), tgt_idx.end());
        const Matrix fu = gather_rows(feats, union_idx);
        const Matrix yu = gather_rows(y, union_idx);
        q_all = np::posterior_from_context(model, fu, yu, want_grads ? &pc_all : nullptr);
        if (!all_finite(q_ctx.mu) || !all_finite(q_all.mu))
            throw NumericError("elbo_loss: non-finite latent posterior (training diverged?)");

        sigma_all.resize(L);
        for (std::size_t j = 0; j < L; ++j) sigma_all[j] = std::sqrt(q_all.var[j]);
        z = Matrix(T, L);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < L; ++j)
                z(t, j) = q_all.mu[j] + sigma_all[j] * eps(t, j);

        // Decode every (target, sample) pair in one batch.
        const std::size_t nt = tgt_idx.size();
        Matrix din(nt * T, model.feat_dim + L);
        for (std::size_t i = 0; i < nt; ++i)
            for (std::size_t t = 0; t < T; ++t) {
                double* row = din.data() + (i * T + t) * din.cols();
                const double* f = feats.data() + tgt_idx[i] * model.feat_dim;
                std::copy(f, f + model.feat_dim, row);
                const double* zt = z.data() + t * L;
                std::copy(zt, zt + L, row + model.feat_dim);
            }
        const Matrix logits = nn::forward(model.dec, din, want_grads ? &dec_cache : nullptr);

        const double inv_t = 1.0 / static_cast<double>(T);
        if (want_grads) dlogits = Matrix(nt * T, C);
        Vector probs(C);
        recon = 0.0;
        for (std::size_t i = 0; i < nt; ++i) {
            const auto label = static_cast<std::size_t>(
                std::max_element(y.row(tgt_idx[i]).begin(), y.row(tgt_idx[i]).end()) -
                y.row(tgt_idx[i]).begin());
            for (std::size_t t = 0; t < T; ++t) {
                const std::size_t r = i * T + t;
                const double ce = nn::cross_entropy_logits(logits.row(r), label, probs);
                recon += ce * inv_t;
                if (want_grads) {
                    for (std::size_t j = 0; j < C; ++j)
                        dlogits(r, j) = probs[j] * inv_t;
                    dlogits(r, label) -= inv_t;
                }
            }
        }

        if (want_grads) {
            dmu_ctx.assign(L, 0.0);
            dvar_ctx.assign(L, 0.0);
            dmu_all.assign(L, 0.0);
            dvar_all.assign(L, 0.0);
            dfeats = Matrix(B, model.feat_dim);
            dz = Matrix(T, L);
            gauss::DiagPairGrad kg;
            kg.resize_zero(L);
            klv = gauss::kl_diag_grad(q_all.mu, q_all.var, q_ctx.mu, q_ctx.var, kg);
            for (std::size_t j = 0; j < L; ++j) {
                dmu_all[j] += kg.dmu1[j];
                dvar_all[j] += kg.dvar1[j];
                dmu_ctx[j] += kg.dmu2[j];
                dvar_ctx[j] += kg.dvar2[j];
            }
        } else {
            klv = gauss::kl_diag(q_all.mu, q_all.var, q_ctx.mu, q_ctx.var);
        }
    }

    // Finishes the chain after any extra contributions (JS term, unlabeled
    // decode) were added to dz / dmu / dvar.
    void backward(np::NpGrads& grads) {
        const std::size_t T = eps.rows();
        const std::size_t L = model.latent_dim;
        const std::size_t F = model.feat_dim;
        const std::size_t nt = tgt_idx.size();

        Matrix d_din;
        nn::backward(model.dec, dec_cache, dlogits, grads.dec, &d_din);
        for (std::size_t i = 0; i < nt; ++i)
            for (std::size_t t = 0; t < T; ++t) {
                const double* row = d_din.data() + (i * T + t) * d_din.cols();
                double* df = dfeats.data() + tgt_idx[i] * F;
                for (std::size_t j = 0; j < F; ++j) df[j] += row[j];
                double* dzt = dz.data() + t * L;
                for (std::size_t j = 0; j < L; ++j) dzt[j] += row[F + j];
            }

        // z = mu + sigma eps with sigma = sqrt(v):
        // d mu += dz, d v += dz * eps / (2 sigma)
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < L; ++j) {
                const double g = dz(t, j);
                dmu_all[j] += g;
                dvar_all[j] += g * eps(t, j) / (2.0 * sigma_all[j]);
            }

        Matrix dfeats_union(union_idx.size(), F);
        np::posterior_backward(model, pc_all, dmu_all, dvar_all, grads.lat, &dfeats_union);
        for (std::size_t r = 0; r < union_idx.size(); ++r) {
            double* dst = dfeats.data() + union_idx[r] * F;
            const double* src = dfeats_union.data() + r * F;
            for (std::size_t j = 0; j < F; ++j) dst[j] += src[j];
        }

        Matrix dfeats_ctx(ctx_idx.size(), F);
        np::posterior_backward(model, pc_ctx, dmu_ctx, dvar_ctx, grads.lat, &dfeats_ctx);
        for (std::size_t r = 0; r < ctx_idx.size(); ++r) {
            double* dst = dfeats.data() + ctx_idx[r] * F;
            const double* src = dfeats_ctx.data() + r * F;
            for (std::size_t j = 0; j < F; ++j) dst[j] += src[j];
        }

        nn::backward(model.enc, enc_cache, dfeats, grads.enc, nullptr);
    }
};

}  // namespace

void TrainConfig::validate() const {
    check_cfg(tau_c > 0.0 && tau_c <= 1.0, "train.tau_c", "must lie in (0, 1]");
    check_cfg(tau_u > 0.0, "train.tau_u", "must be positive");
    check_cfg(lambda_u >= 0.0, "train.lambda_u", "must be non-negative");
    check_cfg(beta >= 0.0, "train.beta", "must be non-negative");
    check_cfg(t_samples >= 1, "train.t_samples", "must be >= 1");
    check_cfg(batch_size >= 2, "train.batch_size", "must be >= 2 (context and target need a point each)");
    check_cfg(mu_ratio >= 1, "train.mu_ratio", "must be >= 1");
    check_cfg(lr0 > 0.0, "train.lr0", "must be positive");
    check_cfg(weight_decay >= 0.0, "train.weight_decay", "must be non-negative");
    check_cfg(momentum >= 0.0 && momentum < 1.0, "train.momentum", "must lie in [0, 1)");
    check_cfg(grad_clip >= 0.0, "train.grad_clip", "must be non-negative");
    check_cfg(ema_momentum >= 0.0 && ema_momentum < 1.0, "train.ema_momentum", "must lie in [0, 1)");
    check_cfg(t_max >= 1, "train.t_max", "must be >= 1");
    check_cfg(feat_dim >= 1, "train.feat_dim", "must be >= 1");
    check_cfg(latent_dim >= 1, "train.latent_dim", "must be >= 1");
    check_cfg(hidden_dim >= 1, "train.hidden_dim", "must be >= 1");
    check_cfg(bank_capacity >= 1, "train.bank_capacity", "must be >= 1");
    check_cfg(log_interval >= 1, "train.log_interval", "must be >= 1");
    check_cfg(augment.weak_sigma >= 0.0, "train.weak_sigma", "must be non-negative");
    check_cfg(augment.strong_sigma >= 0.0, "train.strong_sigma", "must be non-negative");
    check_cfg(augment.strong_dropout >= 0.0 && augment.strong_dropout <= 1.0,
              "train.strong_dropout", "must lie in [0, 1]");
}

PseudoLabelBatch select_pseudo_labels(const std::vector<np::NpPrediction>& preds,
                                      const TrainConfig& cfg) {
    PseudoLabelBatch out;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto& p = preds[i];
        if (p.confidence >= cfg.tau_c && p.uncertainty < cfg.tau_u) {
            out.indices.push_back(i);
            out.labels.push_back(static_cast<std::size_t>(
                std::max_element(p.mean_probs.begin(), p.mean_probs.end()) -
                p.mean_probs.begin()));
            out.confidence.push_back(p.confidence);
            out.uncertainty.push_back(p.uncertainty);
        }
    }
    return out;
}

gauss::SkewParameter skew_from_uncertainty(double u, const TrainConfig& cfg,
                                           std::size_t n_classes) {
    if (u < 0.0) throw NumericError("skew_from_uncertainty: uncertainty must be >= 0");
    const double ceiling = cfg.uncertainty == np::UncertaintyKind::Entropy
                               ? std::log(static_cast<double>(n_classes))
                               : 0.25;
    return gauss::SkewParameter(std::clamp(u / ceiling, 0.01, 0.99));
}

ElboResult elbo_loss(const np::NpModel& model, const Matrix& x, const Matrix& y_onehot,
                     std::span<const std::size_t> ctx_idx,
                     std::span<const std::size_t> tgt_idx, const Matrix& eps,
                     np::NpGrads* grads) {
    LabeledPass pass(model, x, y_onehot, ctx_idx, tgt_idx, eps);
    pass.forward(grads != nullptr);
    if (grads != nullptr) pass.backward(*grads);
    return {pass.recon + pass.klv, pass.recon, pass.klv};
}

LossDiagnostics total_loss(const np::NpModel& student, const Matrix& x_labeled,
                           const Matrix& y_onehot, std::span<const std::size_t> ctx_idx,
                           std::span<const std::size_t> tgt_idx, const Matrix& eps,
                           const UnlabeledInputs& unl, const TrainConfig& cfg,
                           np::NpGrads* grads) {
    const bool want_grads = grads != nullptr;
    LabeledPass pass(student, x_labeled, y_onehot, ctx_idx, tgt_idx, eps);
    pass.forward(want_grads);

    LossDiagnostics diag;
    diag.recon = pass.recon;
    diag.kl = pass.klv;
    diag.supervised = pass.recon + pass.klv;
    diag.alpha_u = unl.alpha_u;
    diag.n_selected = unl.sel_indices.size();
    diag.n_unlabeled = unl.total;

    const std::size_t L = student.latent_dim;
    const std::size_t F = student.feat_dim;
    const std::size_t C = student.n_classes;
    const std::size_t T = eps.rows();

    // beta JS^{G_alpha}(q_ctx, q_all) through both posteriors.
    if (cfg.beta > 0.0) {
        gauss::DiagPairGrad jg;
        jg.resize_zero(L);
        diag.js = gauss::js_geometric_diag_grad(pass.q_ctx.mu, pass.q_ctx.var,
                                                pass.q_all.mu, pass.q_all.var,
                                                unl.alpha_u, jg);
        if (want_grads)
            for (std::size_t j = 0; j < L; ++j) {
                pass.dmu_ctx[j] += cfg.beta * jg.dmu1[j];
                pass.dvar_ctx[j] += cfg.beta * jg.dvar1[j];
                pass.dmu_all[j] += cfg.beta * jg.dmu2[j];
                pass.dvar_all[j] += cfg.beta * jg.dvar2[j];
            }
    }

    // Unlabeled CE on strong views, masked mean over the full unlabeled
    // batch, decoded with the same z_t samples.
    nn::MlpCache enc_u_cache;
    nn::MlpCache dec_u_cache;
    Matrix dlogits_u;
    const std::size_t S = unl.sel_indices.size();
    const bool run_unlabeled = cfg.lambda_u > 0.0 && S > 0;
    if (run_unlabeled) {
        if (unl.total == 0) throw DimError("total_loss: unlabeled total must be > 0");
        const Matrix xs = gather_rows(unl.x_strong, unl.sel_indices);
        const Matrix feats_u =
            nn::forward(student.enc, xs, want_grads ? &enc_u_cache : nullptr);
        Matrix din(S * T, F + L);
        for (std::size_t i = 0; i < S; ++i)
            for (std::size_t t = 0; t < T; ++t) {
                double* row = din.data() + (i * T + t) * din.cols();
                const double* f = feats_u.data() + i * F;
                std::copy(f, f + F, row);
                const double* zt = pass.z.data() + t * L;
                std::copy(zt, zt + L, row + F);
            }
        const Matrix logits =
            nn::forward(student.dec, din, want_grads ? &dec_u_cache : nullptr);
        const double w = 1.0 / (static_cast<double>(unl.total) * static_cast<double>(T));
        if (want_grads) dlogits_u = Matrix(S * T, C);
        Vector probs(C);
        double acc = 0.0;
        for (std::size_t i = 0; i < S; ++i) {
            const std::size_t label = unl.sel_labels[i];
            for (std::size_t t = 0; t < T; ++t) {
                const std::size_t r = i * T + t;
                acc += w * nn::cross_entropy_logits(logits.row(r), label, probs);
                if (want_grads) {
                    const double scale = cfg.lambda_u * w;
                    for (std::size_t j = 0; j < C; ++j)
                        dlogits_u(r, j) = probs[j] * scale;
                    dlogits_u(r, label) -= scale;
                }
            }
        }
        diag.unsupervised = acc;
    }

    diag.total = diag.supervised + cfg.lambda_u * diag.unsupervised + cfg.beta * diag.js;

    if (want_grads) {
        if (run_unlabeled) {
            Matrix d_din;
            nn::backward(student.dec, dec_u_cache, dlogits_u, grads->dec, &d_din);
            Matrix dfeats_u(S, F);
            for (std::size_t i = 0; i < S; ++i)
                for (std::size_t t = 0; t < T; ++t) {
                    const double* row = d_din.data() + (i * T + t) * d_din.cols();
                    double* df = dfeats_u.data() + i * F;
                    for (std::size_t j = 0; j < F; ++j) df[j] += row[j];
                    double* dzt = pass.dz.data() + t * L;
                    for (std::size_t j = 0; j < L; ++j) dzt[j] += row[F + j];
                }
            nn::backward(student.enc, enc_u_cache, dfeats_u, grads->enc, nullptr);
        }
        pass.backward(*grads);
    }
    return diag;
}

EvalResult evaluate(const np::NpModel& model, const np::MemoryBank& bank_a,
                    const np::MemoryBank& bank_b, const data::Dataset& ds,
                    std::span<const std::size_t> idx, std::size_t t_samples,
                    std::uint64_t seed, np::UncertaintyKind kind) {
    if (idx.empty()) throw DimError("evaluate: empty evaluation set");
    np::ContextSet ctx;
    ctx.append(bank_a);
    ctx.append(bank_b);
    const Matrix targets = gather_rows(ds.points, idx);
    const auto preds = np::predict(model, targets, ctx, t_samples, seed, kind);
    EvalResult out;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto& p = preds[i];
        const auto pred = std::max_element(p.mean_probs.begin(), p.mean_probs.end()) -
                          p.mean_probs.begin();
        if (pred == ds.labels[idx[i]]) out.accuracy += 1.0;
        out.mean_confidence += p.confidence;
        out.mean_uncertainty += p.uncertainty;
    }
    const double inv = 1.0 / static_cast<double>(preds.size());
    out.accuracy *= inv;
    out.mean_confidence *= inv;
    out.mean_uncertainty *= inv;
    return out;
}

std::uint64_t eval_stream_seed(std::uint64_t train_seed) {
    return derive_seed(train_seed, kEval, 0);
}

TrainOutput train(const TrainConfig& cfg, const data::Dataset& ds, const TrainHooks* hooks) {
    cfg.validate();
    if (ds.labeled_idx.empty() || ds.test_idx.empty())
        throw DimError("train: dataset must be split (labeled and test masks required)");
    const std::size_t C = ds.n_classes;
    const std::size_t d_in = ds.points.cols();
    const std::uint64_t seed = cfg.seed;

    np::NpModel model = np::NpModel::init(d_in, cfg.feat_dim, cfg.latent_dim, C,
                                          cfg.hidden_dim, derive_seed(seed, kModelInit, 0));
    np::NpModel ema = model;
    np::MemoryBank bank_a(cfg.bank_capacity, cfg.feat_dim, C, derive_seed(seed, kBankA, 0));
    np::MemoryBank bank_b(cfg.bank_capacity, cfg.feat_dim, C, derive_seed(seed, kBankB, 0));

    auto params = model.tensor_refs();
    auto ema_params = ema.tensor_refs();
    nn::SgdState opt(params, cfg.momentum, cfg.weight_decay, cfg.lr0, cfg.t_max);
    np::NpGrads grads = np::NpGrads::zeros_like(model);
    auto grad_refs = grads.tensor_refs();

    const std::size_t B = cfg.batch_size;
    const std::size_t U = cfg.mu_ratio * B;
    const bool need_teacher = cfg.lambda_u > 0.0 || cfg.beta > 0.0;
    const std::uint64_t eval_seed = eval_stream_seed(seed);

    TrainOutput out{std::move(model), std::move(ema), std::move(bank_a), std::move(bank_b),
                    {}, {}, cfg.t_max};
    np::NpModel& student = out.model;
    np::NpModel& teacher = out.ema;

    for (std::size_t iter = 0; iter < cfg.t_max; ++iter) {
        // Labeled batch (with replacement; the pool is tiny by design).
        Rng rb(derive_seed(seed, kBatchLabeled, iter));
        std::vector<std::size_t> lidx(B);
        std::vector<int> llab(B);
        for (std::size_t i = 0; i < B; ++i) {
            lidx[i] = ds.labeled_idx[rb.index(ds.labeled_idx.size())];
            llab[i] = ds.labels[lidx[i]];
        }
        const Matrix xl_raw = gather_rows(ds.points, lidx);
        const Matrix xl = data::augment(xl_raw, data::Strength::Weak, cfg.augment,
                                        derive_seed(seed, kAugLabeled, iter));
        const Matrix yl = one_hot(llab, C);

        // Teacher view of the labeled batch: prediction context and bank records.
        const Matrix feats_lt = np::encode(teacher, xl);

        UnlabeledInputs unl;
        unl.alpha_u = 0.01;
        unl.total = U;
        Matrix feats_ut;
        std::vector<np::NpPrediction> teacher_preds;
        if (need_teacher && !ds.unlabeled_idx.empty()) {
            Rng ru(derive_seed(seed, kBatchUnlabeled, iter));
            std::vector<std::size_t> uidx(U);
            for (std::size_t i = 0; i < U; ++i)
                uidx[i] = ds.unlabeled_idx[ru.index(ds.unlabeled_idx.size())];
            const Matrix xu_raw = gather_rows(ds.points, uidx);
            const Matrix xu_weak = data::augment(xu_raw, data::Strength::Weak, cfg.augment,
                                                 derive_seed(seed, kAugUnlabeledWeak, iter));
            unl.x_strong = data::augment(xu_raw, data::Strength::Strong, cfg.augment,
                                         derive_seed(seed, kAugUnlabeledStrong, iter));

            np::ContextSet ctx;
            ctx.append(out.bank_a);
            ctx.append(out.bank_b);
            ctx.append(feats_lt, yl);
            teacher_preds = np::predict(teacher, xu_weak, ctx, cfg.t_samples,
                                        derive_seed(seed, kTeacherEps, iter),
                                        cfg.uncertainty);
            const PseudoLabelBatch plb = select_pseudo_labels(teacher_preds, cfg);
            unl.sel_indices = plb.indices;
            unl.sel_labels = plb.labels;
            double mean_u = 0.0;
            for (const auto& p : teacher_preds) mean_u += p.uncertainty;
            mean_u /= static_cast<double>(teacher_preds.size());
            unl.alpha_u = skew_from_uncertainty(mean_u, cfg, C).alpha;
            feats_ut = np::encode(teacher, xu_weak);
        }

        // Random context/target split of the labeled batch, >= 1 per side.
        Rng rs(derive_seed(seed, kContextSplit, iter));
        std::vector<std::size_t> perm(B);
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = B; i > 1; --i) std::swap(perm[i - 1], perm[rs.index(i)]);
        const std::size_t m_ctx = std::clamp<std::size_t>(B / 2, 1, B - 1);
        std::vector<std::size_t> ctx_idx(perm.begin(), perm.begin() + m_ctx);
        std::vector<std::size_t> tgt_idx(perm.begin() + m_ctx, perm.end());

        Matrix eps(cfg.t_samples, cfg.latent_dim);
        Rng re(derive_seed(seed, kElboEps, iter));
        re.fill_normal(eps.flat());

        grads.zero();
        LossDiagnostics diag;
        try {
            diag = total_loss(student, xl, yl, ctx_idx, tgt_idx, eps, unl, cfg, &grads);
        } catch (const NumericError& e) {
            throw NumericError("train: numeric failure at iteration " +
                               std::to_string(iter) + ": " + e.what());
        }
        if (!std::isfinite(diag.total)) {
            char buf[256];
            std::snprintf(buf, sizeof(buf),
                          "train: non-finite loss at iteration %zu "
                          "(total=%g recon=%g kl=%g unsup=%g js=%g alpha_u=%g)",
                          iter, diag.total, diag.recon, diag.kl, diag.unsupervised,
                          diag.js, diag.alpha_u);
            throw NumericError(buf);
        }

        // Global gradient-norm clip: the KL/JS terms carry 1/variance
        // factors that occasionally spike; unclipped momentum then runs
        // away within a couple of iterations.
        if (cfg.grad_clip > 0.0) {
            double sq = 0.0;
            for (const auto& g : grad_refs)
                sq += kern::ops().dot(g.data.size(), g.data.data(), g.data.data());
            const double norm = std::sqrt(sq);
            if (norm > cfg.grad_clip) {
                const double scale = cfg.grad_clip / norm;
                for (const auto& g : grad_refs)
                    kern::ops().scal(g.data.size(), scale, g.data.data());
            }
        }

        const double lr = opt.current_lr();
        opt.step(params, grad_refs);
        nn::ema_update(ema_params, params, cfg.ema_momentum);

        // Bank pushes: teacher features, FIFO eviction inside the banks.
        for (std::size_t i = 0; i < B; ++i) {
            np::BankRecord rec;
            rec.feature.assign(feats_lt.row(i).begin(), feats_lt.row(i).end());
            rec.probs.assign(yl.row(i).begin(), yl.row(i).end());
            if (hooks != nullptr && hooks->on_bank_push) hooks->on_bank_push(0, rec);
            out.bank_a.push(std::move(rec));
        }
        for (std::size_t s = 0; s < unl.sel_indices.size(); ++s) {
            np::BankRecord rec;
            const std::size_t row = unl.sel_indices[s];
            rec.feature.assign(feats_ut.row(row).begin(), feats_ut.row(row).end());
            rec.probs.assign(C, 0.0);
            rec.probs[unl.sel_labels[s]] = 1.0;
            if (hooks != nullptr && hooks->on_bank_push) hooks->on_bank_push(1, rec);
            out.bank_b.push(std::move(rec));
        }

        if (iter % cfg.log_interval == 0 || iter + 1 == cfg.t_max) {
            const EvalResult ev = evaluate(teacher, out.bank_a, out.bank_b, ds, ds.test_idx,
                                           cfg.t_samples, eval_seed, cfg.uncertainty);
            MetricsRow row;
            row.iteration = iter;
            row.lr = lr;
            row.loss_total = diag.total;
            row.loss_supervised = diag.supervised;
            row.loss_unsupervised = diag.unsupervised;
            row.loss_js = diag.js;
            row.selected_frac = unl.total > 0 ? static_cast<double>(unl.sel_indices.size()) /
                                                     static_cast<double>(unl.total)
                                               : 0.0;
            row.alpha_u = diag.alpha_u;
            row.test_accuracy = ev.accuracy;
            row.mean_confidence = ev.mean_confidence;
            row.mean_uncertainty = ev.mean_uncertainty;
            out.metrics.push_back(row);
            out.final_eval = ev;
        }
    }
    return out;
}

void write_metrics_csv(std::ostream& os, std::span<const MetricsRow> rows) {
    os << "iteration,lr,loss_total,loss_supervised,loss_unsupervised,loss_js,"
          "selected_frac,alpha_u,test_accuracy,mean_confidence,mean_uncertainty\n";
    char buf[512];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf),
                      "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                      r.iteration, r.lr, r.loss_total, r.loss_supervised,
                      r.loss_unsupervised, r.loss_js, r.selected_frac, r.alpha_u,
                      r.test_accuracy, r.mean_confidence, r.mean_uncertainty);
        os << buf;
    }
}

namespace {

double rel_err(double a, double fd) {
    const double d = std::abs(a - fd);
    if (d <= 1e-8) return 0.0;  // below the FD noise floor
    return d / std::max(std::abs(a), std::abs(fd));
}

double fd_suite(std::span<const nn::TensorRef> params,
                std::span<const nn::TensorRef> analytic,
                const std::function<double()>& loss_fn) {
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t t = 0; t < params.size(); ++t) {
        for (std::size_t i = 0; i < params[t].data.size(); ++i) {
            double& p = params[t].data[i];
            const double saved = p;
            p = saved + h;
            const double fp = loss_fn();
            p = saved - h;
            const double fm = loss_fn();
            p = saved;
            const double fd = (fp - fm) / (2.0 * h);
            worst = std::max(worst, rel_err(analytic[t].data[i], fd));
        }
    }
    return worst;
}

}  // namespace

GradCheckReport grad_check(std::uint64_t seed) {
    GradCheckReport report;
    auto add = [&](const std::string& name, double worst) {
        report.entries.push_back({name, worst});
        report.worst_rel = std::max(report.worst_rel, worst);
    };

    // Plain two-layer net against a fixed linear functional of the output.
    {
        nn::Mlp net = nn::Mlp::he_uniform(4, 6, 3, derive_seed(seed, 11, 0));
        Rng rng(derive_seed(seed, 12, 0));
        Matrix x(5, 4), w(5, 3);
        rng.fill_normal(x.flat());
        rng.fill_normal(w.flat());
        auto loss_fn = [&]() {
            const Matrix y = nn::forward(net, x);
            double acc = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) acc += y.flat()[i] * w.flat()[i];
            return acc;
        };
        nn::MlpCache cache;
        nn::forward(net, x, &cache);
        nn::MlpGrad grad = nn::MlpGrad::zeros_like(net);
        nn::backward(net, cache, w, grad);
        add("mlp", fd_suite(net.tensor_refs("net"), grad.tensor_refs("net"), loss_fn));
    }

    // Shared toy model and batches for the composite losses.
    np::NpModel model = np::NpModel::init(2, 6, 5, 3, 8, derive_seed(seed, 13, 0));
    Rng rng(derive_seed(seed, 14, 0));
    const std::size_t B = 6, T = 3;
    Matrix xl(B, 2);
    rng.fill_normal(xl.flat());
    std::vector<int> labels(B);
    for (auto& l : labels) l = static_cast<int>(rng.index(3));
    const Matrix yl = one_hot(labels, 3);
    const std::vector<std::size_t> ctx_idx = {0, 1, 2};
    const std::vector<std::size_t> tgt_idx = {3, 4, 5};
    Matrix eps(T, 5);
    rng.fill_normal(eps.flat());

    // Encoder through a fixed linear functional.
    {
        Matrix w(B, 6);
        rng.fill_normal(w.flat());
        auto loss_fn = [&]() {
            const Matrix f = np::encode(model, xl);
            double acc = 0.0;
            for (std::size_t i = 0; i < f.size(); ++i) acc += f.flat()[i] * w.flat()[i];
            return acc;
        };
        nn::MlpCache cache;
        nn::forward(model.enc, xl, &cache);
        nn::MlpGrad grad = nn::MlpGrad::zeros_like(model.enc);
        nn::backward(model.enc, cache, w, grad);
        add("encode", fd_suite(model.enc.tensor_refs("enc"), grad.tensor_refs("enc"), loss_fn));
    }

    auto model_params = model.tensor_refs();

    {
        np::NpGrads grads = np::NpGrads::zeros_like(model);
        elbo_loss(model, xl, yl, ctx_idx, tgt_idx, eps, &grads);
        auto loss_fn = [&]() {
            return elbo_loss(model, xl, yl, ctx_idx, tgt_idx, eps, nullptr).loss;
        };
        add("elbo_loss", fd_suite(model_params, grads.tensor_refs(), loss_fn));
    }

    {
        TrainConfig cfg;
        cfg.lambda_u = 1.0;
        cfg.beta = 0.05;  // exercise the JS path hard
        UnlabeledInputs unl;
        unl.x_strong = Matrix(5, 2);
        rng.fill_normal(unl.x_strong.flat());
        unl.sel_indices = {0, 2, 4};
        unl.sel_labels = {1, 0, 2};
        unl.alpha_u = 0.37;
        unl.total = 5;
        np::NpGrads grads = np::NpGrads::zeros_like(model);
        total_loss(model, xl, yl, ctx_idx, tgt_idx, eps, unl, cfg, &grads);
        auto loss_fn = [&]() {
            return total_loss(model, xl, yl, ctx_idx, tgt_idx, eps, unl, cfg, nullptr).total;
        };
        add("total_loss", fd_suite(model_params, grads.tensor_refs(), loss_fn));
    }

    return report;
}

}  // namespace npssl::ssl
