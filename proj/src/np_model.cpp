#include "npssl/np_model.hpp"

#include <algorithm>
#include <cmath>

#include "npssl/errors.hpp"
#include "npssl/rng.hpp"

namespace npssl::np {

NpModel NpModel::init(std::size_t d_in, std::size_t feat_dim, std::size_t latent_dim,
                      std::size_t n_classes, std::size_t hidden_dim, std::uint64_t seed) {
    if (d_in < 1 || feat_dim < 1 || latent_dim < 1 || n_classes < 1 || hidden_dim < 1)
        throw DimError("NpModel: all dimensions must be >= 1");
    NpModel m;
    m.d_in = d_in;
    m.feat_dim = feat_dim;
    m.latent_dim = latent_dim;
    m.n_classes = n_classes;
    m.hidden_dim = hidden_dim;
    m.enc = nn::Mlp::he_uniform(d_in, hidden_dim, feat_dim, splitmix64(seed ^ 0x11));
    m.lat = nn::Mlp::he_uniform(feat_dim + n_classes, hidden_dim, 2 * latent_dim,
                                splitmix64(seed ^ 0x22));
    m.dec = nn::Mlp::he_uniform(feat_dim + latent_dim, hidden_dim, n_classes,
                                splitmix64(seed ^ 0x33));
    return m;
}

std::vector<nn::TensorRef> NpModel::tensor_refs() {
    std::vector<nn::TensorRef> out;
    for (auto& t : enc.tensor_refs("enc")) out.push_back(std::move(t));
    for (auto& t : lat.tensor_refs("lat")) out.push_back(std::move(t));
    for (auto& t : dec.tensor_refs("dec")) out.push_back(std::move(t));
    return out;
}

NpGrads NpGrads::zeros_like(const NpModel& m) {
    NpGrads g;
    g.enc = nn::MlpGrad::zeros_like(m.enc);
    g.lat = nn::MlpGrad::zeros_like(m.lat);
    g.dec = nn::MlpGrad::zeros_like(m.dec);
    return g;
}

void NpGrads::zero() {
    enc.zero();
    lat.zero();
    dec.zero();
}

std::vector<nn::TensorRef> NpGrads::tensor_refs() {
    std::vector<nn::TensorRef> out;
    for (auto& t : enc.tensor_refs("enc")) out.push_back(std::move(t));
    for (auto& t : lat.tensor_refs("lat")) out.push_back(std::move(t));
    for (auto& t : dec.tensor_refs("dec")) out.push_back(std::move(t));
    return out;
}

MemoryBank::MemoryBank(std::size_t capacity, std::size_t feat_dim, std::size_t n_classes,
                       std::uint64_t seed)
    : capacity_(capacity), feat_dim_(feat_dim), n_classes_(n_classes) {
    if (capacity < 1) throw DimError("MemoryBank: capacity must be >= 1");
    ring_.resize(capacity);
    // One seeded random record so the bank is never empty.
    BankRecord init;
    init.feature.resize(feat_dim);
    Rng rng(seed);
    rng.fill_normal(init.feature);
    init.probs.assign(n_classes, 1.0 / static_cast<double>(n_classes));
    ring_[0] = std::move(init);
    head_ = 1 % capacity_;
    size_ = 1;
}

void MemoryBank::push(BankRecord record) {
    if (record.feature.size() != feat_dim_ || record.probs.size() != n_classes_)
        throw DimError("MemoryBank::push: record dimension mismatch");
    ring_[head_] = std::move(record);
    head_ = (head_ + 1) % capacity_;
    if (size_ < capacity_) ++size_;
}

const BankRecord& MemoryBank::at(std::size_t i) const {
    if (i >= size_) throw DimError("MemoryBank::at: index out of range");
    const std::size_t oldest = (head_ + capacity_ - size_) % capacity_;
    return ring_[(oldest + i) % capacity_];
}

void MemoryBank::assign(std::vector<BankRecord> records) {
    if (records.size() > capacity_ || records.empty())
        throw DimError("MemoryBank::assign: bad record count");
    for (const auto& r : records)
        if (r.feature.size() != feat_dim_ || r.probs.size() != n_classes_)
            throw DimError("MemoryBank::assign: record dimension mismatch");
    std::fill(ring_.begin(), ring_.end(), BankRecord{});
    for (std::size_t i = 0; i < records.size(); ++i) ring_[i] = std::move(records[i]);
    size_ = records.size();
    head_ = size_ % capacity_;
}

void ContextSet::append(const MemoryBank& bank) {
    const std::size_t old = features.rows();
    Matrix f(old + bank.size(), bank.feat_dim());
    Matrix p(old + bank.size(), bank.n_classes());
    for (std::size_t i = 0; i < old; ++i) {
        std::copy(features.row(i).begin(), features.row(i).end(), f.row(i).begin());
        std::copy(probs.row(i).begin(), probs.row(i).end(), p.row(i).begin());
    }
    for (std::size_t i = 0; i < bank.size(); ++i) {
        const BankRecord& r = bank.at(i);
        std::copy(r.feature.begin(), r.feature.end(), f.row(old + i).begin());
        std::copy(r.probs.begin(), r.probs.end(), p.row(old + i).begin());
    }
    features = std::move(f);
    probs = std::move(p);
}

void ContextSet::append(const Matrix& feats, const Matrix& probs_rows) {
    if (feats.rows() != probs_rows.rows()) throw DimError("ContextSet: row count mismatch");
    const std::size_t old = features.rows();
    if (old == 0) {
        features = feats;
        probs = probs_rows;
        return;
    }
    Matrix f(old + feats.rows(), features.cols());
    Matrix p(old + feats.rows(), probs.cols());
    std::copy(features.flat().begin(), features.flat().end(), f.flat().begin());
    std::copy(probs.flat().begin(), probs.flat().end(), p.flat().begin());
    std::copy(feats.flat().begin(), feats.flat().end(), f.flat().begin() + old * f.cols());
    std::copy(probs_rows.flat().begin(), probs_rows.flat().end(),
              p.flat().begin() + old * p.cols());
    features = std::move(f);
    probs = std::move(p);
}

gauss::Gaussian Posterior::as_gaussian() const {
    return gauss::Gaussian::diagonal(mu, var);
}

Posterior posterior_from_context(const NpModel& model, const Matrix& feats,
                                 const Matrix& probs, PosteriorCache* cache) {
    const std::size_t n = feats.rows();
    if (n == 0) throw DimError("posterior_from_context: empty context");
    if (feats.cols() != model.feat_dim || probs.cols() != model.n_classes ||
        probs.rows() != n)
        throw DimError("posterior_from_context: context shape mismatch");

    // Exactly rounded column means: the aggregate depends only on the
    // record multiset, not on record order.
    const std::size_t rdim = model.feat_dim + model.n_classes;
    Matrix r(1, rdim);
    Vector col(n);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t j = 0; j < model.feat_dim; ++j) {
        for (std::size_t i = 0; i < n; ++i) col[i] = feats(i, j);
        r(0, j) = exact_sum(col) * inv_n;
    }
    for (std::size_t j = 0; j < model.n_classes; ++j) {
        for (std::size_t i = 0; i < n; ++i) col[i] = probs(i, j);
        r(0, model.feat_dim + j) = exact_sum(col) * inv_n;
    }

    nn::MlpCache local_cache;
    nn::MlpCache* lc = cache != nullptr ? &cache->lat_cache : &local_cache;
    const Matrix head = nn::forward(model.lat, r, lc);

    const std::size_t L = model.latent_dim;
    Posterior post;
    post.mu.resize(L);
    post.var.resize(L);
    Vector logvar_raw(L);
    for (std::size_t j = 0; j < L; ++j) {
        post.mu[j] = head(0, j);
        logvar_raw[j] = head(0, L + j);
        const double lv = std::clamp(logvar_raw[j], -kLogVarClamp, kLogVarClamp);
        post.var[j] = std::exp(lv);
    }
    if (cache != nullptr) {
        cache->r = std::move(r);
        cache->logvar_raw = std::move(logvar_raw);
        cache->n_records = n;
    }
    return post;
}

void posterior_backward(const NpModel& model, const PosteriorCache& cache,
                        std::span<const double> dmu, std::span<const double> dvar,
                        nn::MlpGrad& lat_grad, Matrix* dfeats) {
    const std::size_t L = model.latent_dim;
    Matrix dhead(1, 2 * L);
    for (std::size_t j = 0; j < L; ++j) {
        dhead(0, j) = dmu[j];
        const double lv_raw = cache.logvar_raw[j];
        if (lv_raw > -kLogVarClamp && lv_raw < kLogVarClamp) {
            // v = exp(lv): dL/dlv = dL/dv * v
            dhead(0, L + j) = dvar[j] * std::exp(lv_raw);
        } else {
            dhead(0, L + j) = 0.0;  // clamp gate
        }
    }
    Matrix dr;
    nn::backward(model.lat, cache.lat_cache, dhead, lat_grad, &dr);
    if (dfeats != nullptr) {
        // Mean aggregation spreads 1/n of the aggregate gradient to every
        // record; the probs half carries no gradient (labels are data).
        const double inv_n = 1.0 / static_cast<double>(cache.n_records);
        for (std::size_t i = 0; i < dfeats->rows(); ++i)
            for (std::size_t j = 0; j < model.feat_dim; ++j)
                (*dfeats)(i, j) += inv_n * dr(0, j);
    }
}

Matrix encode(const NpModel& model, const Matrix& x, nn::MlpCache* cache) {
    return nn::forward(model.enc, x, cache);
}

double uncertainty_entropy(std::span<const double> mean_probs) {
    double sum = 0.0;
    for (double p : mean_probs) {
        if (p < -1e-12) throw NumericError("uncertainty_entropy: negative probability");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw NumericError("uncertainty_entropy: input not on the simplex");
    double h = 0.0;
    for (double p : mean_probs)
        if (p > 0.0) h -= p * std::log(p);
    return h;
}

double uncertainty_variance(const Matrix& probs) {
    const std::size_t t = probs.rows();
    if (t < 2) throw DimError("uncertainty_variance: needs at least two prediction rows");
    const std::size_t c = probs.cols();
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
        // Shift by the first row: identical rows give exactly zero.
        double mean = 0.0;
        for (std::size_t i = 0; i < t; ++i) mean += probs(i, j) - probs(0, j);
        mean /= static_cast<double>(t);
        double var = 0.0;
        for (std::size_t i = 0; i < t; ++i) {
            const double d = (probs(i, j) - probs(0, j)) - mean;
            var += d * d;
        }
        acc += var / static_cast<double>(t);
    }
    return acc / static_cast<double>(c);
}

std::vector<NpPrediction> predict(const NpModel& model, const Matrix& targets,
                                  const ContextSet& context, std::size_t t_samples,
                                  std::uint64_t seed, UncertaintyKind kind) {
    if (t_samples < 1) throw DimError("predict: T must be >= 1");
    if (context.size() == 0) throw DimError("predict: context must be non-empty");
    const std::size_t n = targets.rows();
    const std::size_t C = model.n_classes;
    const std::size_t L = model.latent_dim;

    const Matrix feats = encode(model, targets);
    const Posterior post = posterior_from_context(model, context.features, context.probs);

    // z_t = mu + sigma * eps_t, shared across all targets.
    Matrix z(t_samples, L);
    Rng rng(seed);
    for (std::size_t t = 0; t < t_samples; ++t)
        for (std::size_t j = 0; j < L; ++j)
            z(t, j) = post.mu[j] + std::sqrt(post.var[j]) * rng.normal();

    // Batched decode: row (i, t) = [feat_i || z_t].
    Matrix din(n * t_samples, model.feat_dim + L);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < t_samples; ++t) {
            double* row = din.data() + (i * t_samples + t) * din.cols();
            const double* f = feats.data() + i * model.feat_dim;
            std::copy(f, f + model.feat_dim, row);
            const double* zt = z.data() + t * L;
            std::copy(zt, zt + L, row + model.feat_dim);
        }
    Matrix logits = nn::forward(model.dec, din);

    std::vector<NpPrediction> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        NpPrediction& p = out[i];
        p.probs = Matrix(t_samples, C);
        p.mean_probs.assign(C, 0.0);
        for (std::size_t t = 0; t < t_samples; ++t) {
            auto row = logits.row(i * t_samples + t);
            std::copy(row.begin(), row.end(), p.probs.row(t).begin());
            nn::softmax_inplace(p.probs.row(t));
            for (std::size_t j = 0; j < C; ++j) p.mean_probs[j] += p.probs(t, j);
        }
        for (std::size_t j = 0; j < C; ++j)
            p.mean_probs[j] /= static_cast<double>(t_samples);
        p.confidence = *std::max_element(p.mean_probs.begin(), p.mean_probs.end());
        p.uncertainty = kind == UncertaintyKind::Entropy
                            ? uncertainty_entropy(p.mean_probs)
                            : uncertainty_variance(p.probs);
    }
    return out;
}

}  // namespace npssl::np
