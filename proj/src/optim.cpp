#include "npssl/optim.hpp"

#include <cmath>

#include "npssl/errors.hpp"
#include "npssl/kernels.hpp"

namespace npssl::nn {

double cosine_lr(std::size_t t, std::size_t t_max, double lr0) {
    if (t > t_max) throw NumericError("cosine_lr: t exceeds t_max");
    const double frac = static_cast<double>(t) / static_cast<double>(t_max);
    return lr0 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
}

SgdState::SgdState(std::span<const TensorRef> params, double momentum, double weight_decay,
                   double lr0, std::size_t t_max)
    : momentum_(momentum), weight_decay_(weight_decay), lr0_(lr0), t_max_(t_max) {
    velocity_.reserve(params.size());
    for (const auto& p : params) velocity_.emplace_back(p.data.size(), 0.0);
}

double SgdState::current_lr() const { return cosine_lr(t_, t_max_, lr0_); }

void SgdState::step(std::span<const TensorRef> params, std::span<const TensorRef> grads) {
    if (params.size() != velocity_.size() || grads.size() != params.size())
        throw DimError("sgd step: tensor list mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].data.size() != params[i].data.size())
            throw DimError("sgd step: gradient shape mismatch for " + params[i].name);
        if (!all_finite(grads[i].data))
            throw NumericError("sgd step: non-finite gradient in " + grads[i].name);
    }
    const double lr = current_lr();
    const auto& k = kern::ops();
    for (std::size_t i = 0; i < params.size(); ++i) {
        k.sgd_momentum(params[i].data.size(), momentum_, weight_decay_, lr,
                       velocity_[i].data(), grads[i].data.data(), params[i].data.data());
        if (!all_finite(params[i].data))
            throw NumericError("sgd step: parameters became non-finite in " + params[i].name);
    }
    ++t_;
}

void ema_update(std::span<const TensorRef> shadow, std::span<const TensorRef> live,
                double momentum) {
    if (shadow.size() != live.size()) throw DimError("ema update: tensor list mismatch");
    const auto& k = kern::ops();
    for (std::size_t i = 0; i < shadow.size(); ++i) {
        if (shadow[i].data.size() != live[i].data.size())
            throw DimError("ema update: shape mismatch for " + shadow[i].name);
        k.ema_blend(shadow[i].data.size(), momentum, shadow[i].data.data(),
                    live[i].data.data());
    }
}

}  // namespace npssl::nn
