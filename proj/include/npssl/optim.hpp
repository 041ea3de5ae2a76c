#pragma once

#include <cstdint>

#include "npssl/mlp.hpp"

namespace npssl::nn {

/// Half-cosine decay to zero: lr0 * 0.5 * (1 + cos(pi t / t_max)).
/// Monotone non-increasing on [0, t_max]; t > t_max is an error.
double cosine_lr(std::size_t t, std::size_t t_max, double lr0);

/// SGD with momentum 0.9 and weight decay folded into the momentum
/// buffer (classic, non-decoupled):
///   v <- mom v + g + wd p ;  p <- p - lr v
class SgdState {
  public:
    SgdState(std::span<const TensorRef> params, double momentum, double weight_decay,
             double lr0, std::size_t t_max);

    /// One update at the cosine-scheduled rate for the current iteration.
    /// A non-finite gradient aborts before any parameter is touched.
    void step(std::span<const TensorRef> params, std::span<const TensorRef> grads);

    std::size_t iteration() const { return t_; }
    double current_lr() const;

  private:
    std::vector<Vector> velocity_;
    double momentum_;
    double weight_decay_;
    double lr0_;
    std::size_t t_max_;
    std::size_t t_ = 0;
};

/// s += (1 - m) * (t - s) elementwise over matching tensor lists.
/// Algebraically s <- m s + (1-m) t; the delta form makes s == t an
/// exact fixed point.
void ema_update(std::span<const TensorRef> shadow, std::span<const TensorRef> live,
                double momentum);

}  // namespace npssl::nn
