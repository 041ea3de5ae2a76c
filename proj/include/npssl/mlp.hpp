#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "npssl/matrix.hpp"

namespace npssl::nn {

/// Named view over one parameter tensor, for the optimizer, EMA,
/// checkpointing and the finite-difference harness.
struct TensorRef {
    std::string name;
    std::span<double> data;
    std::vector<std::size_t> shape;
};

/// Two-layer perceptron: affine - ReLU - affine. All the networks in
/// this project are this shape.
struct Mlp {
    Matrix w1;  // in x hidden
    Vector b1;  // hidden
    Matrix w2;  // hidden x out
    Vector b2;  // out

    std::size_t in_dim() const { return w1.rows(); }
    std::size_t hidden_dim() const { return w1.cols(); }
    std::size_t out_dim() const { return w2.cols(); }

    /// He-uniform weights (limit sqrt(6 / fan_in)), zero biases, seeded.
    static Mlp he_uniform(std::size_t in, std::size_t hidden, std::size_t out,
                          std::uint64_t seed);
    static Mlp zeros(std::size_t in, std::size_t hidden, std::size_t out);

    std::vector<TensorRef> tensor_refs(const std::string& prefix);
};

/// Forward activations cached for the matching backward call.
struct MlpCache {
    Matrix x;     // input batch
    Matrix pre1;  // pre-activation of the hidden layer
    Matrix h;     // relu(pre1)
    bool valid = false;
};

/// y = relu(x w1 + b1) w2 + b2, row-per-sample. Pass a cache to enable
/// backward().
Matrix forward(const Mlp& net, const Matrix& x, MlpCache* cache = nullptr);

struct MlpGrad {
    Matrix w1;
    Vector b1;
    Matrix w2;
    Vector b2;
    static MlpGrad zeros_like(const Mlp& net);
    void zero();
    std::vector<TensorRef> tensor_refs(const std::string& prefix);
};

/// Accumulates parameter gradients into `grad` and, when dx != nullptr,
/// overwrites *dx with the input gradient. Requires the cache produced by
/// forward() on the same batch. ReLU subgradient at 0 is 0.
void backward(const Mlp& net, const MlpCache& cache, const Matrix& dy,
              MlpGrad& grad, Matrix* dx = nullptr);

// ---- softmax / cross-entropy helpers shared by the prediction and loss paths ----

/// Numerically stable in-place softmax of one row.
void softmax_inplace(std::span<double> row);

/// Cross-entropy -log softmax(logits)[label]; writes the softmax into
/// probs_out when given. Stable via log-sum-exp.
double cross_entropy_logits(std::span<const double> logits, std::size_t label,
                            std::span<double> probs_out = {});

}  // namespace npssl::nn
