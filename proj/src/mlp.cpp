#include "npssl/mlp.hpp"

#include <algorithm>

#include "npssl/errors.hpp"
#include "npssl/kernels.hpp"
#include "npssl/rng.hpp"

namespace npssl::nn {

namespace {

void check(bool ok, const char* msg) {
    if (!ok) throw DimError(msg);
}

void add_bias_rows(Matrix& m, const Vector& b) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double* row = m.data() + i * m.cols();
        for (std::size_t j = 0; j < m.cols(); ++j) row[j] += b[j];
    }
}

void col_sum_acc(const Matrix& m, Vector& out) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double* row = m.data() + i * m.cols();
        for (std::size_t j = 0; j < m.cols(); ++j) out[j] += row[j];
    }
}

}  // namespace

Mlp Mlp::he_uniform(std::size_t in, std::size_t hidden, std::size_t out, std::uint64_t seed) {
    Mlp net = zeros(in, hidden, out);
    Rng rng(seed);
    const double lim1 = std::sqrt(6.0 / static_cast<double>(in));
    for (double& w : net.w1.flat()) w = rng.uniform(-lim1, lim1);
    const double lim2 = std::sqrt(6.0 / static_cast<double>(hidden));
    for (double& w : net.w2.flat()) w = rng.uniform(-lim2, lim2);
    return net;
}

Mlp Mlp::zeros(std::size_t in, std::size_t hidden, std::size_t out) {
    Mlp net;
    net.w1 = Matrix(in, hidden);
    net.b1 = Vector(hidden, 0.0);
    net.w2 = Matrix(hidden, out);
    net.b2 = Vector(out, 0.0);
    return net;
}

std::vector<TensorRef> Mlp::tensor_refs(const std::string& prefix) {
    return {
        {prefix + "/w1", w1.flat(), {w1.rows(), w1.cols()}},
        {prefix + "/b1", {b1.data(), b1.size()}, {b1.size()}},
        {prefix + "/w2", w2.flat(), {w2.rows(), w2.cols()}},
        {prefix + "/b2", {b2.data(), b2.size()}, {b2.size()}},
    };
}

MlpGrad MlpGrad::zeros_like(const Mlp& net) {
    MlpGrad g;
    g.w1 = Matrix(net.w1.rows(), net.w1.cols());
    g.b1 = Vector(net.b1.size(), 0.0);
    g.w2 = Matrix(net.w2.rows(), net.w2.cols());
    g.b2 = Vector(net.b2.size(), 0.0);
    return g;
}

void MlpGrad::zero() {
    w1.fill(0.0);
    std::fill(b1.begin(), b1.end(), 0.0);
    w2.fill(0.0);
    std::fill(b2.begin(), b2.end(), 0.0);
}

std::vector<TensorRef> MlpGrad::tensor_refs(const std::string& prefix) {
    return {
        {prefix + "/w1", w1.flat(), {w1.rows(), w1.cols()}},
        {prefix + "/b1", {b1.data(), b1.size()}, {b1.size()}},
        {prefix + "/w2", w2.flat(), {w2.rows(), w2.cols()}},
        {prefix + "/b2", {b2.data(), b2.size()}, {b2.size()}},
    };
}

Matrix forward(const Mlp& net, const Matrix& x, MlpCache* cache) {
    check(x.cols() == net.in_dim(), "mlp forward: input width mismatch");
    const auto& k = kern::ops();
    const std::size_t n = x.rows();

    Matrix pre1(n, net.hidden_dim());
    k.gemm_nn(n, net.in_dim(), net.hidden_dim(), x.data(), net.w1.data(), pre1.data());
    add_bias_rows(pre1, net.b1);

    Matrix h(n, net.hidden_dim());
    k.relu(pre1.size(), pre1.data(), h.data());

    Matrix y(n, net.out_dim());
    k.gemm_nn(n, net.hidden_dim(), net.out_dim(), h.data(), net.w2.data(), y.data());
    add_bias_rows(y, net.b2);

    if (cache != nullptr) {
        cache->x = x;
        cache->pre1 = std::move(pre1);
        cache->h = std::move(h);
        cache->valid = true;
    }
    return y;
}

void backward(const Mlp& net, const MlpCache& cache, const Matrix& dy,
              MlpGrad& grad, Matrix* dx) {
    if (!cache.valid) throw Error("mlp backward: forward cache missing");
    check(dy.rows() == cache.x.rows() && dy.cols() == net.out_dim(),
          "mlp backward: upstream gradient shape mismatch");
    const auto& k = kern::ops();
    const std::size_t n = dy.rows();

    // dW2 += H^T dY ; db2 += colsum(dY)
    k.gemm_tn(n, net.hidden_dim(), net.out_dim(), cache.h.data(), dy.data(), grad.w2.data());
    col_sum_acc(dy, grad.b2);

    // dH = dY W2^T, gated by the ReLU mask
    Matrix dh(n, net.hidden_dim());
    k.gemm_nt(n, net.out_dim(), net.hidden_dim(), dy.data(), net.w2.data(), dh.data());
    Matrix dpre(n, net.hidden_dim());
    k.relu_bwd(dh.size(), cache.pre1.data(), dh.data(), dpre.data());

    // dW1 += X^T dPre ; db1 += colsum(dPre)
    k.gemm_tn(n, net.in_dim(), net.hidden_dim(), cache.x.data(), dpre.data(), grad.w1.data());
    col_sum_acc(dpre, grad.b1);

    if (dx != nullptr) {
        *dx = Matrix(n, net.in_dim());
        k.gemm_nt(n, net.hidden_dim(), net.in_dim(), dpre.data(), net.w1.data(), dx->data());
    }
}

void softmax_inplace(std::span<double> row) {
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double denom = 0.0;
    for (double& v : row) {
        v = std::exp(v - mx);
        denom += v;
    }
    for (double& v : row) v /= denom;
}

double cross_entropy_logits(std::span<const double> logits, std::size_t label,
                            std::span<double> probs_out) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double denom = 0.0;
    for (double v : logits) denom += std::exp(v - mx);
    const double lse = mx + std::log(denom);
    if (!probs_out.empty()) {
        for (std::size_t j = 0; j < logits.size(); ++j)
            probs_out[j] = std::exp(logits[j] - lse);
    }
    return lse - logits[label];
}

}  // namespace npssl::nn
