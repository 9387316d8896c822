#pragma once

#include <cstddef>
#include <vector>

#include "d3m/rng.hpp"

namespace d3m::nn {

using Vec = std::vector<double>;

struct Matrix {
    size_t rows = 0;
    size_t cols = 0;
    Vec data; // row-major

    Matrix() = default;
    Matrix(size_t r, size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& at(size_t r, size_t c) { return data[r * cols + c]; }
    double at(size_t r, size_t c) const { return data[r * cols + c]; }
};

// y = W x + b
Vec affine(const Matrix& w, const Vec& b, const Vec& x);

double elu(double x);
double elu_grad(double x);

struct AffineParams {
    Matrix w;
    Vec b;
};

// Dense feature extractor: an input layer to hidden width, then equal-width
// hidden layers with ELU nonlinearities. Skip connections join consecutive
// equal-width layers; inverted dropout is applied to hidden activations only
// in training mode.
struct FeatureExtractorParams {
    std::vector<AffineParams> layers;
    size_t hidden_dim = 0;
    size_t num_hidden = 0;
    double dropout_rate = 0.0;
    bool skip_connections = true;

    size_t input_dim() const { return layers.empty() ? 0 : layers.front().w.cols; }
    size_t param_count() const;
    void append_to(Vec& out) const;
    size_t read_from(const Vec& flat, size_t offset);
};

FeatureExtractorParams init_feature_extractor(size_t input_dim, size_t hidden_dim,
                                              size_t num_hidden, double dropout_rate,
                                              bool skip_connections, Rng& rng);

// Per-call activations retained for the backward pass.
struct FeCache {
    std::vector<Vec> inputs;   // h_0 = x, h_1, ..., h_{L-1}
    std::vector<Vec> preacts;  // a_k = W_k h_{k-1} + b_k
    std::vector<Vec> masks;    // dropout masks (scaled), empty when inactive
    Vec psi;
};

Vec fe_forward(const FeatureExtractorParams& params, const Vec& x, bool train_mode, Rng& rng);
Vec fe_forward_cached(const FeatureExtractorParams& params, const Vec& x, bool train_mode,
                      Rng& rng, FeCache& cache);

// Accumulates parameter gradients into `grads` (same shape as `params`)
// given d loss / d psi; returns d loss / d x.
Vec fe_backward(const FeatureExtractorParams& params, const FeCache& cache, const Vec& dpsi,
                FeatureExtractorParams& grads);

// Zero-valued gradient container matching a parameter layout.
FeatureExtractorParams zeros_like(const FeatureExtractorParams& params);

// AdamW with decoupled weight decay over flattened parameter vectors.
struct OptimizerState {
    Vec m;
    Vec v;
    int64_t step = 0;
    double learning_rate = 1e-3;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

OptimizerState make_optimizer(size_t param_count, double learning_rate, double weight_decay);

void adamw_step(Vec& params, const Vec& grads, OptimizerState& state);

} // namespace d3m::nn
