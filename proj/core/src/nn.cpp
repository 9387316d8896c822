#include "d3m/nn.hpp"

#include <cmath>
#include <string>

#include "d3m/errors.hpp"

namespace d3m::nn {

Vec affine(const Matrix& w, const Vec& b, const Vec& x) {
    if (x.size() != w.cols) {
        throw ShapeError("affine: input size " + std::to_string(x.size()) +
                         " does not match weight cols " + std::to_string(w.cols));
    }
    Vec y(w.rows);
    for (size_t r = 0; r < w.rows; ++r) {
        double acc = b[r];
        const double* row = w.data.data() + r * w.cols;
        for (size_t c = 0; c < w.cols; ++c) acc += row[c] * x[c];
        y[r] = acc;
    }
    return y;
}

double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
double elu_grad(double x) { return x > 0.0 ? 1.0 : std::exp(x); }

size_t FeatureExtractorParams::param_count() const {
    size_t n = 0;
    for (const auto& l : layers) n += l.w.data.size() + l.b.size();
    return n;
}

void FeatureExtractorParams::append_to(Vec& out) const {
    for (const auto& l : layers) {
        out.insert(out.end(), l.w.data.begin(), l.w.data.end());
        out.insert(out.end(), l.b.begin(), l.b.end());
    }
}

size_t FeatureExtractorParams::read_from(const Vec& flat, size_t offset) {
    for (auto& l : layers) {
        for (auto& v : l.w.data) v = flat[offset++];
        for (auto& v : l.b) v = flat[offset++];
    }
    return offset;
}

namespace {

Matrix glorot_uniform(size_t rows, size_t cols, Rng& rng) {
    Matrix m(rows, cols);
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (auto& v : m.data) v = rng.uniform(-bound, bound);
    return m;
}

} // namespace

FeatureExtractorParams init_feature_extractor(size_t input_dim, size_t hidden_dim,
                                              size_t num_hidden, double dropout_rate,
                                              bool skip_connections, Rng& rng) {
    if (input_dim == 0 || hidden_dim == 0 || num_hidden == 0) {
        throw InputError("init_feature_extractor: dimensions must be positive");
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
        throw InputError("init_feature_extractor: dropout_rate must be in [0,1)");
    }
    FeatureExtractorParams p;
    p.hidden_dim = hidden_dim;
    p.num_hidden = num_hidden;
    p.dropout_rate = dropout_rate;
    p.skip_connections = skip_connections;
    size_t in = input_dim;
    for (size_t k = 0; k < num_hidden; ++k) {
        AffineParams layer;
        layer.w = glorot_uniform(hidden_dim, in, rng);
        layer.b.assign(hidden_dim, 0.0);
        p.layers.push_back(std::move(layer));
        in = hidden_dim;
    }
    return p;
}

Vec fe_forward_cached(const FeatureExtractorParams& params, const Vec& x, bool train_mode,
                      Rng& rng, FeCache& cache) {
    cache.inputs.clear();
    cache.preacts.clear();
    cache.masks.clear();

    const bool use_dropout = train_mode && params.dropout_rate > 0.0;
    const double keep = 1.0 - params.dropout_rate;

    Vec h = x;
    for (size_t k = 0; k < params.layers.size(); ++k) {
        const auto& layer = params.layers[k];
        cache.inputs.push_back(h);
        Vec a = affine(layer.w, layer.b, h);
        cache.preacts.push_back(a);
        Vec z(a.size());
        for (size_t i = 0; i < a.size(); ++i) z[i] = elu(a[i]);
        // skips join consecutive hidden layers, never the input layer
        const bool skip = params.skip_connections && k > 0 && h.size() == z.size();
        if (skip) {
            for (size_t i = 0; i < z.size(); ++i) z[i] += h[i];
        }
        if (use_dropout) {
            Vec mask(z.size());
            for (size_t i = 0; i < z.size(); ++i) {
                mask[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
                z[i] *= mask[i];
            }
            cache.masks.push_back(std::move(mask));
        }
        h = std::move(z);
    }
    cache.psi = h;
    return h;
}

Vec fe_forward(const FeatureExtractorParams& params, const Vec& x, bool train_mode, Rng& rng) {
    FeCache cache;
    return fe_forward_cached(params, x, train_mode, rng, cache);
}

Vec fe_backward(const FeatureExtractorParams& params, const FeCache& cache, const Vec& dpsi,
                FeatureExtractorParams& grads) {
    const size_t num_layers = params.layers.size();
    const bool used_dropout = !cache.masks.empty();

    Vec dh = dpsi;
    for (size_t k = num_layers; k-- > 0;) {
        const auto& layer = params.layers[k];
        const Vec& a = cache.preacts[k];
        const Vec& input = cache.inputs[k];

        Vec dout = dh;
        if (used_dropout) {
            const Vec& mask = cache.masks[k];
            for (size_t i = 0; i < dout.size(); ++i) dout[i] *= mask[i];
        }

        const bool skip = params.skip_connections && k > 0 && input.size() == a.size();

        // d through ELU
        Vec da(a.size());
        for (size_t i = 0; i < a.size(); ++i) da[i] = dout[i] * elu_grad(a[i]);

        auto& gl = grads.layers[k];
        Vec dinput(input.size(), 0.0);
        for (size_t r = 0; r < layer.w.rows; ++r) {
            gl.b[r] += da[r];
            const double* wrow = layer.w.data.data() + r * layer.w.cols;
            double* grow = gl.w.data.data() + r * layer.w.cols;
            for (size_t c = 0; c < layer.w.cols; ++c) {
                grow[c] += da[r] * input[c];
                dinput[c] += wrow[c] * da[r];
            }
        }
        if (skip) {
            for (size_t i = 0; i < dinput.size(); ++i) dinput[i] += dout[i];
        }
        dh = std::move(dinput);
    }
    return dh;
}

FeatureExtractorParams zeros_like(const FeatureExtractorParams& params) {
    FeatureExtractorParams g = params;
    for (auto& l : g.layers) {
        std::fill(l.w.data.begin(), l.w.data.end(), 0.0);
        std::fill(l.b.begin(), l.b.end(), 0.0);
    }
    return g;
}

OptimizerState make_optimizer(size_t param_count, double learning_rate, double weight_decay) {
    OptimizerState s;
    s.m.assign(param_count, 0.0);
    s.v.assign(param_count, 0.0);
    s.learning_rate = learning_rate;
    s.weight_decay = weight_decay;
    return s;
}

void adamw_step(Vec& params, const Vec& grads, OptimizerState& state) {
    if (params.size() != grads.size() || params.size() != state.m.size()) {
        throw ShapeError("adamw_step: parameter/gradient/state size mismatch");
    }
    state.step += 1;
    const double b1 = state.beta1;
    const double b2 = state.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * grads[i];
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * grads[i] * grads[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        // decay is decoupled: applied to the parameter, not folded into the gradient
        params[i] -= state.learning_rate * state.weight_decay * params[i];
        params[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
}

} // namespace d3m::nn
