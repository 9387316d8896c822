#include "d3m/vbll.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "d3m/errors.hpp"

namespace d3m::vbll {

double GaussianLogitPosterior::sigma(size_t c) const {
    return std::exp(0.5 * log_var[c]);
}

size_t HeadParams::param_count() const {
    return w_mu.data.size() + b_mu.size() + w_logvar.data.size() + b_logvar.size();
}

void HeadParams::append_to(Vec& out) const {
    out.insert(out.end(), w_mu.data.begin(), w_mu.data.end());
    out.insert(out.end(), b_mu.begin(), b_mu.end());
    out.insert(out.end(), w_logvar.data.begin(), w_logvar.data.end());
    out.insert(out.end(), b_logvar.begin(), b_logvar.end());
}

size_t HeadParams::read_from(const Vec& flat, size_t offset) {
    for (auto& v : w_mu.data) v = flat[offset++];
    for (auto& v : b_mu) v = flat[offset++];
    for (auto& v : w_logvar.data) v = flat[offset++];
    for (auto& v : b_logvar) v = flat[offset++];
    return offset;
}

HeadParams init_head(size_t feature_dim, size_t num_classes, double prior_scale,
                     double kl_weight, Rng& rng) {
    if (feature_dim == 0 || num_classes == 0) {
        throw InputError("init_head: dimensions must be positive");
    }
    if (prior_scale <= 0.0) throw InputError("init_head: prior_scale must be positive");
    if (kl_weight < 0.0) throw InputError("init_head: kl_weight must be nonnegative");

    const double bound = std::sqrt(6.0 / static_cast<double>(feature_dim + num_classes));
    HeadParams h;
    h.w_mu = nn::Matrix(num_classes, feature_dim);
    for (auto& v : h.w_mu.data) v = rng.uniform(-bound, bound);
    h.b_mu.assign(num_classes, 0.0);
    h.w_logvar = nn::Matrix(num_classes, feature_dim);
    for (auto& v : h.w_logvar.data) v = rng.uniform(-bound, bound);
    h.b_logvar.assign(num_classes, 0.0);
    h.prior_scale = prior_scale;
    h.kl_weight = kl_weight;
    return h;
}

HeadParams zeros_like(const HeadParams& head) {
    HeadParams g = head;
    std::fill(g.w_mu.data.begin(), g.w_mu.data.end(), 0.0);
    std::fill(g.b_mu.begin(), g.b_mu.end(), 0.0);
    std::fill(g.w_logvar.data.begin(), g.w_logvar.data.end(), 0.0);
    std::fill(g.b_logvar.begin(), g.b_logvar.end(), 0.0);
    return g;
}

GaussianLogitPosterior head_posterior(const HeadParams& head, const Vec& psi) {
    GaussianLogitPosterior q;
    q.mu = nn::affine(head.w_mu, head.b_mu, psi);
    q.log_var = nn::affine(head.w_logvar, head.b_logvar, psi);
    return q;
}

Vec softmax(const Vec& z) {
    const double zmax = *std::max_element(z.begin(), z.end());
    Vec p(z.size());
    double sum = 0.0;
    for (size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] - zmax);
        sum += p[i];
    }
    for (auto& v : p) v /= sum;
    return p;
}

Vec log_softmax(const Vec& z) {
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - zmax);
    const double lse = zmax + std::log(sum);
    Vec out(z.size());
    for (size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
    return out;
}

double kl_to_prior(const GaussianLogitPosterior& q, double prior_scale) {
    const double s2 = prior_scale * prior_scale;
    double kl = 0.0;
    for (size_t c = 0; c < q.mu.size(); ++c) {
        const double var = std::exp(q.log_var[c]);
        kl += var / s2 + q.mu[c] * q.mu[c] / s2 - 1.0 - (q.log_var[c] - std::log(s2));
    }
    return 0.5 * kl;
}

namespace {

void check_label(const GaussianLogitPosterior& q, int label) {
    if (label < 0 || static_cast<size_t>(label) >= q.num_classes()) {
        throw InputError("label " + std::to_string(label) + " out of range for " +
                         std::to_string(q.num_classes()) + " classes");
    }
}

} // namespace

double elbo_loss(const GaussianLogitPosterior& q, int label, int k_mc, double kl_weight,
                 double prior_scale, Rng& rng) {
    check_label(q, label);
    if (k_mc < 1) throw InputError("elbo_loss: k_mc must be >= 1");
    const size_t C = q.num_classes();
    Vec z(C);
    double loglik = 0.0;
    for (int k = 0; k < k_mc; ++k) {
        for (size_t c = 0; c < C; ++c) z[c] = q.mu[c] + q.sigma(c) * rng.normal();
        loglik += log_softmax(z)[static_cast<size_t>(label)];
    }
    loglik /= static_cast<double>(k_mc);
    const double loss = -loglik + kl_weight * kl_to_prior(q, prior_scale);
    if (!std::isfinite(loss)) throw NumericError("elbo_loss: non-finite loss");
    return loss;
}

ElboGrad elbo_loss_grad(const GaussianLogitPosterior& q, int label, int k_mc, double kl_weight,
                        double prior_scale, Rng& rng) {
    check_label(q, label);
    if (k_mc < 1) throw InputError("elbo_loss_grad: k_mc must be >= 1");
    const size_t C = q.num_classes();
    const size_t y = static_cast<size_t>(label);

    ElboGrad out;
    out.dmu.assign(C, 0.0);
    out.dlogvar.assign(C, 0.0);

    Vec z(C), eps(C), sig(C);
    for (size_t c = 0; c < C; ++c) sig[c] = q.sigma(c);

    double loglik = 0.0;
    const double inv_k = 1.0 / static_cast<double>(k_mc);
    for (int k = 0; k < k_mc; ++k) {
        for (size_t c = 0; c < C; ++c) {
            eps[c] = rng.normal();
            z[c] = q.mu[c] + sig[c] * eps[c];
        }
        const Vec ls = log_softmax(z);
        loglik += ls[y];
        // d(-log softmax(z)_y)/dz = softmax(z) - e_y
        for (size_t c = 0; c < C; ++c) {
            const double dz = (std::exp(ls[c]) - (c == y ? 1.0 : 0.0)) * inv_k;
            out.dmu[c] += dz;
            out.dlogvar[c] += dz * 0.5 * sig[c] * eps[c];
        }
    }
    loglik *= inv_k;

    const double s2 = prior_scale * prior_scale;
    double kl = 0.0;
    for (size_t c = 0; c < C; ++c) {
        const double var = sig[c] * sig[c];
        kl += var / s2 + q.mu[c] * q.mu[c] / s2 - 1.0 - (q.log_var[c] - std::log(s2));
        out.dmu[c] += kl_weight * q.mu[c] / s2;
        out.dlogvar[c] += kl_weight * 0.5 * (var / s2 - 1.0);
    }
    kl *= 0.5;

    out.loss = -loglik + kl_weight * kl;
    if (!std::isfinite(out.loss)) throw NumericError("elbo_loss_grad: non-finite loss");
    return out;
}

std::vector<Vec> sample_logits(const GaussianLogitPosterior& q, int k, Rng& rng) {
    if (k < 1) throw InputError("sample_logits: k must be >= 1");
    const size_t C = q.num_classes();
    Vec sig(C);
    for (size_t c = 0; c < C; ++c) sig[c] = q.sigma(c);
    std::vector<Vec> rows(static_cast<size_t>(k), Vec(C));
    for (auto& row : rows) {
        for (size_t c = 0; c < C; ++c) row[c] = q.mu[c] + sig[c] * rng.normal();
    }
    return rows;
}

Vec mean_softmax(const GaussianLogitPosterior& q, int k, Rng& rng) {
    if (k < 1) throw InputError("mean_softmax: k must be >= 1");
    const size_t C = q.num_classes();
    Vec sig(C), z(C), acc(C, 0.0);
    for (size_t c = 0; c < C; ++c) sig[c] = q.sigma(c);
    for (int i = 0; i < k; ++i) {
        for (size_t c = 0; c < C; ++c) z[c] = q.mu[c] + sig[c] * rng.normal();
        const Vec p = softmax(z);
        for (size_t c = 0; c < C; ++c) acc[c] += p[c];
    }
    for (auto& v : acc) v /= static_cast<double>(k);
    return acc;
}

int argmax_lowest(const Vec& v) {
    size_t best = 0;
    for (size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return static_cast<int>(best);
}

int mean_predict(const GaussianLogitPosterior& q, int k, Rng& rng) {
    return argmax_lowest(mean_softmax(q, k, rng));
}

Vec head_backward(const HeadParams& head, const Vec& psi, const Vec& dmu, const Vec& dlogvar,
                  HeadParams& grads) {
    const size_t C = head.num_classes();
    const size_t D = head.feature_dim();
    if (psi.size() != D) throw ShapeError("head_backward: feature size mismatch");

    Vec dpsi(D, 0.0);
    for (size_t r = 0; r < C; ++r) {
        grads.b_mu[r] += dmu[r];
        grads.b_logvar[r] += dlogvar[r];
        const double* wm = head.w_mu.data.data() + r * D;
        const double* wv = head.w_logvar.data.data() + r * D;
        double* gm = grads.w_mu.data.data() + r * D;
        double* gv = grads.w_logvar.data.data() + r * D;
        for (size_t c = 0; c < D; ++c) {
            gm[c] += dmu[r] * psi[c];
            gv[c] += dlogvar[r] * psi[c];
            dpsi[c] += wm[c] * dmu[r] + wv[c] * dlogvar[r];
        }
    }
    return dpsi;
}

} // namespace d3m::vbll
