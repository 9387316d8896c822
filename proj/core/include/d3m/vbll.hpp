#pragma once

#include <cstddef>
#include <vector>

#include "d3m/nn.hpp"
#include "d3m/rng.hpp"

namespace d3m::vbll {

using nn::Vec;

// Diagonal Gaussian posterior over the C class logits of one input:
// q(z|x) = N(mu, diag(exp(log_var))).
struct GaussianLogitPosterior {
    Vec mu;
    Vec log_var;

    size_t num_classes() const { return mu.size(); }
    double sigma(size_t c) const;
};

// Variational last layer: two affine maps from features to posterior mean and
// log-variance. The log-variance parameterization keeps the variance positive
// without constraints; its bias starts at zero so the initial posterior has
// unit variance.
struct HeadParams {
    nn::Matrix w_mu;
    Vec b_mu;
    nn::Matrix w_logvar;
    Vec b_logvar;
    double prior_scale = 1.0; // s in the prior N(0, s^2 I)
    double kl_weight = 0.0;   // lambda = regularization_factor / n

    size_t num_classes() const { return w_mu.rows; }
    size_t feature_dim() const { return w_mu.cols; }
    size_t param_count() const;
    void append_to(Vec& out) const;
    size_t read_from(const Vec& flat, size_t offset);
};

HeadParams init_head(size_t feature_dim, size_t num_classes, double prior_scale,
                     double kl_weight, Rng& rng);

HeadParams zeros_like(const HeadParams& head);

GaussianLogitPosterior head_posterior(const HeadParams& head, const Vec& psi);

Vec softmax(const Vec& z);
Vec log_softmax(const Vec& z);

// KL[ N(mu, diag sigma^2) || N(0, s^2 I) ]
// = 1/2 sum_c [ sigma_c^2/s^2 + mu_c^2/s^2 - 1 - ln(sigma_c^2/s^2) ]
double kl_to_prior(const GaussianLogitPosterior& q, double prior_scale);

// Negative ELBO for one (input, label) pair, estimated with k_mc
// reparameterized samples z = mu + sigma * eps:
//   loss = -(1/K) sum_k log softmax(z_k)_y + lambda * KL(q || prior).
// Labels are zero-based.
double elbo_loss(const GaussianLogitPosterior& q, int label, int k_mc, double kl_weight,
                 double prior_scale, Rng& rng);

// Loss plus analytic gradients w.r.t. mu and log_var, using the same sample
// draws as elbo_loss for a given rng state (common random numbers).
struct ElboGrad {
    double loss = 0.0;
    Vec dmu;
    Vec dlogvar;
};

ElboGrad elbo_loss_grad(const GaussianLogitPosterior& q, int label, int k_mc, double kl_weight,
                        double prior_scale, Rng& rng);

// K i.i.d. reparameterized draws, row k = mu + sigma * eps_k. Row-major K x C.
std::vector<Vec> sample_logits(const GaussianLogitPosterior& q, int k, Rng& rng);

// Monte-Carlo posterior predictive: mean of softmax over k draws.
Vec mean_softmax(const GaussianLogitPosterior& q, int k, Rng& rng);

// argmax of the posterior predictive; ties break to the lowest class index.
int mean_predict(const GaussianLogitPosterior& q, int k, Rng& rng);

int argmax_lowest(const Vec& v);

// Backward through the head: accumulates head parameter gradients and
// returns d loss / d psi.
Vec head_backward(const HeadParams& head, const Vec& psi, const Vec& dmu, const Vec& dlogvar,
                  HeadParams& grads);

} // namespace d3m::vbll
