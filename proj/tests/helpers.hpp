#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "d3m/datagen.hpp"
#include "d3m/rng.hpp"

// Shared test-only oracles. Everything here is deliberately independent of
// the implementation paths it checks: plain loops, no reuse of library
// internals beyond data containers.
namespace testutil {

inline std::string fixtures_dir() {
    const char* env = std::getenv("D3M_FIXTURES");
    return env ? env : "tests/fixtures";
}

// Central finite differences of a scalar function over a flat vector.
inline std::vector<double> central_differences(const std::function<double(const std::vector<double>&)>& f,
                                               std::vector<double> theta, double h) {
    std::vector<double> grad(theta.size());
    for (size_t i = 0; i < theta.size(); ++i) {
        const double saved = theta[i];
        theta[i] = saved + h;
        const double fp = f(theta);
        theta[i] = saved - h;
        const double fm = f(theta);
        theta[i] = saved;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b,
                          double floor = 1e-6) {
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({floor, std::abs(a[i]), std::abs(b[i])});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

// E[f(Z)] for Z ~ N(mu, sigma^2) by composite Simpson over +/- 10 sigma.
inline double gauss_expect_1d(const std::function<double(double)>& f, double mu, double sigma,
                              int intervals = 4000) {
    const double lo = mu - 10.0 * sigma;
    const double hi = mu + 10.0 * sigma;
    const double h = (hi - lo) / intervals;
    const auto integrand = [&](double z) {
        const double u = (z - mu) / sigma;
        return f(z) * std::exp(-0.5 * u * u) / (sigma * std::sqrt(2.0 * M_PI));
    };
    double acc = integrand(lo) + integrand(hi);
    for (int i = 1; i < intervals; ++i) {
        acc += integrand(lo + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
    }
    return acc * h / 3.0;
}

// Tensor-product expectation of a vector-valued f over independent
// N(mu_c, sigma_c^2) coordinates (dense quadrature; dims <= 3).
inline std::vector<double> gauss_expect_nd(
    const std::function<std::vector<double>(const std::vector<double>&)>& f,
    const std::vector<double>& mu, const std::vector<double>& sigma, int nodes = 121) {
    const size_t d = mu.size();
    // Simpson weights per axis
    std::vector<double> pts(nodes), wts(nodes);
    std::vector<std::vector<double>> axis_pts(d), axis_wts(d);
    for (size_t c = 0; c < d; ++c) {
        const double lo = mu[c] - 9.0 * sigma[c];
        const double hi = mu[c] + 9.0 * sigma[c];
        const double h = (hi - lo) / (nodes - 1);
        axis_pts[c].resize(nodes);
        axis_wts[c].resize(nodes);
        for (int i = 0; i < nodes; ++i) {
            const double z = lo + i * h;
            const double u = (z - mu[c]) / sigma[c];
            double w = (i == 0 || i == nodes - 1) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
            w *= h / 3.0;
            axis_pts[c][i] = z;
            axis_wts[c][i] = w * std::exp(-0.5 * u * u) / (sigma[c] * std::sqrt(2.0 * M_PI));
        }
    }
    std::vector<double> out;
    std::vector<double> z(d);
    std::vector<int> idx(d, 0);
    while (true) {
        double w = 1.0;
        for (size_t c = 0; c < d; ++c) {
            z[c] = axis_pts[c][static_cast<size_t>(idx[c])];
            w *= axis_wts[c][static_cast<size_t>(idx[c])];
        }
        const std::vector<double> v = f(z);
        if (out.empty()) out.assign(v.size(), 0.0);
        for (size_t k = 0; k < v.size(); ++k) out[k] += w * v[k];
        size_t c = 0;
        for (; c < d; ++c) {
            if (++idx[c] < nodes) break;
            idx[c] = 0;
        }
        if (c == d) break;
    }
    return out;
}

// Full-batch gradient-descent logistic regression; returns accuracy on the
// same data. Used as the convex baseline for separability checks.
inline double logistic_oracle_accuracy(const d3m::data::Dataset& ds, int iters = 400,
                                       double lr = 0.5) {
    const size_t d = ds.dim;
    std::vector<double> w(d + 1, 0.0); // bias last
    for (int it = 0; it < iters; ++it) {
        std::vector<double> grad(d + 1, 0.0);
        for (size_t i = 0; i < ds.n; ++i) {
            double z = w[d];
            for (size_t c = 0; c < d; ++c) z += w[c] * ds.features[i * d + c];
            const double p = 1.0 / (1.0 + std::exp(-z));
            const double err = p - static_cast<double>(ds.labels[i]);
            for (size_t c = 0; c < d; ++c) grad[c] += err * ds.features[i * d + c];
            grad[d] += err;
        }
        for (size_t c = 0; c <= d; ++c) w[c] -= lr * grad[c] / static_cast<double>(ds.n);
    }
    size_t correct = 0;
    for (size_t i = 0; i < ds.n; ++i) {
        double z = w[d];
        for (size_t c = 0; c < d; ++c) z += w[c] * ds.features[i * d + c];
        if ((z > 0.0 ? 1 : 0) == ds.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(ds.n);
}

// Two-sample Kolmogorov-Smirnov statistic. Ties are advanced together so the
// statistic is evaluated only at complete jumps of both empirical CDFs.
inline double ks_statistic(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double d = 0.0;
    size_t i = 0, j = 0;
    while (i < a.size() || j < b.size()) {
        double v;
        if (i < a.size() && j < b.size()) {
            v = std::min(a[i], b[j]);
        } else if (i < a.size()) {
            v = a[i];
        } else {
            v = b[j];
        }
        while (i < a.size() && a[i] <= v) ++i;
        while (j < b.size() && b[j] <= v) ++j;
        const double fa = static_cast<double>(i) / static_cast<double>(a.size());
        const double fb = static_cast<double>(j) / static_cast<double>(b.size());
        d = std::max(d, std::abs(fa - fb));
    }
    return d;
}

// Asymptotic two-sample KS critical value at significance level; c(0.01) = 1.628.
inline double ks_critical(double c_alpha, size_t n, size_t m) {
    return c_alpha * std::sqrt(static_cast<double>(n + m) / static_cast<double>(n * m));
}

inline double binomial_sd(double p, size_t n) {
    return std::sqrt(p * (1.0 - p) / static_cast<double>(n));
}

} // namespace testutil
