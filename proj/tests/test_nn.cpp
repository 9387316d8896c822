#include "doctest.h"

#include <cmath>

#include "d3m/errors.hpp"
#include "d3m/nn.hpp"
#include "d3m/trainer.hpp"
#include "helpers.hpp"

using namespace d3m;
using nn::Vec;

namespace {

nn::FeatureExtractorParams single_layer_identity(size_t d) {
    nn::FeatureExtractorParams p;
    p.hidden_dim = d;
    p.num_hidden = 1;
    p.dropout_rate = 0.0;
    p.skip_connections = false;
    nn::AffineParams l;
    l.w = nn::Matrix(d, d);
    for (size_t i = 0; i < d; ++i) l.w.at(i, i) = 1.0;
    l.b.assign(d, 0.0);
    p.layers.push_back(l);
    return p;
}

} // namespace

TEST_CASE("elu basics") {
    CHECK(nn::elu(0.0) == 0.0);
    CHECK(nn::elu(2.5) == 2.5);
    CHECK(nn::elu(-1.0) == doctest::Approx(std::exp(-1.0) - 1.0).epsilon(1e-15));
    // continuity at 0 from the left, and grad continuity
    CHECK(std::abs(nn::elu(-1e-12) - (-1e-12)) < 1e-20);
    CHECK(nn::elu_grad(0.0) == doctest::Approx(1.0));
}

TEST_CASE("identity layer applies ELU elementwise") {
    auto p = single_layer_identity(2);
    Rng rng(0);
    const Vec psi = nn::fe_forward(p, {1.0, -1.0}, false, rng);
    CHECK(psi[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(psi[1] == doctest::Approx(std::exp(-1.0) - 1.0).epsilon(1e-15));
}

TEST_CASE("zero weights map everything to zero") {
    Rng init(1);
    auto p = nn::init_feature_extractor(3, 4, 3, 0.0, true, init);
    for (auto& l : p.layers) {
        std::fill(l.w.data.begin(), l.w.data.end(), 0.0);
        std::fill(l.b.begin(), l.b.end(), 0.0);
    }
    Rng rng(0);
    const Vec psi = nn::fe_forward(p, {5.0, -2.0, 0.5}, false, rng);
    for (double v : psi) CHECK(v == 0.0);
}

TEST_CASE("shape mismatch raises") {
    auto p = single_layer_identity(2);
    Rng rng(0);
    CHECK_THROWS_AS(nn::fe_forward(p, {1.0, 2.0, 3.0}, false, rng), ShapeError);
}

TEST_CASE("two-layer forward matches straight-line re-implementation") {
    // Small fixed net, written out twice: once through the library, once as
    // plain arithmetic below.
    nn::FeatureExtractorParams p;
    p.hidden_dim = 2;
    p.num_hidden = 2;
    p.dropout_rate = 0.0;
    p.skip_connections = true;
    nn::AffineParams l0, l1;
    l0.w = nn::Matrix(2, 3);
    l0.w.data = {0.2, -0.4, 0.1, 0.7, 0.05, -0.3};
    l0.b = {0.01, -0.02};
    l1.w = nn::Matrix(2, 2);
    l1.w.data = {-0.6, 0.3, 0.25, 0.9};
    l1.b = {0.0, 0.1};
    p.layers = {l0, l1};

    const Vec x = {1.5, -0.5, 2.0};
    Rng rng(0);
    const Vec psi = nn::fe_forward(p, x, false, rng);

    auto elu_ref = [](double v) { return v > 0 ? v : std::exp(v) - 1.0; };
    const double a0 = 0.2 * 1.5 + (-0.4) * (-0.5) + 0.1 * 2.0 + 0.01;
    const double a1 = 0.7 * 1.5 + 0.05 * (-0.5) + (-0.3) * 2.0 + (-0.02);
    const double h0 = elu_ref(a0), h1 = elu_ref(a1);
    const double b0 = -0.6 * h0 + 0.3 * h1 + 0.0;
    const double b1 = 0.25 * h0 + 0.9 * h1 + 0.1;
    // second layer is same-width, so the skip adds h
    const double r0 = elu_ref(b0) + h0;
    const double r1 = elu_ref(b1) + h1;

    CHECK(psi[0] == doctest::Approx(r0).epsilon(1e-14));
    CHECK(psi[1] == doctest::Approx(r1).epsilon(1e-14));
}

TEST_CASE("finite-difference harness recovers the quadratic gradient") {
    // loss = 0.5 * ||theta||^2  =>  grad = theta
    const Vec theta = {0.3, -1.2, 2.0, 0.0};
    const auto loss = [](const Vec& t) {
        double s = 0.0;
        for (double v : t) s += v * v;
        return 0.5 * s;
    };
    const Vec g = testutil::central_differences(loss, theta, 1e-5);
    CHECK(testutil::max_rel_err(g, theta) < 1e-8);

    const auto constant = [](const Vec&) { return 3.14; };
    const Vec gz = testutil::central_differences(constant, theta, 1e-5);
    for (double v : gz) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("elbo gradients match central differences with common random numbers") {
    Rng master(202);
    for (int rep = 0; rep < 5; ++rep) {
        Rng setup = master.child(1, static_cast<uint64_t>(rep));
        TrainedModel model;
        model.input_dim = 3;
        model.num_classes = 2 + rep % 2;
        model.train_size = 10;
        model.fe = nn::init_feature_extractor(3, 4, 2, rep % 2 == 0 ? 0.0 : 0.3, true, setup);
        model.head = vbll::init_head(4, model.num_classes, 1.0, 100.0 / 10.0, setup);

        Vec x(3);
        for (auto& v : x) v = setup.normal();
        const int label = static_cast<int>(setup.uniform_index(model.num_classes));
        const Rng noise_seed = master.child(2, static_cast<uint64_t>(rep));
        const int k_mc = 4;

        ModelGrads grads{nn::zeros_like(model.fe), vbll::zeros_like(model.head)};
        Rng noise = noise_seed;
        model_loss_grad(model, x, label, k_mc, noise, grads, /*train_mode=*/true);
        Vec analytic;
        grads.fe.append_to(analytic);
        grads.head.append_to(analytic);

        TrainedModel probe = model;
        const auto loss_at = [&](const Vec& theta) {
            unflatten_params(probe, theta);
            Rng crn = noise_seed; // identical draws for every evaluation
            ModelGrads scratch{nn::zeros_like(probe.fe), vbll::zeros_like(probe.head)};
            return model_loss_grad(probe, x, label, k_mc, crn, scratch, true);
        };
        const Vec fd = testutil::central_differences(loss_at, flatten_params(model), 1e-4);
        CHECK(testutil::max_rel_err(analytic, fd, 1e-4) < 1e-4);
    }
}

TEST_CASE("adamw handles the documented special cases") {
    SUBCASE("zero gradient, zero decay: parameters unchanged") {
        Vec p = {1.0, -2.0};
        auto st = nn::make_optimizer(2, 0.1, 0.0);
        nn::adamw_step(p, {0.0, 0.0}, st);
        CHECK(p[0] == 1.0);
        CHECK(p[1] == -2.0);
    }
    SUBCASE("first step moves by ~lr * sign(grad)") {
        Vec p = {0.5};
        auto st = nn::make_optimizer(1, 0.1, 0.0);
        nn::adamw_step(p, {1.0}, st);
        CHECK(p[0] == doctest::Approx(0.5 - 0.1).epsilon(1e-6));
    }
    SUBCASE("decoupled decay shrinks by (1 - lr*wd)") {
        Vec p = {2.0, -4.0};
        auto st = nn::make_optimizer(2, 0.1, 0.01);
        nn::adamw_step(p, {0.0, 0.0}, st);
        CHECK(p[0] == doctest::Approx(2.0 * (1.0 - 0.001)).epsilon(1e-12));
        CHECK(p[1] == doctest::Approx(-4.0 * (1.0 - 0.001)).epsilon(1e-12));
    }
    SUBCASE("shape mismatch raises") {
        Vec p = {1.0};
        auto st = nn::make_optimizer(2, 0.1, 0.0);
        CHECK_THROWS_AS(nn::adamw_step(p, {0.0}, st), ShapeError);
    }
}

TEST_CASE("gradient correctness across random small configurations") {
    // 20 random configs, relative error < 1e-4 against central differences.
    Rng master(7);
    for (int rep = 0; rep < 20; ++rep) {
        Rng setup = master.child(10, static_cast<uint64_t>(rep));
        const size_t din = 1 + setup.uniform_index(4);
        const size_t hidden = 2 + setup.uniform_index(4);
        const size_t layers = 1 + setup.uniform_index(3);
        TrainedModel model;
        model.input_dim = din;
        model.num_classes = 2 + setup.uniform_index(2);
        model.train_size = 16;
        model.fe = nn::init_feature_extractor(din, hidden, layers, 0.0, true, setup);
        model.head = vbll::init_head(hidden, model.num_classes, 1.5, 0.5, setup);

        Vec x(din);
        for (auto& v : x) v = setup.normal();
        const int label = static_cast<int>(setup.uniform_index(model.num_classes));
        const Rng noise_seed = master.child(11, static_cast<uint64_t>(rep));

        ModelGrads grads{nn::zeros_like(model.fe), vbll::zeros_like(model.head)};
        Rng noise = noise_seed;
        model_loss_grad(model, x, label, 3, noise, grads, false);
        Vec analytic;
        grads.fe.append_to(analytic);
        grads.head.append_to(analytic);

        TrainedModel probe = model;
        const auto loss_at = [&](const Vec& theta) {
            unflatten_params(probe, theta);
            Rng crn = noise_seed;
            ModelGrads scratch{nn::zeros_like(probe.fe), vbll::zeros_like(probe.head)};
            return model_loss_grad(probe, x, label, 3, crn, scratch, false);
        };
        const Vec fd = testutil::central_differences(loss_at, flatten_params(model), 1e-4);
        CHECK(testutil::max_rel_err(analytic, fd, 1e-4) < 1e-4);
    }
}
