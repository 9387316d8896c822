#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "d3m/calibrator.hpp"
#include "d3m/errors.hpp"
#include "helpers.hpp"
#include "scenario.hpp"

using namespace d3m;
using nn::Vec;

namespace {

// Model whose posterior is effectively deterministic: distinct means, tiny
// variance. With a tiny temperature every sampled label equals the argmax.
TrainedModel degenerate_model(size_t input_dim) {
    TrainedModel m;
    Rng init(4);
    m.fe = nn::init_feature_extractor(input_dim, 4, 1, 0.0, true, init);
    m.head = vbll::init_head(4, 2, 1.0, 0.0, init);
    std::fill(m.head.w_logvar.data.begin(), m.head.w_logvar.data.end(), 0.0);
    m.head.b_logvar.assign(2, -60.0);
    m.head.b_mu = {3.0, -3.0};
    m.num_classes = 2;
    m.input_dim = input_dim;
    m.train_size = 1;
    return m;
}

data::UnlabeledBatch constant_batch(size_t n, const Vec& row) {
    data::UnlabeledBatch b;
    b.dim = row.size();
    for (size_t i = 0; i < n; ++i) b.push_row(row);
    return b;
}

} // namespace

TEST_CASE("temperature softmax") {
    SUBCASE("symmetry") {
        const Vec p = temperature_softmax({0.0, 0.0}, 3.7);
        CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-15));
        CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-15));
    }
    SUBCASE("small temperature approaches one-hot at the argmax") {
        const Vec p = temperature_softmax({1.0, 0.0}, 1e-6);
        CHECK(p[0] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(p[1] == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    }
    SUBCASE("hand-evaluated values at tau = 1") {
        const Vec p = temperature_softmax({1.0, 0.0}, 1.0);
        CHECK(p[0] == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 1.0)).epsilon(1e-12));
        CHECK(p[1] == doctest::Approx(1.0 / (std::exp(1.0) + 1.0)).epsilon(1e-12));
    }
    SUBCASE("invalid temperature") {
        CHECK_THROWS_AS(temperature_softmax({1.0}, 0.0), InputError);
        CHECK_THROWS_AS(temperature_softmax({1.0}, -2.0), InputError);
    }
    SUBCASE("numerically stable on huge logits") {
        const Vec p = temperature_softmax({5000.0, 4990.0}, 1.0);
        CHECK(std::isfinite(p[0]));
        CHECK(p[0] + p[1] == doctest::Approx(1.0));
    }
}

TEST_CASE("categorical sampling") {
    SUBCASE("one-hot always returns its class") {
        Rng rng(1);
        for (int i = 0; i < 200; ++i) CHECK(categorical_sample({0.0, 1.0, 0.0}, rng) == 1);
    }
    SUBCASE("uniform four-class frequencies and chi-square") {
        Rng rng(2);
        const int n = 100000;
        std::vector<int> counts(4, 0);
        for (int i = 0; i < n; ++i) counts[categorical_sample({0.25, 0.25, 0.25, 0.25}, rng)]++;
        double chi2 = 0.0;
        for (int c : counts) {
            CHECK(std::abs(c / static_cast<double>(n) - 0.25) < 0.01);
            const double diff = c - n / 4.0;
            chi2 += diff * diff / (n / 4.0);
        }
        CHECK(chi2 < 16.27); // 3 dof at the 0.1% level
    }
    SUBCASE("fixed stream gives a fixed label") {
        Rng a(33), b(33);
        CHECK(categorical_sample({0.3, 0.4, 0.3}, a) == categorical_sample({0.3, 0.4, 0.3}, b));
    }
    SUBCASE("rejects unnormalized input") {
        Rng rng(3);
        CHECK_THROWS_AS(categorical_sample({0.5, 0.6}, rng), InputError);
        CHECK_THROWS_AS(categorical_sample({-0.1, 1.1}, rng), InputError);
    }
}

TEST_CASE("disagreement rate") {
    CHECK(disagreement_rate({1, 0, 1}, {1, 0, 1}) == 0.0);
    CHECK(disagreement_rate({1, 0, 1, 0}, {1, 1, 1, 0}) == doctest::Approx(0.25));
    CHECK_THROWS_AS(disagreement_rate({1}, {1, 0}), ShapeError);

    // counting oracle on a random pair
    Rng rng(9);
    std::vector<int> a(100), b(100);
    for (int i = 0; i < 100; ++i) {
        a[i] = static_cast<int>(rng.uniform_index(3));
        b[i] = static_cast<int>(rng.uniform_index(3));
    }
    int mism = 0;
    for (int i = 0; i < 100; ++i) mism += a[i] != b[i];
    CHECK(disagreement_rate(a, b) == doctest::Approx(mism / 100.0));
}

TEST_CASE("max disagreement: degenerate posterior with tiny temperature is zero") {
    const auto model = degenerate_model(2);
    const auto batch = constant_batch(5, {0.3, -0.8});
    CalibrationConfig cfg;
    cfg.batch_size = 5;
    cfg.posterior_samples = 50;
    cfg.temperature = 1e-9;
    CHECK(max_disagreement(model, batch, cfg, Rng(7)) == 0.0);

    cfg.argmax_labeling = true;
    cfg.temperature = 1.0;
    CHECK(max_disagreement(model, batch, cfg, Rng(7)) == 0.0);
}

TEST_CASE("max disagreement validates the window size") {
    const auto model = degenerate_model(2);
    const auto batch = constant_batch(5, {0.1, 0.1});
    CalibrationConfig cfg;
    cfg.batch_size = 6;
    CHECK_THROWS_AS(max_disagreement(model, batch, cfg, Rng(0)), ConfigError);
}

TEST_CASE("max disagreement replays step by step") {
    // Trace-replay oracle: re-execute the documented 2K pipeline with public
    // primitives and per-position streams; the result must match exactly.
    const auto& pools = scenario::trained_pools(scenario::id_spec(), 600);
    const auto& model = pools.model;

    data::UnlabeledBatch batch;
    batch.dim = 2;
    batch.push_row({0.4, -0.2});
    batch.push_row({-1.5, 0.7});
    batch.push_row({2.2, 0.0});

    CalibrationConfig cfg;
    cfg.batch_size = 3;
    cfg.posterior_samples = 4;
    cfg.temperature = 0.8;
    const Rng stream(991);
    const double got = max_disagreement(model, batch, cfg, stream);

    const int K = cfg.posterior_samples;
    std::vector<int> counts(static_cast<size_t>(K), 0);
    for (size_t i = 0; i < batch.n; ++i) {
        const auto q = posterior_at(model, batch.row(i));
        Rng pseudo_rng = stream.child(streams::kPseudolabel, i);
        const int pseudo = vbll::mean_predict(q, K, pseudo_rng);
        Rng dis = stream.child(streams::kDisagreement, i);
        for (int k = 0; k < K; ++k) {
            Vec z(q.num_classes());
            for (size_t c = 0; c < z.size(); ++c) z[c] = q.mu[c] + q.sigma(c) * dis.normal();
            const int label = categorical_sample(temperature_softmax(z, cfg.temperature), dis);
            if (label != pseudo) counts[static_cast<size_t>(k)]++;
        }
    }
    const double expected = *std::max_element(counts.begin(), counts.end()) / 3.0;
    CHECK(got == expected);
}

TEST_CASE("max disagreement with K = 1 equals the single disagreement rate") {
    const auto& pools = scenario::trained_pools(scenario::id_spec(), 600);
    data::UnlabeledBatch batch;
    batch.dim = 2;
    batch.push_row({0.0, 0.0});
    batch.push_row({1.0, -1.0});

    CalibrationConfig cfg;
    cfg.batch_size = 2;
    cfg.posterior_samples = 1;
    const Rng stream(5);
    const double got = max_disagreement(pools.model, batch, cfg, stream);

    std::vector<int> pseudo(2), sampled(2);
    for (size_t i = 0; i < 2; ++i) {
        const auto q = posterior_at(pools.model, batch.row(i));
        Rng pr = stream.child(streams::kPseudolabel, i);
        pseudo[i] = vbll::mean_predict(q, 1, pr);
        Rng dr = stream.child(streams::kDisagreement, i);
        Vec z(q.num_classes());
        for (size_t c = 0; c < z.size(); ++c) z[c] = q.mu[c] + q.sigma(c) * dr.normal();
        sampled[i] = categorical_sample(temperature_softmax(z, cfg.temperature), dr);
    }
    CHECK(got == disagreement_rate(sampled, pseudo));
}

TEST_CASE("calibrate basics") {
    const auto& pools = scenario::trained_pools(scenario::id_spec(), 600);
    const auto heldout = data::strip_labels(pools.splits.heldout);

    SUBCASE("single round gives a single phi") {
        auto cfg = scenario::quick_calibration(10, 1, 50);
        const auto record = calibrate(pools.model, heldout, cfg);
        CHECK(record.phi.size() == 1);
        CHECK(record.phi[0] >= 0.0);
        CHECK(record.phi[0] <= 1.0);
        CHECK(record.model_fingerprint == model_fingerprint(pools.model));
    }
    SUBCASE("record is sorted and within range") {
        auto cfg = scenario::quick_calibration(20, 50, 100);
        const auto record = calibrate(pools.model, heldout, cfg);
        CHECK(std::is_sorted(record.phi.begin(), record.phi.end()));
        record.validate();
    }
    SUBCASE("degenerate model on identical rows gives all zeros") {
        const auto model = degenerate_model(2);
        const auto pool = constant_batch(30, {0.5, 0.5});
        CalibrationConfig cfg;
        cfg.rounds = 20;
        cfg.batch_size = 8;
        cfg.posterior_samples = 25;
        cfg.temperature = 1e-9;
        const auto record = calibrate(model, pool, cfg);
        for (double v : record.phi) CHECK(v == 0.0);
    }
    SUBCASE("empty pool is rejected") {
        auto cfg = scenario::quick_calibration(5, 5, 10);
        CHECK_THROWS_AS(calibrate(pools.model, data::UnlabeledBatch{}, cfg), InputError);
    }
}

TEST_CASE("calibrate replays round by round") {
    const auto& pools = scenario::trained_pools(scenario::id_spec(), 600);
    const auto heldout = data::strip_labels(pools.splits.heldout);
    CalibrationConfig cfg;
    cfg.rounds = 10;
    cfg.batch_size = 4;
    cfg.posterior_samples = 6;
    cfg.temperature = 1.3;
    cfg.seed = 2024;
    const auto record = calibrate(pools.model, heldout, cfg);

    const Rng master(cfg.seed);
    std::vector<double> expected;
    for (size_t t = 0; t < cfg.rounds; ++t) {
        Rng round_rng = master.child(streams::kCalibrationRound, t);
        std::vector<int> counts(static_cast<size_t>(cfg.posterior_samples), 0);
        for (size_t pos = 0; pos < cfg.batch_size; ++pos) {
            const size_t index = round_rng.uniform_index(heldout.n);
            // memoized pseudolabel stream is keyed by the held-out index only
            Rng pr = master.child(streams::kHeldoutPseudolabel, index);
            const auto q = posterior_at(pools.model, heldout.row(index));
            const int pseudo = vbll::mean_predict(q, cfg.posterior_samples, pr);
            Rng dis = round_rng.child(streams::kDisagreement, pos);
            for (int k = 0; k < cfg.posterior_samples; ++k) {
                Vec z(q.num_classes());
                for (size_t c = 0; c < z.size(); ++c) z[c] = q.mu[c] + q.sigma(c) * dis.normal();
                const int label = categorical_sample(temperature_softmax(z, cfg.temperature), dis);
                if (label != pseudo) counts[static_cast<size_t>(k)]++;
            }
        }
        expected.push_back(*std::max_element(counts.begin(), counts.end()) /
                           static_cast<double>(cfg.batch_size));
    }
    std::sort(expected.begin(), expected.end());
    CHECK(record.phi == expected);
}

TEST_CASE("parallel calibration produces the identical record") {
    const auto& pools = scenario::trained_pools(scenario::id_spec(), 600);
    const auto heldout = data::strip_labels(pools.splits.heldout);
    auto cfg = scenario::quick_calibration(10, 60, 80);
    const auto seq = calibrate(pools.model, heldout, cfg, 1);
    const auto par = calibrate(pools.model, heldout, cfg, 3);
    CHECK(seq.phi == par.phi);
    CHECK(record_to_json(seq) == record_to_json(par));
}

TEST_CASE("phi grows with K in expectation") {
    const auto& pools = scenario::trained_pools(scenario::id_spec(), 1200);
    const auto pool = data::strip_labels(pools.splits.heldout);
    double mean_small = 0.0, mean_large = 0.0;
    const int seeds = 50;
    for (int s = 0; s < seeds; ++s) {
        Rng batch_rng(9000 + static_cast<uint64_t>(s));
        data::UnlabeledBatch batch;
        batch.dim = pool.dim;
        for (size_t i = 0; i < 20; ++i) batch.push_row(pool.row(batch_rng.uniform_index(pool.n)));
        CalibrationConfig cfg;
        cfg.batch_size = 20;
        cfg.temperature = 1.0;
        cfg.posterior_samples = 10;
        mean_small += max_disagreement(pools.model, batch, cfg, Rng(100 + s));
        cfg.posterior_samples = 1000;
        mean_large += max_disagreement(pools.model, batch, cfg, Rng(100 + s));
    }
    CHECK(mean_large / seeds >= mean_small / seeds);
}

TEST_CASE("raising the temperature does not decrease mean phi") {
    const auto& pools = scenario::trained_pools(scenario::id_spec(), 1200);
    const auto pool = data::strip_labels(pools.splits.heldout);
    const int seeds = 50;
    double prev = -1.0;
    for (double tau : {0.5, 1.0, 2.0}) {
        double mean = 0.0;
        for (int s = 0; s < seeds; ++s) {
            Rng batch_rng(7700 + static_cast<uint64_t>(s));
            data::UnlabeledBatch batch;
            batch.dim = pool.dim;
            for (size_t i = 0; i < 20; ++i)
                batch.push_row(pool.row(batch_rng.uniform_index(pool.n)));
            CalibrationConfig cfg;
            cfg.batch_size = 20;
            cfg.posterior_samples = 200;
            cfg.temperature = tau;
            mean += max_disagreement(pools.model, batch, cfg, Rng(300 + s));
        }
        mean /= seeds;
        CHECK(mean >= prev);
        prev = mean;
    }
}

TEST_CASE("independently seeded reference collections are exchangeable") {
    const auto& pools = scenario::trained_pools(scenario::id_spec(), 1200);
    const auto heldout = data::strip_labels(pools.splits.heldout);
    auto cfg = scenario::quick_calibration(20, 200, 300);
    cfg.seed = 111;
    const auto a = calibrate(pools.model, heldout, cfg, 2);
    cfg.seed = 222;
    const auto b = calibrate(pools.model, heldout, cfg, 2);
    const double d = testutil::ks_statistic(a.phi, b.phi);
    CHECK(d < testutil::ks_critical(1.628, a.phi.size(), b.phi.size()));
}

TEST_CASE("calibration record artifact round-trip") {
    const auto& pools = scenario::trained_pools(scenario::id_spec(), 600);
    auto cfg = scenario::quick_calibration(8, 12, 30);
    const auto record = calibrate(pools.model, data::strip_labels(pools.splits.heldout), cfg);

    const auto path = (std::filesystem::temp_directory_path() / "d3m_record.json").string();
    save_record(record, path);
    const auto loaded = load_record(path);
    CHECK(record_to_json(record) == record_to_json(loaded));
    CHECK(record_fingerprint(record) == record_fingerprint(loaded));

    std::ofstream out(path);
    out << record_to_json(record).substr(0, 50);
    out.close();
    CHECK_THROWS_AS(load_record(path), IoError);
}
