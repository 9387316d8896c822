#include "d3m/calibrator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "d3m/errors.hpp"
#include "d3m/hash.hpp"
#include "d3m/log.hpp"
#include "d3m/version.hpp"

namespace d3m {

using json = nlohmann::ordered_json;

void CalibrationConfig::validate() const {
    if (rounds == 0) throw InputError("calibration: rounds must be >= 1");
    if (batch_size == 0) throw InputError("calibration: batch_size must be >= 1");
    if (posterior_samples < 1) throw InputError("calibration: posterior_samples must be >= 1");
    if (temperature <= 0.0) throw InputError("calibration: temperature must be > 0");
}

void CalibrationRecord::validate() const {
    config.validate();
    if (phi.size() != config.rounds) {
        throw IntegrityError("calibration record: phi length differs from configured rounds");
    }
    if (!std::is_sorted(phi.begin(), phi.end())) {
        throw IntegrityError("calibration record: phi is not sorted");
    }
    for (double v : phi) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw IntegrityError("calibration record: phi entry outside [0,1]");
        }
    }
}

nn::Vec temperature_softmax(const nn::Vec& z, double tau) {
    if (tau <= 0.0) throw InputError("temperature_softmax: tau must be > 0");
    nn::Vec scaled(z.size());
    for (size_t i = 0; i < z.size(); ++i) scaled[i] = z[i] / tau;
    return vbll::softmax(scaled);
}

int categorical_sample(const nn::Vec& p, Rng& rng) {
    double sum = 0.0;
    for (double v : p) {
        if (v < 0.0) throw InputError("categorical_sample: negative probability");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw InputError("categorical_sample: probabilities sum to " + std::to_string(sum));
    }
    const double u = rng.uniform();
    double acc = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(p.size()) - 1;
}

double disagreement_rate(const std::vector<int>& sampled, const std::vector<int>& pseudo) {
    if (sampled.size() != pseudo.size()) {
        throw ShapeError("disagreement_rate: label vectors have different lengths");
    }
    if (sampled.empty()) throw InputError("disagreement_rate: empty label vectors");
    size_t mismatches = 0;
    for (size_t i = 0; i < sampled.size(); ++i) {
        if (sampled[i] != pseudo[i]) ++mismatches;
    }
    return static_cast<double>(mismatches) / static_cast<double>(sampled.size());
}

int pseudolabel(const TrainedModel& model, const nn::Vec& x, int k, Rng& stream) {
    const auto q = posterior_at(model, x);
    return vbll::mean_predict(q, k, stream);
}

namespace {

// Disagreement counts for one input against its pseudolabel, one increment
// per posterior sample k. This is the second K-block of the 2K protocol.
void accumulate_disagreements(const vbll::GaussianLogitPosterior& q, int pseudo, int k,
                              double tau, bool argmax_labeling, Rng& rng,
                              std::vector<uint32_t>& counts) {
    const size_t C = q.num_classes();
    nn::Vec sig(C), z(C);
    for (size_t c = 0; c < C; ++c) sig[c] = q.sigma(c);
    for (int s = 0; s < k; ++s) {
        for (size_t c = 0; c < C; ++c) z[c] = q.mu[c] + sig[c] * rng.normal();
        int label;
        if (argmax_labeling) {
            label = vbll::argmax_lowest(z);
        } else {
            label = categorical_sample(temperature_softmax(z, tau), rng);
        }
        if (label != pseudo) counts[static_cast<size_t>(s)]++;
    }
}

} // namespace

double max_disagreement(const TrainedModel& model, const data::UnlabeledBatch& batch,
                        const CalibrationConfig& cfg, const Rng& stream) {
    cfg.validate();
    if (batch.n == 0) throw InputError("max_disagreement: empty batch");
    if (batch.n != cfg.batch_size) {
        throw ConfigError("max_disagreement: batch size " + std::to_string(batch.n) +
                          " differs from configured m = " + std::to_string(cfg.batch_size));
    }

    const int K = cfg.posterior_samples;
    std::vector<uint32_t> counts(static_cast<size_t>(K), 0);
    for (size_t i = 0; i < batch.n; ++i) {
        const nn::Vec x = batch.row(i);
        const auto q = posterior_at(model, x);

        Rng pseudo_rng = stream.child(streams::kPseudolabel, i);
        const int pseudo = vbll::mean_predict(q, K, pseudo_rng);

        Rng dis_rng = stream.child(streams::kDisagreement, i);
        accumulate_disagreements(q, pseudo, K, cfg.temperature, cfg.argmax_labeling, dis_rng,
                                 counts);
    }
    const uint32_t worst = *std::max_element(counts.begin(), counts.end());
    return static_cast<double>(worst) / static_cast<double>(batch.n);
}

CalibrationRecord calibrate(const TrainedModel& model, const data::UnlabeledBatch& heldout,
                            const CalibrationConfig& cfg, int threads) {
    cfg.validate();
    if (heldout.n == 0) throw InputError("calibrate: empty held-out pool");
    if (heldout.dim != model.input_dim) {
        throw ShapeError("calibrate: held-out dimension differs from model input_dim");
    }
    if (cfg.batch_size > heldout.n) {
        log::warn("calibrate: bootstrap size m = " + std::to_string(cfg.batch_size) +
                  " exceeds held-out pool of " + std::to_string(heldout.n) + " rows");
    }

    const Rng master(cfg.seed);
    const int K = cfg.posterior_samples;

    // Memoized pseudolabels, keyed by held-out index. The stream is keyed by
    // the index alone, so every round recomputing the label would draw the
    // same samples and land on the same value.
    std::vector<int> memo(heldout.n, -1);
    std::mutex memo_mutex;
    const auto pool_pseudolabel = [&](size_t index) {
        {
            std::lock_guard<std::mutex> lock(memo_mutex);
            if (memo[index] >= 0) return memo[index];
        }
        Rng stream = master.child(streams::kHeldoutPseudolabel, index);
        const int label = pseudolabel(model, heldout.row(index), K, stream);
        std::lock_guard<std::mutex> lock(memo_mutex);
        memo[index] = label;
        return label;
    };

    std::vector<double> phi(cfg.rounds, 0.0);
    const auto run_round = [&](size_t t) {
        Rng round_rng = master.child(streams::kCalibrationRound, t);
        std::vector<uint32_t> counts(static_cast<size_t>(K), 0);
        for (size_t pos = 0; pos < cfg.batch_size; ++pos) {
            const size_t index = static_cast<size_t>(round_rng.uniform_index(heldout.n));
            const int pseudo = pool_pseudolabel(index);
            const auto q = posterior_at(model, heldout.row(index));
            Rng dis_rng = round_rng.child(streams::kDisagreement, pos);
            accumulate_disagreements(q, pseudo, K, cfg.temperature, cfg.argmax_labeling, dis_rng,
                                     counts);
        }
        const uint32_t worst = *std::max_element(counts.begin(), counts.end());
        phi[t] = static_cast<double>(worst) / static_cast<double>(cfg.batch_size);
    };

    if (threads <= 1) {
        for (size_t t = 0; t < cfg.rounds; ++t) run_round(t);
    } else {
        const size_t nt = static_cast<size_t>(threads);
        std::vector<std::thread> pool;
        std::atomic<size_t> next{0};
        for (size_t w = 0; w < nt; ++w) {
            pool.emplace_back([&] {
                for (size_t t = next.fetch_add(1); t < cfg.rounds; t = next.fetch_add(1)) {
                    run_round(t);
                }
            });
        }
        for (auto& th : pool) th.join();
    }

    CalibrationRecord record;
    record.phi = std::move(phi);
    std::sort(record.phi.begin(), record.phi.end());
    record.config = cfg;
    record.model_fingerprint = model_fingerprint(model);
    record.tool_version = kVersion;
    return record;
}

// --- persistence --------------------------------------------------------------

namespace {
constexpr int kRecordFormatVersion = 1;
} // namespace

std::string record_to_json(const CalibrationRecord& record) {
    json j;
    j["format_version"] = kRecordFormatVersion;
    j["kind"] = "d3m.calibration";
    j["model_fingerprint"] = record.model_fingerprint;
    j["tool_version"] = record.tool_version;
    j["config"] = json{{"rounds", record.config.rounds},
                       {"batch_size", record.config.batch_size},
                       {"posterior_samples", record.config.posterior_samples},
                       {"temperature", record.config.temperature},
                       {"seed", record.config.seed},
                       {"argmax_labeling", record.config.argmax_labeling}};
    j["phi"] = record.phi;
    return j.dump(2) + "\n";
}

CalibrationRecord record_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("calibration artifact: corrupt file: ") + e.what());
    }
    if (!j.contains("kind") || j["kind"] != "d3m.calibration") {
        throw IoError("calibration artifact: not a d3m calibration file");
    }
    if (j["format_version"].get<int>() != kRecordFormatVersion) {
        throw IoError("calibration artifact: unsupported format_version");
    }
    try {
        CalibrationRecord r;
        r.model_fingerprint = j.at("model_fingerprint").get<std::string>();
        r.tool_version = j.value("tool_version", "");
        const json& c = j.at("config");
        r.config.rounds = c.at("rounds").get<size_t>();
        r.config.batch_size = c.at("batch_size").get<size_t>();
        r.config.posterior_samples = c.at("posterior_samples").get<int>();
        r.config.temperature = c.at("temperature").get<double>();
        r.config.seed = c.at("seed").get<uint64_t>();
        r.config.argmax_labeling = c.at("argmax_labeling").get<bool>();
        r.phi = j.at("phi").get<std::vector<double>>();
        r.validate();
        return r;
    } catch (const json::exception& e) {
        throw IoError(std::string("calibration artifact: corrupt file: ") + e.what());
    }
}

void save_record(const CalibrationRecord& record, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("save_record: cannot open " + path + " for writing");
    out << record_to_json(record);
}

CalibrationRecord load_record(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("load_record: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return record_from_json(text);
}

std::string record_fingerprint(const CalibrationRecord& record) {
    return to_hex(fnv1a64(record_to_json(record)));
}

} // namespace d3m
