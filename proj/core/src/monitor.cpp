#include "d3m/monitor.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "d3m/errors.hpp"
#include "d3m/log.hpp"

namespace d3m {

using json = nlohmann::ordered_json;

namespace {
constexpr uint64_t kStreamGateTrial = 0x41;
constexpr uint64_t kStreamGateBatch = 0x42;
constexpr uint64_t kStreamWindow = 0x43;
} // namespace

double quantile(const std::vector<double>& sorted_phi, double level) {
    if (sorted_phi.empty()) throw InputError("quantile: empty collection");
    const auto t = static_cast<double>(sorted_phi.size());
    auto idx = static_cast<long long>(std::ceil(level * t));
    idx = std::max(1LL, std::min(idx, static_cast<long long>(sorted_phi.size())));
    return sorted_phi[static_cast<size_t>(idx - 1)];
}

MonitorVerdict verdict(const TrainedModel& model, const CalibrationRecord& record,
                       const data::UnlabeledBatch& batch, double alpha, const Rng& stream) {
    if (alpha <= 0.0 || alpha >= 1.0) throw InputError("verdict: alpha must be in (0,1)");
    record.validate();
    if (batch.n != record.config.batch_size) {
        throw ConfigError("verdict: window size " + std::to_string(batch.n) +
                          " differs from calibrated m = " +
                          std::to_string(record.config.batch_size));
    }
    const std::string fp = model_fingerprint(model);
    if (fp != record.model_fingerprint) {
        throw IntegrityError("verdict: model fingerprint " + fp +
                             " does not match calibration record " + record.model_fingerprint);
    }

    MonitorVerdict v;
    v.phi_tilde = max_disagreement(model, batch, record.config, stream);
    v.threshold = quantile(record.phi, 1.0 - alpha);
    v.flagged = v.phi_tilde >= v.threshold; // ties flag
    v.alpha = alpha;
    v.window_size = batch.n;
    return v;
}

GateReport validate_id_fpr(const TrainedModel& model, const CalibrationRecord& record,
                           const data::UnlabeledBatch& validation_pool, double alpha,
                           size_t trials, const Rng& master) {
    if (trials < 100) throw InputError("validate_id_fpr: trials must be >= 100");
    if (validation_pool.n == 0) throw InputError("validate_id_fpr: empty validation pool");
    if (alpha <= 0.0 || alpha > 1.0) throw InputError("validate_id_fpr: alpha must be in (0,1]");
    const size_t m = record.config.batch_size;
    if (validation_pool.n < m) {
        log::warn("validate_id_fpr: validation pool of " + std::to_string(validation_pool.n) +
                  " rows is smaller than window size " + std::to_string(m) +
                  "; bootstrapping proceeds");
    }

    // alpha = 1 would force level-0 quantiles through verdict(); the gate then
    // passes trivially, so flag counting uses the usual rule at a capped alpha.
    const double verdict_alpha = std::min(alpha, 0.999999);

    size_t flags = 0;
    for (size_t t = 0; t < trials; ++t) {
        Rng trial_rng = master.child(kStreamGateTrial, t);
        data::UnlabeledBatch window;
        window.dim = validation_pool.dim;
        for (size_t i = 0; i < m; ++i) {
            window.push_row(validation_pool.row(trial_rng.uniform_index(validation_pool.n)));
        }
        const auto v = verdict(model, record, window, verdict_alpha,
                               master.child(kStreamGateBatch, t));
        if (v.flagged) ++flags;
    }

    GateReport report;
    report.trials = trials;
    report.flags = flags;
    report.alpha = alpha;
    report.fpr_estimate = static_cast<double>(flags) / static_cast<double>(trials);
    report.pass = report.fpr_estimate <= alpha;
    return report;
}

MonitorStream::MonitorStream(TrainedModel model, CalibrationRecord record, double alpha,
                             Rng master)
    : model_(std::move(model)), record_(std::move(record)), alpha_(alpha), master_(master) {
    record_.validate();
    if (alpha_ <= 0.0 || alpha_ >= 1.0) throw InputError("MonitorStream: alpha must be in (0,1)");
    const std::string fp = model_fingerprint(model_);
    if (fp != record_.model_fingerprint) {
        throw IntegrityError("MonitorStream: model fingerprint does not match calibration record");
    }
    buffer_.dim = model_.input_dim;
}

std::optional<MonitorVerdict> MonitorStream::push(const nn::Vec& x) {
    if (x.size() != model_.input_dim) {
        throw ShapeError("MonitorStream: input has " + std::to_string(x.size()) +
                         " features, model expects " + std::to_string(model_.input_dim));
    }
    buffer_.push_row(x);
    if (buffer_.n < record_.config.batch_size) return std::nullopt;

    MonitorVerdict v = verdict(model_, record_, buffer_, alpha_,
                               master_.child(kStreamWindow, static_cast<uint64_t>(window_counter_)));
    v.window_id = window_counter_;
    ++window_counter_;
    buffer_ = data::UnlabeledBatch{};
    buffer_.dim = model_.input_dim;
    return v;
}

std::string verdict_to_ndjson(const MonitorVerdict& v) {
    json j;
    j["window_id"] = v.window_id;
    j["phi_tilde"] = v.phi_tilde;
    j["threshold"] = v.threshold;
    j["alpha"] = v.alpha;
    j["flagged"] = v.flagged;
    j["m"] = v.window_size;
    j["ts"] = v.ts_ms;
    return j.dump();
}

} // namespace d3m
