#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "d3m/calibrator.hpp"
#include "d3m/datagen.hpp"
#include "d3m/rng.hpp"
#include "d3m/trainer.hpp"

namespace d3m {

struct MonitorVerdict {
    double phi_tilde = 0.0;
    double threshold = 0.0;
    bool flagged = false; // flagged <=> phi_tilde >= threshold
    double alpha = 0.0;
    int64_t window_id = 0;
    size_t window_size = 0;
    int64_t ts_ms = 0; // wall clock in serve mode, 0 in batch mode
};

// Conservative empirical quantile: the ceil(level * T)-th smallest element,
// index clamped to [1, T]. `sorted_phi` must be ascending.
double quantile(const std::vector<double>& sorted_phi, double level);

// One deployment window decision. Hyperparameters (m, K, tau) come from the
// calibration record; the batch size must match the record's m and the model
// must be the one the record was calibrated against.
MonitorVerdict verdict(const TrainedModel& model, const CalibrationRecord& record,
                       const data::UnlabeledBatch& batch, double alpha, const Rng& stream);

// Pre-deployment gate: bootstraps `trials` windows of size m from an ID
// validation pool disjoint from the calibration pool and estimates the false
// positive rate. pass <=> fpr_estimate <= alpha.
struct GateReport {
    double fpr_estimate = 0.0;
    bool pass = false;
    size_t trials = 0;
    size_t flags = 0;
    double alpha = 0.0;
};

GateReport validate_id_fpr(const TrainedModel& model, const CalibrationRecord& record,
                           const data::UnlabeledBatch& validation_pool, double alpha,
                           size_t trials, const Rng& master);

// Streaming window manager: strictly FIFO, disjoint windows of size m. One
// instance per model; verdict emission is serialized by the single caller.
class MonitorStream {
public:
    MonitorStream(TrainedModel model, CalibrationRecord record, double alpha, Rng master);

    // Appends one input; emits a verdict exactly when the buffer fills a window.
    std::optional<MonitorVerdict> push(const nn::Vec& x);

    int64_t windows_emitted() const { return window_counter_; }
    size_t buffered() const { return buffer_.n; }
    const TrainedModel& model() const { return model_; }
    const CalibrationRecord& record() const { return record_; }
    double alpha() const { return alpha_; }

private:
    TrainedModel model_;
    CalibrationRecord record_;
    double alpha_;
    Rng master_;
    data::UnlabeledBatch buffer_;
    int64_t window_counter_ = 0;
};

std::string verdict_to_ndjson(const MonitorVerdict& v);

} // namespace d3m
