#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "d3m/nn.hpp"
#include "d3m/rng.hpp"

namespace d3m::data {

using nn::Vec;

// Per-column preprocessing frozen on the ID training split: imputation value
// (mean for numeric columns, mode for categorical ones) and standardization
// moments. Deployment batches reuse these unchanged.
struct FeatureStats {
    Vec impute;
    Vec mean;
    Vec stddev;
    bool empty() const { return mean.empty(); }
};

struct Dataset {
    size_t n = 0;
    size_t dim = 0;
    Vec features; // row-major n x dim; NaN marks a missing entry before imputation
    std::vector<int> labels; // empty for unlabeled data
    FeatureStats stats; // populated once preprocessing has been applied
    std::string provenance;

    bool labeled() const { return !labels.empty(); }
    Vec row(size_t i) const;
    void push_row(const Vec& x, std::optional<int> label = std::nullopt);
};

// Monitor-facing view: deliberately has no label field, so hidden labels
// cannot leak past the datagen boundary.
struct UnlabeledBatch {
    size_t n = 0;
    size_t dim = 0;
    Vec features;

    Vec row(size_t i) const;
    void push_row(const Vec& x);
};

UnlabeledBatch strip_labels(const Dataset& d);

// --- synthetic blobs and shift scenarios --------------------------------

// Geometry of the synthetic source: two unit-variance Gaussian blobs on the
// first axis at +/- separation/2, labeled by cluster. The fixed ground truth
// used by shift scenarios is a slab rule: g(x) = 1 iff 0 < x_0 < slab_end.
// Inside the blob supports the slab rule and the cluster labels coincide up
// to Gaussian tail mass.
struct BlobSpec {
    size_t dim = 2;
    double separation = 4.0;
    double slab_end = 4.0;
};

enum class ShiftKind { deteriorating, non_deteriorating };

struct ShiftBatch {
    UnlabeledBatch inputs;
    std::vector<int> hidden_labels; // evaluation only; never handed to the monitor
};

Dataset gen_blobs(size_t n, size_t d, double separation, Rng& rng);

int ground_truth_label(const BlobSpec& spec, const Vec& x);

// Shifted deployment batch of size m.
//   deteriorating:     translate every point by magnitude along the first axis,
//                      moving mass past the slab end where the trained decision
//                      rule keeps predicting the positive class.
//   non_deteriorating: push a random half of the points away from the decision
//                      boundary (0.5 * magnitude along the first axis, sign by
//                      class), leaving model accuracy intact.
// magnitude = 0 reproduces the ID distribution; with the same rng seed the
// features are identical to gen_blobs output.
ShiftBatch gen_shift(const BlobSpec& base, ShiftKind kind, double magnitude, size_t m, Rng& rng);

// --- splits and preprocessing ----------------------------------------------

struct SplitDataset {
    Dataset train;
    Dataset heldout;    // calibration pool
    Dataset validation; // ID-FPR gate pool
};

SplitDataset split_id(const Dataset& id, double train_frac, double heldout_frac, Rng& rng);

FeatureStats compute_feature_stats(const Dataset& train, const std::vector<size_t>& categorical_cols);
void apply_feature_stats(Dataset& d, const FeatureStats& stats);
void apply_feature_stats(UnlabeledBatch& b, const FeatureStats& stats);
void apply_feature_stats(Vec& row, const FeatureStats& stats);

// --- CSV ---------------------------------------------------------------------

// Comma-separated values; '?' denotes a missing entry in both directions.
Dataset load_csv(const std::string& path, bool has_labels);
void export_csv(const Dataset& d, const std::string& path);

// --- UCI Heart Disease --------------------------------------------------------

struct UciHeartPaths {
    std::string cleveland;
    std::string hungarian;
    std::string switzerland;
    std::string va;
};

struct UciHeartData {
    SplitDataset id;  // Cleveland + Hungary, split 60/20/20
    Dataset ood;      // Switzerland + VA Long Beach
    size_t dropped_rows = 0;
};

// Ingests the four processed UCI files (14 comma-separated attributes, '?'
// for missing). Keeps the nine features age, sex, chest pain type, resting
// blood pressure, serum cholesterol, fasting blood sugar, resting ECG, max
// heart rate, exercise-induced angina; binarizes the diagnosis (0 vs > 0).
// Missing numerics are mean-imputed and categoricals mode-imputed with stats
// from the ID train split; all columns are standardized on the same split.
UciHeartData load_uci_heart(const UciHeartPaths& paths, uint64_t split_seed);

uint64_t dataset_hash(const Dataset& d);

} // namespace d3m::data
