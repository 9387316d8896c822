#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "d3m/datagen.hpp"
#include "d3m/rng.hpp"
#include "d3m/trainer.hpp"

namespace d3m {

// Stream derivation keys for the sampling pipeline. These are part of the
// reproducibility contract: a calibration record is only replayable if the
// same keys derive the same sample blocks.
namespace streams {
inline constexpr uint64_t kPseudolabel = 0x31; // per batch position
inline constexpr uint64_t kDisagreement = 0x32; // per batch position / round position
inline constexpr uint64_t kHeldoutPseudolabel = 0x33; // per held-out pool index
inline constexpr uint64_t kCalibrationRound = 0x34;   // per round t
} // namespace streams

// Hyperparameters of the disagreement statistic. The same values must be used
// for calibration and for every deployment-time test; the monitor enforces
// this through the calibration record.
struct CalibrationConfig {
    size_t rounds = 1000;         // T, size of the reference collection
    size_t batch_size = 50;       // m, bootstrap window size
    int posterior_samples = 5000; // K; 2K draws per input (K pseudolabel, K disagreement)
    double temperature = 1.0;     // tau
    uint64_t seed = 57;
    // Sampling mode for the disagreement block: categorical draws from the
    // temperature-scaled softmax (default), or argmax labeling as in the
    // idealized algorithms.
    bool argmax_labeling = false;

    void validate() const;
};

struct CalibrationRecord {
    std::vector<double> phi; // sorted ascending, every entry in [0,1]
    CalibrationConfig config;
    std::string model_fingerprint;
    std::string tool_version;

    void validate() const;
};

// softmax(z / tau), max-subtraction stabilized.
nn::Vec temperature_softmax(const nn::Vec& z, double tau);

// One draw from a probability vector (validated to within 1e-9 of summing to 1).
int categorical_sample(const nn::Vec& p, Rng& rng);

double disagreement_rate(const std::vector<int>& sampled, const std::vector<int>& pseudo);

// Pseudolabel of one input: argmax of the K-sample Monte-Carlo posterior
// predictive, drawn from the given stream.
int pseudolabel(const TrainedModel& model, const nn::Vec& x, int k, Rng& stream);

// Maximum disagreement rate of one batch: pseudolabels from the first K-block
// per input, K further logit samples per input for the disagreement block,
// temperature softmax, categorical (or argmax) labels, max over k of the
// disagreement rate against the pseudolabels. Streams are derived per input
// position from `stream`.
double max_disagreement(const TrainedModel& model, const data::UnlabeledBatch& batch,
                        const CalibrationConfig& cfg, const Rng& stream);

// T bootstrap rounds over the held-out pool. Round t draws m indices with
// replacement and computes its maximum disagreement rate with a stream
// derived from (seed, t), so any execution order (or thread count) produces
// the identical multiset. Pseudolabels are memoized per held-out index; the
// memoized value equals what any round would recompute because inference is
// dropout-free and the pseudolabel stream is keyed by the index alone.
CalibrationRecord calibrate(const TrainedModel& model, const data::UnlabeledBatch& heldout,
                            const CalibrationConfig& cfg, int threads = 1);

// --- persistence ------------------------------------------------------------

std::string record_to_json(const CalibrationRecord& record);
CalibrationRecord record_from_json(const std::string& text);
void save_record(const CalibrationRecord& record, const std::string& path);
CalibrationRecord load_record(const std::string& path);
std::string record_fingerprint(const CalibrationRecord& record);

} // namespace d3m
