#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "d3m/datagen.hpp"
#include "d3m/nn.hpp"
#include "d3m/rng.hpp"
#include "d3m/vbll.hpp"

namespace d3m {

struct TrainConfig {
    double learning_rate = 1e-3;
    double weight_decay = 1e-4;
    size_t batch_size = 64;
    size_t epochs = 50;
    size_t hidden_dim = 16;
    size_t num_hidden = 4;
    double dropout = 0.2;
    double regularization_factor = 100.0;
    double prior_scale = 1.0;
    double wishart_scale = 1.0; // upstream knob with no analogue in the diagonal head; recorded only
    int k_mc_train = 8;         // reparameterized samples per example per step
    uint64_t seed = 57;

    void validate() const;
};

struct TrainedModel {
    nn::FeatureExtractorParams fe;
    vbll::HeadParams head;
    size_t num_classes = 0;
    size_t input_dim = 0;
    size_t train_size = 0; // n; head.kl_weight == regularization_factor / n
    TrainConfig config;
    data::FeatureStats stats; // preprocessing frozen at training time (may be empty)
};

struct TrainStats {
    std::vector<double> batch_loss;             // mean negative ELBO per optimizer step
    std::vector<double> epoch_loss;             // mean over each epoch
    std::vector<size_t> steps_per_epoch;
};

// ELBO maximization over shuffled mini-batches. Deterministic given
// (config, data, rng seed); single-threaded.
TrainedModel train(const TrainConfig& config, const data::Dataset& dataset, const Rng& master,
                   TrainStats* stats = nullptr);

// Posterior for one raw input (inference mode: dropout disabled).
vbll::GaussianLogitPosterior posterior_at(const TrainedModel& model, const nn::Vec& x);

// Fraction of examples where the mean posterior predictive argmax differs
// from the label. Per-example child rng streams; shard-order independent.
double evaluate(const TrainedModel& model, const data::Dataset& dataset, int k,
                const Rng& master, int threads = 1);

// Whole-model gradient of the per-example negative ELBO. Used by the trainer
// and by the finite-difference harness.
struct ModelGrads {
    nn::FeatureExtractorParams fe;
    vbll::HeadParams head;
};

double model_loss_grad(const TrainedModel& model, const nn::Vec& x, int label, int k_mc,
                       Rng& noise, ModelGrads& grads, bool train_mode);

// Flat parameter vector round-trips (feature extractor then head).
nn::Vec flatten_params(const TrainedModel& model);
void unflatten_params(TrainedModel& model, const nn::Vec& flat);

// --- persistence -----------------------------------------------------------

// Single-file JSON artifact; round-trips are bit-exact on all parameters.
std::string model_to_json(const TrainedModel& model);
TrainedModel model_from_json(const std::string& text);
void save_model(const TrainedModel& model, const std::string& path);
TrainedModel load_model(const std::string& path);

// Fingerprint of the canonical artifact text, used to chain downstream
// artifacts to the exact model that produced them.
std::string model_fingerprint(const TrainedModel& model);

} // namespace d3m
