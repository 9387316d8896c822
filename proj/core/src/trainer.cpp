#include "d3m/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

#include <nlohmann/json.hpp>

#include "d3m/errors.hpp"
#include "d3m/hash.hpp"
#include "d3m/log.hpp"

namespace d3m {

using json = nlohmann::ordered_json;

namespace {

// Stream tags. Values are arbitrary but frozen: changing them changes every
// seeded artifact.
constexpr uint64_t kStreamInit = 0x11;
constexpr uint64_t kStreamShuffle = 0x12;
constexpr uint64_t kStreamTrainNoise = 0x13;
constexpr uint64_t kStreamEval = 0x21;

} // namespace

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) throw InputError("learning_rate must be positive");
    if (weight_decay < 0.0) throw InputError("weight_decay must be nonnegative");
    if (batch_size == 0) throw InputError("batch_size must be >= 1");
    if (hidden_dim == 0 || num_hidden == 0) throw InputError("hidden_dim/num_hidden must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw InputError("dropout must be in [0,1)");
    if (regularization_factor < 0.0) throw InputError("regularization_factor must be nonnegative");
    if (prior_scale <= 0.0) throw InputError("prior_scale must be positive");
    if (k_mc_train < 1) throw InputError("k_mc_train must be >= 1");
}

double model_loss_grad(const TrainedModel& model, const nn::Vec& x, int label, int k_mc,
                       Rng& noise, ModelGrads& grads, bool train_mode) {
    nn::FeCache cache;
    const nn::Vec psi = nn::fe_forward_cached(model.fe, x, train_mode, noise, cache);
    const vbll::GaussianLogitPosterior q = vbll::head_posterior(model.head, psi);
    vbll::ElboGrad eg = vbll::elbo_loss_grad(q, label, k_mc, model.head.kl_weight,
                                             model.head.prior_scale, noise);
    const nn::Vec dpsi = vbll::head_backward(model.head, psi, eg.dmu, eg.dlogvar, grads.head);
    nn::fe_backward(model.fe, cache, dpsi, grads.fe);
    return eg.loss;
}

nn::Vec flatten_params(const TrainedModel& model) {
    nn::Vec flat;
    flat.reserve(model.fe.param_count() + model.head.param_count());
    model.fe.append_to(flat);
    model.head.append_to(flat);
    return flat;
}

void unflatten_params(TrainedModel& model, const nn::Vec& flat) {
    size_t off = model.fe.read_from(flat, 0);
    off = model.head.read_from(flat, off);
    if (off != flat.size()) throw ShapeError("unflatten_params: size mismatch");
}

TrainedModel train(const TrainConfig& config, const data::Dataset& dataset, const Rng& master,
                   TrainStats* stats) {
    config.validate();
    if (dataset.n == 0) throw InputError("train: empty dataset");
    if (!dataset.labeled()) throw InputError("train: dataset has no labels");
    if (dataset.n < config.batch_size) throw InputError("train: need n >= batch_size");

    int max_label = 0;
    for (int y : dataset.labels) {
        if (y < 0) throw InputError("train: negative label");
        max_label = std::max(max_label, y);
    }
    const size_t num_classes = static_cast<size_t>(max_label) + 1;
    if (num_classes < 2) throw InputError("train: need at least two classes");

    TrainedModel model;
    model.num_classes = num_classes;
    model.input_dim = dataset.dim;
    model.train_size = dataset.n;
    model.config = config;
    model.stats = dataset.stats;

    const double kl_weight = config.regularization_factor / static_cast<double>(dataset.n);

    Rng init_rng = master.child(kStreamInit);
    model.fe = nn::init_feature_extractor(dataset.dim, config.hidden_dim, config.num_hidden,
                                          config.dropout, /*skip_connections=*/true, init_rng);
    model.head = vbll::init_head(config.hidden_dim, num_classes, config.prior_scale, kl_weight,
                                 init_rng);

    nn::Vec flat = flatten_params(model);
    nn::OptimizerState opt = nn::make_optimizer(flat.size(), config.learning_rate,
                                                config.weight_decay);
    Rng noise = master.child(kStreamTrainNoise);

    std::vector<size_t> order(dataset.n);
    std::iota(order.begin(), order.end(), 0);

    if (stats) *stats = TrainStats{};

    for (size_t epoch = 0; epoch < config.epochs; ++epoch) {
        Rng shuffle_rng = master.child(kStreamShuffle, epoch);
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        size_t steps = 0;
        for (size_t start = 0; start < dataset.n; start += config.batch_size) {
            const size_t end = std::min(start + config.batch_size, dataset.n);
            ModelGrads grads{nn::zeros_like(model.fe), vbll::zeros_like(model.head)};
            double batch_loss = 0.0;
            for (size_t b = start; b < end; ++b) {
                const size_t i = order[b];
                batch_loss += model_loss_grad(model, dataset.row(i), dataset.labels[i],
                                              config.k_mc_train, noise, grads, /*train_mode=*/true);
            }
            const double scale = 1.0 / static_cast<double>(end - start);
            batch_loss *= scale;

            nn::Vec grad_flat;
            grad_flat.reserve(flat.size());
            grads.fe.append_to(grad_flat);
            grads.head.append_to(grad_flat);
            for (auto& g : grad_flat) g *= scale;

            nn::adamw_step(flat, grad_flat, opt);
            unflatten_params(model, flat);

            epoch_loss += batch_loss;
            ++steps;
            if (stats) stats->batch_loss.push_back(batch_loss);
        }
        if (stats) {
            stats->epoch_loss.push_back(epoch_loss / static_cast<double>(steps));
            stats->steps_per_epoch.push_back(steps);
        }
    }
    return model;
}

vbll::GaussianLogitPosterior posterior_at(const TrainedModel& model, const nn::Vec& x) {
    // Inference mode: dropout inactive, no stream consumption.
    Rng unused(0);
    const nn::Vec psi = nn::fe_forward(model.fe, x, /*train_mode=*/false, unused);
    return vbll::head_posterior(model.head, psi);
}

double evaluate(const TrainedModel& model, const data::Dataset& dataset, int k,
                const Rng& master, int threads) {
    if (dataset.n == 0) throw InputError("evaluate: empty dataset");
    if (!dataset.labeled()) throw InputError("evaluate: dataset has no labels");

    const auto count_shard = [&](size_t begin, size_t end) {
        size_t errors = 0;
        for (size_t i = begin; i < end; ++i) {
            Rng ex_rng = master.child(kStreamEval, i);
            const auto q = posterior_at(model, dataset.row(i));
            if (vbll::mean_predict(q, k, ex_rng) != dataset.labels[i]) ++errors;
        }
        return errors;
    };

    size_t total_errors = 0;
    if (threads <= 1) {
        total_errors = count_shard(0, dataset.n);
    } else {
        const size_t nt = static_cast<size_t>(threads);
        std::vector<size_t> partial(nt, 0);
        std::vector<std::thread> pool;
        const size_t chunk = (dataset.n + nt - 1) / nt;
        for (size_t t = 0; t < nt; ++t) {
            const size_t begin = std::min(t * chunk, dataset.n);
            const size_t end = std::min(begin + chunk, dataset.n);
            pool.emplace_back([&, t, begin, end] { partial[t] = count_shard(begin, end); });
        }
        for (auto& th : pool) th.join();
        total_errors = std::accumulate(partial.begin(), partial.end(), size_t{0});
    }
    return static_cast<double>(total_errors) / static_cast<double>(dataset.n);
}

// --- persistence ------------------------------------------------------------

namespace {

constexpr int kModelFormatVersion = 1;

json matrix_to_json(const nn::Matrix& m) {
    json rows = json::array();
    for (size_t r = 0; r < m.rows; ++r) {
        json row = json::array();
        for (size_t c = 0; c < m.cols; ++c) row.push_back(m.at(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

nn::Matrix matrix_from_json(const json& j) {
    const size_t rows = j.size();
    const size_t cols = rows > 0 ? j[0].size() : 0;
    nn::Matrix m(rows, cols);
    for (size_t r = 0; r < rows; ++r) {
        if (j[r].size() != cols) throw IoError("model artifact: ragged matrix");
        for (size_t c = 0; c < cols; ++c) m.at(r, c) = j[r][c].get<double>();
    }
    return m;
}

json config_to_json(const TrainConfig& c) {
    return json{{"learning_rate", c.learning_rate},
                {"weight_decay", c.weight_decay},
                {"batch_size", c.batch_size},
                {"epochs", c.epochs},
                {"hidden_dim", c.hidden_dim},
                {"num_hidden", c.num_hidden},
                {"dropout", c.dropout},
                {"regularization_factor", c.regularization_factor},
                {"prior_scale", c.prior_scale},
                {"wishart_scale", c.wishart_scale},
                {"k_mc_train", c.k_mc_train},
                {"seed", c.seed}};
}

TrainConfig config_from_json(const json& j) {
    TrainConfig c;
    c.learning_rate = j.at("learning_rate").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.batch_size = j.at("batch_size").get<size_t>();
    c.epochs = j.at("epochs").get<size_t>();
    c.hidden_dim = j.at("hidden_dim").get<size_t>();
    c.num_hidden = j.at("num_hidden").get<size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.regularization_factor = j.at("regularization_factor").get<double>();
    c.prior_scale = j.at("prior_scale").get<double>();
    c.wishart_scale = j.at("wishart_scale").get<double>();
    c.k_mc_train = j.at("k_mc_train").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

void check_finite(const nn::Vec& v, const char* what) {
    for (double x : v) {
        if (!std::isfinite(x)) throw NumericError(std::string("non-finite value in ") + what);
    }
}

} // namespace

std::string model_to_json(const TrainedModel& model) {
    check_finite(model.fe.layers.empty() ? nn::Vec{} : flatten_params(model), "model parameters");

    json fe;
    fe["hidden_dim"] = model.fe.hidden_dim;
    fe["num_hidden"] = model.fe.num_hidden;
    fe["dropout_rate"] = model.fe.dropout_rate;
    fe["skip_connections"] = model.fe.skip_connections;
    json layers = json::array();
    for (const auto& l : model.fe.layers) {
        layers.push_back(json{{"w", matrix_to_json(l.w)}, {"b", l.b}});
    }
    fe["layers"] = std::move(layers);

    json head;
    head["w_mu"] = matrix_to_json(model.head.w_mu);
    head["b_mu"] = model.head.b_mu;
    head["w_logvar"] = matrix_to_json(model.head.w_logvar);
    head["b_logvar"] = model.head.b_logvar;
    head["prior_scale"] = model.head.prior_scale;
    head["kl_weight"] = model.head.kl_weight;

    json j;
    j["format_version"] = kModelFormatVersion;
    j["kind"] = "d3m.model";
    j["config"] = config_to_json(model.config);
    j["num_classes"] = model.num_classes;
    j["input_dim"] = model.input_dim;
    j["train_size"] = model.train_size;
    j["fe"] = std::move(fe);
    j["head"] = std::move(head);
    if (!model.stats.empty()) {
        j["feature_stats"] = json{{"impute", model.stats.impute},
                                  {"mean", model.stats.mean},
                                  {"stddev", model.stats.stddev}};
    }
    return j.dump(2) + "\n";
}

TrainedModel model_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("model artifact: corrupt file: ") + e.what());
    }
    if (!j.contains("format_version") || !j.contains("kind") || j["kind"] != "d3m.model") {
        throw IoError("model artifact: not a d3m model file");
    }
    if (j["format_version"].get<int>() != kModelFormatVersion) {
        throw IoError("model artifact: unsupported format_version " +
                      j["format_version"].dump());
    }
    try {
        TrainedModel m;
        m.config = config_from_json(j.at("config"));
        m.num_classes = j.at("num_classes").get<size_t>();
        m.input_dim = j.at("input_dim").get<size_t>();
        m.train_size = j.at("train_size").get<size_t>();

        const json& fe = j.at("fe");
        m.fe.hidden_dim = fe.at("hidden_dim").get<size_t>();
        m.fe.num_hidden = fe.at("num_hidden").get<size_t>();
        m.fe.dropout_rate = fe.at("dropout_rate").get<double>();
        m.fe.skip_connections = fe.at("skip_connections").get<bool>();
        for (const auto& l : fe.at("layers")) {
            nn::AffineParams layer;
            layer.w = matrix_from_json(l.at("w"));
            layer.b = l.at("b").get<nn::Vec>();
            m.fe.layers.push_back(std::move(layer));
        }

        const json& head = j.at("head");
        m.head.w_mu = matrix_from_json(head.at("w_mu"));
        m.head.b_mu = head.at("b_mu").get<nn::Vec>();
        m.head.w_logvar = matrix_from_json(head.at("w_logvar"));
        m.head.b_logvar = head.at("b_logvar").get<nn::Vec>();
        m.head.prior_scale = head.at("prior_scale").get<double>();
        // lambda is a derived quantity; recompute rather than trust the file
        m.head.kl_weight = m.config.regularization_factor / static_cast<double>(m.train_size);
        const double stored = head.at("kl_weight").get<double>();
        if (std::abs(stored - m.head.kl_weight) > 1e-9 * std::max(1.0, m.head.kl_weight)) {
            throw IoError("model artifact: kl_weight inconsistent with regularization_factor / n");
        }

        if (j.contains("feature_stats")) {
            m.stats.impute = j["feature_stats"].at("impute").get<nn::Vec>();
            m.stats.mean = j["feature_stats"].at("mean").get<nn::Vec>();
            m.stats.stddev = j["feature_stats"].at("stddev").get<nn::Vec>();
        }
        return m;
    } catch (const json::exception& e) {
        throw IoError(std::string("model artifact: corrupt file: ") + e.what());
    }
}

void save_model(const TrainedModel& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("save_model: cannot open " + path + " for writing");
    out << model_to_json(model);
}

TrainedModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("load_model: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return model_from_json(text);
}

std::string model_fingerprint(const TrainedModel& model) {
    return to_hex(fnv1a64(model_to_json(model)));
}

} // namespace d3m
