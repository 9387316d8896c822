#include "d3m/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "d3m/errors.hpp"
#include "d3m/hash.hpp"
#include "d3m/log.hpp"

namespace d3m::data {

Vec Dataset::row(size_t i) const {
    return Vec(features.begin() + static_cast<long>(i * dim),
               features.begin() + static_cast<long>((i + 1) * dim));
}

void Dataset::push_row(const Vec& x, std::optional<int> label) {
    if (n == 0 && dim == 0) dim = x.size();
    if (x.size() != dim) throw ShapeError("Dataset::push_row: row width mismatch");
    features.insert(features.end(), x.begin(), x.end());
    if (label.has_value()) labels.push_back(*label);
    ++n;
}

Vec UnlabeledBatch::row(size_t i) const {
    return Vec(features.begin() + static_cast<long>(i * dim),
               features.begin() + static_cast<long>((i + 1) * dim));
}

void UnlabeledBatch::push_row(const Vec& x) {
    if (n == 0 && dim == 0) dim = x.size();
    if (x.size() != dim) throw ShapeError("UnlabeledBatch::push_row: row width mismatch");
    features.insert(features.end(), x.begin(), x.end());
    ++n;
}

UnlabeledBatch strip_labels(const Dataset& d) {
    UnlabeledBatch b;
    b.n = d.n;
    b.dim = d.dim;
    b.features = d.features;
    return b;
}

// --- synthetic blobs ---------------------------------------------------------

namespace {

// One blob sample; consumes one uniform (cluster) and d normals.
void draw_blob_point(size_t d, double separation, Rng& rng, Vec& x, int& label) {
    label = rng.uniform() < 0.5 ? 0 : 1;
    const double center = (label == 1 ? 0.5 : -0.5) * separation;
    x.resize(d);
    for (size_t j = 0; j < d; ++j) x[j] = rng.normal();
    x[0] += center;
}

} // namespace

Dataset gen_blobs(size_t n, size_t d, double separation, Rng& rng) {
    if (n == 0 || d == 0) throw InputError("gen_blobs: n and d must be >= 1");
    Dataset out;
    out.dim = d;
    out.provenance = "blobs";
    Vec x;
    int label = 0;
    for (size_t i = 0; i < n; ++i) {
        draw_blob_point(d, separation, rng, x, label);
        out.push_row(x, label);
    }
    return out;
}

int ground_truth_label(const BlobSpec& spec, const Vec& x) {
    return (x[0] > 0.0 && x[0] < spec.slab_end) ? 1 : 0;
}

ShiftBatch gen_shift(const BlobSpec& base, ShiftKind kind, double magnitude, size_t m, Rng& rng) {
    if (magnitude < 0.0) throw InputError("gen_shift: magnitude must be >= 0");
    if (m == 0) throw InputError("gen_shift: m must be >= 1");

    // Pass 1 draws the ID batch with exactly the same stream consumption as
    // gen_blobs, so magnitude = 0 reproduces it sample for sample.
    std::vector<Vec> points(m);
    std::vector<int> clusters(m);
    for (size_t i = 0; i < m; ++i) draw_blob_point(base.dim, base.separation, rng, points[i], clusters[i]);

    // Pass 2 applies the shift.
    for (size_t i = 0; i < m; ++i) {
        switch (kind) {
            case ShiftKind::deteriorating:
                points[i][0] += magnitude;
                break;
            case ShiftKind::non_deteriorating: {
                const bool pushed = rng.uniform() < 0.5;
                if (pushed) {
                    const double dir = clusters[i] == 1 ? 1.0 : -1.0;
                    points[i][0] += 0.5 * magnitude * dir;
                }
                break;
            }
        }
    }

    ShiftBatch out;
    out.inputs.dim = base.dim;
    for (size_t i = 0; i < m; ++i) {
        out.inputs.push_row(points[i]);
        out.hidden_labels.push_back(ground_truth_label(base, points[i]));
    }
    return out;
}

// --- splits and preprocessing --------------------------------------------------

SplitDataset split_id(const Dataset& id, double train_frac, double heldout_frac, Rng& rng) {
    if (id.n == 0) throw InputError("split_id: empty dataset");
    if (train_frac <= 0.0 || heldout_frac < 0.0 || train_frac + heldout_frac >= 1.0) {
        throw InputError("split_id: fractions must satisfy 0 < train, 0 <= heldout, train + heldout < 1");
    }
    std::vector<size_t> order(id.n);
    std::iota(order.begin(), order.end(), 0);
    Rng r = rng;
    r.shuffle(order);

    const size_t n_train = static_cast<size_t>(std::llround(train_frac * static_cast<double>(id.n)));
    const size_t n_heldout = static_cast<size_t>(std::llround(heldout_frac * static_cast<double>(id.n)));

    SplitDataset s;
    s.train.dim = s.heldout.dim = s.validation.dim = id.dim;
    s.train.provenance = id.provenance + "/train";
    s.heldout.provenance = id.provenance + "/heldout";
    s.validation.provenance = id.provenance + "/validation";
    for (size_t i = 0; i < id.n; ++i) {
        const size_t src = order[i];
        Dataset& dst = i < n_train ? s.train : (i < n_train + n_heldout ? s.heldout : s.validation);
        if (id.labeled()) {
            dst.push_row(id.row(src), id.labels[src]);
        } else {
            dst.push_row(id.row(src));
        }
    }
    return s;
}

FeatureStats compute_feature_stats(const Dataset& train, const std::vector<size_t>& categorical_cols) {
    if (train.n == 0) throw InputError("compute_feature_stats: empty dataset");
    FeatureStats st;
    st.impute.assign(train.dim, 0.0);
    st.mean.assign(train.dim, 0.0);
    st.stddev.assign(train.dim, 1.0);

    for (size_t c = 0; c < train.dim; ++c) {
        const bool categorical =
            std::find(categorical_cols.begin(), categorical_cols.end(), c) != categorical_cols.end();
        // imputation value from non-missing entries
        if (categorical) {
            std::map<double, size_t> counts;
            for (size_t i = 0; i < train.n; ++i) {
                const double v = train.features[i * train.dim + c];
                if (!std::isnan(v)) counts[v]++;
            }
            double mode = 0.0;
            size_t best = 0;
            for (const auto& [v, cnt] : counts) {
                if (cnt > best) {
                    best = cnt;
                    mode = v;
                }
            }
            st.impute[c] = mode;
        } else {
            double sum = 0.0;
            size_t cnt = 0;
            for (size_t i = 0; i < train.n; ++i) {
                const double v = train.features[i * train.dim + c];
                if (!std::isnan(v)) {
                    sum += v;
                    ++cnt;
                }
            }
            st.impute[c] = cnt > 0 ? sum / static_cast<double>(cnt) : 0.0;
        }
        // standardization moments on the imputed column
        double sum = 0.0;
        for (size_t i = 0; i < train.n; ++i) {
            double v = train.features[i * train.dim + c];
            if (std::isnan(v)) v = st.impute[c];
            sum += v;
        }
        const double mean = sum / static_cast<double>(train.n);
        double ss = 0.0;
        for (size_t i = 0; i < train.n; ++i) {
            double v = train.features[i * train.dim + c];
            if (std::isnan(v)) v = st.impute[c];
            ss += (v - mean) * (v - mean);
        }
        double sd = std::sqrt(ss / static_cast<double>(train.n));
        if (sd < 1e-12) sd = 1.0; // constant column
        st.mean[c] = mean;
        st.stddev[c] = sd;
    }
    return st;
}

void apply_feature_stats(Vec& row, const FeatureStats& stats) {
    for (size_t c = 0; c < row.size(); ++c) {
        if (std::isnan(row[c])) row[c] = stats.impute[c];
        row[c] = (row[c] - stats.mean[c]) / stats.stddev[c];
    }
}

void apply_feature_stats(Dataset& d, const FeatureStats& stats) {
    if (stats.mean.size() != d.dim) throw ShapeError("apply_feature_stats: column count mismatch");
    for (size_t i = 0; i < d.n; ++i) {
        for (size_t c = 0; c < d.dim; ++c) {
            double& v = d.features[i * d.dim + c];
            if (std::isnan(v)) v = stats.impute[c];
            v = (v - stats.mean[c]) / stats.stddev[c];
        }
    }
    d.stats = stats;
}

void apply_feature_stats(UnlabeledBatch& b, const FeatureStats& stats) {
    if (stats.mean.size() != b.dim) throw ShapeError("apply_feature_stats: column count mismatch");
    for (size_t i = 0; i < b.n; ++i) {
        for (size_t c = 0; c < b.dim; ++c) {
            double& v = b.features[i * b.dim + c];
            if (std::isnan(v)) v = stats.impute[c];
            v = (v - stats.mean[c]) / stats.stddev[c];
        }
    }
}

// --- CSV ------------------------------------------------------------------------

namespace {

bool parse_field(const std::string& field, double& out) {
    std::string t = field;
    t.erase(0, t.find_first_not_of(" \t\r"));
    t.erase(t.find_last_not_of(" \t\r") + 1);
    if (t == "?") {
        out = std::nan("");
        return true;
    }
    if (t.empty()) return false;
    char* end = nullptr;
    out = std::strtod(t.c_str(), &end);
    return end == t.c_str() + t.size();
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    std::stringstream ss(line);
    while (std::getline(ss, cur, ',')) fields.push_back(cur);
    return fields;
}

} // namespace

Dataset load_csv(const std::string& path, bool has_labels) {
    std::ifstream in(path);
    if (!in) throw IoError("load_csv: cannot open " + path);
    Dataset out;
    out.provenance = path;
    std::string line;
    size_t lineno = 0;
    size_t dropped = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto fields = split_csv_line(line);
        Vec row;
        row.reserve(fields.size());
        bool ok = true;
        for (const auto& f : fields) {
            double v;
            if (!parse_field(f, v)) {
                ok = false;
                break;
            }
            row.push_back(v);
        }
        const size_t want = out.dim == 0 ? row.size() : out.dim + (has_labels ? 1 : 0);
        if (!ok || row.size() != want || row.size() < (has_labels ? 2u : 1u)) {
            ++dropped;
            log::warn("load_csv: dropping malformed line " + std::to_string(lineno) + " of " + path);
            continue;
        }
        if (has_labels) {
            const double lv = row.back();
            row.pop_back();
            if (std::isnan(lv)) {
                ++dropped;
                log::warn("load_csv: dropping line " + std::to_string(lineno) + " with missing label");
                continue;
            }
            out.push_row(row, static_cast<int>(std::llround(lv)));
        } else {
            out.push_row(row);
        }
    }
    if (dropped > 0) log::warn("load_csv: dropped " + std::to_string(dropped) + " rows from " + path);
    if (out.n == 0) throw IoError("load_csv: no usable rows in " + path);
    return out;
}

void export_csv(const Dataset& d, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("export_csv: cannot open " + path + " for writing");
    char buf[64];
    for (size_t i = 0; i < d.n; ++i) {
        for (size_t c = 0; c < d.dim; ++c) {
            const double v = d.features[i * d.dim + c];
            if (std::isnan(v)) {
                out << '?';
            } else {
                std::snprintf(buf, sizeof(buf), "%.17g", v);
                out << buf;
            }
            if (c + 1 < d.dim || d.labeled()) out << ',';
        }
        if (d.labeled()) out << d.labels[i];
        out << '\n';
    }
}

// --- UCI Heart Disease ------------------------------------------------------------

namespace {

// Processed UCI files carry 14 attributes; we keep the first nine and the
// final diagnosis. Categorical columns among the nine: sex, chest pain type,
// fasting blood sugar, resting ECG, exercise-induced angina.
constexpr size_t kUciRawFields = 14;
constexpr size_t kUciKeptFeatures = 9;
const std::vector<size_t> kUciCategoricalCols = {1, 2, 5, 6, 8};

size_t append_uci_file(const std::string& path, Dataset& out) {
    std::ifstream in(path);
    if (!in) throw IoError("load_uci_heart: cannot open " + path);
    std::string line;
    size_t lineno = 0;
    size_t dropped = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != kUciRawFields) {
            ++dropped;
            log::warn("load_uci_heart: dropping line " + std::to_string(lineno) + " of " + path +
                      " (expected 14 fields, got " + std::to_string(fields.size()) + ")");
            continue;
        }
        Vec row(kUciKeptFeatures);
        bool ok = true;
        for (size_t c = 0; c < kUciKeptFeatures && ok; ++c) ok = parse_field(fields[c], row[c]);
        double diag = 0.0;
        ok = ok && parse_field(fields[13], diag) && !std::isnan(diag);
        if (!ok) {
            ++dropped;
            log::warn("load_uci_heart: dropping malformed line " + std::to_string(lineno) + " of " + path);
            continue;
        }
        out.push_row(row, diag > 0.0 ? 1 : 0);
    }
    return dropped;
}

} // namespace

UciHeartData load_uci_heart(const UciHeartPaths& paths, uint64_t split_seed) {
    Dataset id;
    id.dim = kUciKeptFeatures;
    id.provenance = "uci-heart/id";
    Dataset ood;
    ood.dim = kUciKeptFeatures;
    ood.provenance = "uci-heart/ood";

    size_t dropped = 0;
    dropped += append_uci_file(paths.cleveland, id);
    dropped += append_uci_file(paths.hungarian, id);
    dropped += append_uci_file(paths.switzerland, ood);
    dropped += append_uci_file(paths.va, ood);

    Rng split_rng(split_seed);
    UciHeartData out;
    out.id = split_id(id, 0.6, 0.2, split_rng);
    out.ood = std::move(ood);
    out.dropped_rows = dropped;

    const FeatureStats stats = compute_feature_stats(out.id.train, kUciCategoricalCols);
    apply_feature_stats(out.id.train, stats);
    apply_feature_stats(out.id.heldout, stats);
    apply_feature_stats(out.id.validation, stats);
    apply_feature_stats(out.ood, stats);
    return out;
}

uint64_t dataset_hash(const Dataset& d) {
    uint64_t h = fnv1a64(d.features.data(), d.features.size() * sizeof(double));
    if (d.labeled()) h = fnv1a64(d.labels.data(), d.labels.size() * sizeof(int), h);
    return h;
}

} // namespace d3m::data
