#include "d3m/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "d3m/errors.hpp"
#include "d3m/monitor.hpp"

namespace d3m::oracle {

using json = nlohmann::ordered_json;

namespace {

constexpr size_t kMaxDomain = 12;
constexpr size_t kMaxHypotheses = 4096;
constexpr double kTol = 1e-12;

void check_distribution(const std::vector<double>& dist, size_t domain_size, const char* name) {
    if (dist.size() != domain_size) {
        throw InputError(std::string(name) + ": length differs from domain size");
    }
    double sum = 0.0;
    for (double v : dist) {
        if (v < 0.0) throw InputError(std::string(name) + ": negative mass");
        sum += v;
    }
    if (std::abs(sum - 1.0) > kTol) {
        throw InputError(std::string(name) + ": masses sum to " + std::to_string(sum));
    }
}

// m draws from a discrete marginal, returned as per-point counts.
std::vector<uint32_t> sample_counts(const std::vector<double>& dist, size_t m, Rng& rng) {
    std::vector<double> cum(dist.size());
    double acc = 0.0;
    for (size_t x = 0; x < dist.size(); ++x) {
        acc += dist[x];
        cum[x] = acc;
    }
    std::vector<uint32_t> counts(dist.size(), 0);
    for (size_t i = 0; i < m; ++i) {
        const double u = rng.uniform() * acc;
        size_t x = 0;
        while (x + 1 < cum.size() && u >= cum[x]) ++x;
        counts[x]++;
    }
    return counts;
}

// Exact max over H_p of the empirical disagreement with f on a sample
// described by per-point counts.
double max_empirical_disagreement(const DiscreteInstance& inst, const std::vector<size_t>& hp,
                                  const std::vector<uint32_t>& counts, size_t m) {
    const Hypothesis f = inst.f();
    uint32_t worst = 0;
    for (size_t idx : hp) {
        const Hypothesis h = inst.hypotheses[idx];
        uint32_t dis = 0;
        for (size_t x = 0; x < inst.domain_size; ++x) {
            if (apply(h, x) != apply(f, x)) dis += counts[x];
        }
        worst = std::max(worst, dis);
    }
    return static_cast<double>(worst) / static_cast<double>(m);
}

} // namespace

void DiscreteInstance::validate() const {
    if (domain_size == 0 || domain_size > kMaxDomain) {
        throw InputError("instance: domain size must be in [1, " + std::to_string(kMaxDomain) + "]");
    }
    check_distribution(p, domain_size, "instance P");
    check_distribution(q, domain_size, "instance Q");
    if (hypotheses.empty() || hypotheses.size() > kMaxHypotheses) {
        throw InputError("instance: hypothesis count must be in [1, " +
                         std::to_string(kMaxHypotheses) + "]");
    }
    if (f_index >= hypotheses.size()) throw InputError("instance: f_index out of range");
    const Hypothesis mask_limit = domain_size >= 32 ? ~0u : ((1u << domain_size) - 1u);
    for (Hypothesis h : hypotheses) {
        if ((h & ~mask_limit) != 0) throw InputError("instance: hypothesis uses points outside X");
    }
    if ((g & ~mask_limit) != 0 || (g_prime & ~mask_limit) != 0) {
        throw InputError("instance: labeling uses points outside X");
    }
}

double population_err(Hypothesis h, Hypothesis labeler, const std::vector<double>& dist) {
    double err = 0.0;
    for (size_t x = 0; x < dist.size(); ++x) {
        if (apply(h, x) != apply(labeler, x)) err += dist[x];
    }
    return err;
}

std::vector<size_t> build_Hp(const DiscreteInstance& inst, double eps) {
    if (eps < 0.0 || eps > 1.0) throw InputError("build_Hp: eps must be in [0,1]");
    std::vector<size_t> hp;
    for (size_t i = 0; i < inst.hypotheses.size(); ++i) {
        if (population_err(inst.hypotheses[i], inst.g, inst.p) <= eps + kTol) hp.push_back(i);
    }
    const bool f_in = std::find(hp.begin(), hp.end(), inst.f_index) != hp.end();
    if (!f_in) {
        throw IntegrityError("build_Hp: base classifier does not meet the error tolerance eps = " +
                             std::to_string(eps));
    }
    return hp;
}

std::vector<double> idealized_calibrate(const DiscreteInstance& inst,
                                        const std::vector<size_t>& hp, size_t rounds, size_t m,
                                        Rng& rng) {
    if (hp.empty()) throw InputError("idealized_calibrate: empty H_p");
    if (rounds == 0 || m == 0) throw InputError("idealized_calibrate: rounds and m must be >= 1");
    std::vector<double> phi;
    phi.reserve(rounds);
    for (size_t t = 0; t < rounds; ++t) {
        const auto counts = sample_counts(inst.p, m, rng);
        phi.push_back(max_empirical_disagreement(inst, hp, counts, m));
    }
    std::sort(phi.begin(), phi.end());
    return phi;
}

bool idealized_deploy(const DiscreteInstance& inst, const std::vector<size_t>& hp,
                      const std::vector<double>& phi, size_t m, double alpha, Rng& rng) {
    if (hp.empty()) throw InputError("idealized_deploy: empty H_p");
    if (m == 0) throw InputError("idealized_deploy: m must be >= 1");
    const auto counts = sample_counts(inst.q, m, rng);
    const double stat = max_empirical_disagreement(inst, hp, counts, m);
    return stat > quantile(phi, 1.0 - alpha);
}

const char* regime_name(Regime r) {
    switch (r) {
        case Regime::non_deteriorating: return "non_deteriorating";
        case Regime::regime1: return "regime1";
        case Regime::regime2: return "regime2";
    }
    return "?";
}

TheoryReport compute_theory(const DiscreteInstance& inst, double eps) {
    inst.validate();
    const auto hp = build_Hp(inst, eps);
    const Hypothesis f = inst.f();

    TheoryReport r;
    r.eps_f = population_err(f, inst.g, inst.p);
    r.hp_size = hp.size();
    r.log2_hp = std::log2(static_cast<double>(hp.size()));

    double min_err_u = 2.0;
    for (size_t idx : hp) {
        const Hypothesis h = inst.hypotheses[idx];
        const double ep = population_err(h, f, inst.p);
        const double eq = population_err(h, f, inst.q);
        r.eps_p = std::max(r.eps_p, ep);
        r.eps_q = std::max(r.eps_q, eq);
        r.xi = std::max(r.xi, eq - ep);
        // err(h; U) with U = (P_f + Q_{1-f}) / 2; on a binary domain
        // err(h; Q_{1-f}) = 1 - err(h; Q_f).
        min_err_u = std::min(min_err_u, 0.5 * (ep + (1.0 - eq)));
    }

    double tv = 0.0;
    double bayes_u = 0.0; // err(bayes; U) = (1/2) sum_x min(P(x), Q(x))
    for (size_t x = 0; x < inst.domain_size; ++x) {
        tv += std::abs(inst.p[x] - inst.q[x]);
        bayes_u += std::min(inst.p[x], inst.q[x]);
    }
    r.tv = 0.5 * tv;
    r.eta = min_err_u - 0.5 * bayes_u;

    if (r.xi <= kTol) {
        r.regime = Regime::non_deteriorating;
    } else if (r.eps_q > r.eps_p + kTol) {
        r.regime = Regime::regime1;
    } else {
        r.regime = Regime::regime2;
    }
    return r;
}

bool dpdd_holds(const DiscreteInstance& inst, double eps_f) {
    if (population_err(inst.f(), inst.g, inst.p) > eps_f + kTol) return false;
    for (Hypothesis h : inst.hypotheses) {
        if (population_err(h, inst.g, inst.p) > eps_f + kTol) continue;
        if (population_err(h, inst.f(), inst.q) > population_err(h, inst.f(), inst.p) + kTol) {
            return true;
        }
    }
    return false;
}

bool pdd_holds(const DiscreteInstance& inst) {
    return population_err(inst.f(), inst.g_prime, inst.q) >
           population_err(inst.f(), inst.g, inst.p) + kTol;
}

LemmaReport check_equivalence_lemma(const DiscreteInstance& inst, double eps_f, double kappa) {
    inst.validate();
    if (inst.g != inst.g_prime) {
        throw InputError("equivalence lemma: requires identical ground truth (g = g')");
    }
    double tv = 0.0;
    for (size_t x = 0; x < inst.domain_size; ++x) tv += std::abs(inst.p[x] - inst.q[x]);
    tv *= 0.5;
    if (tv > kappa + kTol) {
        throw InputError("equivalence lemma: TV(P,Q) = " + std::to_string(tv) +
                         " exceeds kappa = " + std::to_string(kappa));
    }
    if (population_err(inst.f(), inst.g, inst.p) > eps_f + kTol) {
        throw InputError("equivalence lemma: err(f; P_g) exceeds eps_f");
    }

    const auto hp = build_Hp(inst, eps_f);
    LemmaReport rep;
    for (size_t idx : hp) {
        const Hypothesis h = inst.hypotheses[idx];
        const double gap =
            population_err(h, inst.f(), inst.q) - population_err(h, inst.f(), inst.p);
        rep.max_gap = std::max(rep.max_gap, gap);
    }
    rep.gap_condition = rep.max_gap >= 2.0 * (kappa + eps_f) - kTol;
    rep.pdd = pdd_holds(inst);
    rep.dpdd = dpdd_holds(inst, eps_f);
    rep.consistent = !rep.gap_condition || (rep.pdd == rep.dpdd);
    return rep;
}

ExperimentResult fpr_tpr_experiment(const DiscreteInstance& inst, double eps, size_t rounds,
                                    size_t m, double alpha, size_t trials, Rng& rng) {
    const auto hp = build_Hp(inst, eps);
    const auto phi = idealized_calibrate(inst, hp, rounds, m, rng);
    size_t flags = 0;
    for (size_t t = 0; t < trials; ++t) {
        if (idealized_deploy(inst, hp, phi, m, alpha, rng)) ++flags;
    }
    ExperimentResult res;
    res.flags = flags;
    res.trials = trials;
    res.estimate = static_cast<double>(flags) / static_cast<double>(trials);
    res.regime = compute_theory(inst, eps).regime;
    return res;
}

// --- instance generators ----------------------------------------------------------

namespace {

std::vector<double> dirichlet_uniform(size_t n, Rng& rng) {
    std::vector<double> w(n);
    double sum = 0.0;
    for (auto& v : w) {
        v = -std::log(1.0 - rng.uniform());
        sum += v;
    }
    for (auto& v : w) v /= sum;
    // renormalize exactly so validate()'s 1e-12 budget is never eaten by rounding
    double s2 = 0.0;
    for (double v : w) s2 += v;
    w.back() += 1.0 - s2;
    return w;
}

std::vector<Hypothesis> make_hypothesis_list(size_t domain_size, size_t max_hypotheses,
                                             Hypothesis g, Rng& rng) {
    const uint32_t full = 1u << domain_size;
    std::vector<Hypothesis> hyps;
    if (full <= max_hypotheses) {
        hyps.resize(full);
        for (uint32_t h = 0; h < full; ++h) hyps[h] = h;
    } else {
        std::set<Hypothesis> unique{g};
        while (unique.size() < max_hypotheses) {
            unique.insert(static_cast<Hypothesis>(rng.uniform_index(full)));
        }
        hyps.assign(unique.begin(), unique.end());
    }
    return hyps;
}

} // namespace

DiscreteInstance random_instance(Rng& rng, size_t domain_size, size_t max_hypotheses) {
    if (domain_size == 0 || domain_size > kMaxDomain) {
        throw InputError("random_instance: domain size must be in [1, 12]");
    }
    DiscreteInstance inst;
    inst.domain_size = domain_size;
    inst.p = dirichlet_uniform(domain_size, rng);
    inst.q = dirichlet_uniform(domain_size, rng);
    inst.g = static_cast<Hypothesis>(rng.uniform_index(1u << domain_size));
    inst.g_prime = inst.g;
    inst.hypotheses = make_hypothesis_list(domain_size, max_hypotheses, inst.g, rng);

    // Base classifier: best of a small random subset, so eps_f varies across
    // draws instead of collapsing to the zero-error g.
    const size_t probes = std::min<size_t>(inst.hypotheses.size(), 8);
    size_t best = rng.uniform_index(inst.hypotheses.size());
    double best_err = population_err(inst.hypotheses[best], inst.g, inst.p);
    for (size_t i = 1; i < probes; ++i) {
        const size_t cand = rng.uniform_index(inst.hypotheses.size());
        const double e = population_err(inst.hypotheses[cand], inst.g, inst.p);
        if (e < best_err) {
            best = cand;
            best_err = e;
        }
    }
    inst.f_index = best;
    inst.validate();
    return inst;
}

DiscreteInstance non_deteriorating_instance(Rng& rng, size_t domain_size, size_t max_hypotheses) {
    DiscreteInstance inst = random_instance(rng, domain_size, max_hypotheses);
    inst.q = inst.p;
    return inst;
}

DiscreteInstance regime1_instance() {
    DiscreteInstance inst;
    inst.domain_size = 4;
    inst.p = {0.45, 0.45, 0.05, 0.05};
    inst.q = {0.05, 0.05, 0.45, 0.45};
    inst.g = 0b1010; // labels points 1 and 3 positive
    inst.g_prime = inst.g;
    inst.hypotheses.resize(16);
    for (uint32_t h = 0; h < 16; ++h) inst.hypotheses[h] = h;
    inst.f_index = 0b0010; // g with point 3 flipped; eps_f = P(3) = 0.05
    inst.validate();
    return inst;
}

std::optional<DiscreteInstance> find_regime2_instance(Rng& rng, const Regime2Search& params) {
    for (size_t c = 0; c < params.max_candidates; ++c) {
        DiscreteInstance inst = random_instance(rng, params.domain_size, params.max_hypotheses);
        const double eps_f = population_err(inst.f(), inst.g, inst.p);
        TheoryReport th;
        try {
            th = compute_theory(inst, eps_f);
        } catch (const IntegrityError&) {
            continue;
        }
        if (th.regime != Regime::regime2) continue;
        if (th.xi < 0.02) continue; // demand visible D-PDD, not a numerical sliver

        // Screening simulation: the idealized flag rate must sit in the
        // alpha band on every repetition, under independent streams.
        const double sd = std::sqrt(params.alpha * (1.0 - params.alpha) /
                                    static_cast<double>(params.sim_trials));
        bool ok = true;
        for (uint64_t rep = 0; rep < params.verify_reps && ok; ++rep) {
            Rng sim = rng.child(0x52, c * 16 + rep);
            const auto hp = build_Hp(inst, eps_f);
            const auto phi = idealized_calibrate(inst, hp, params.rounds, params.m, sim);
            size_t flags = 0;
            for (size_t t = 0; t < params.sim_trials; ++t) {
                if (idealized_deploy(inst, hp, phi, params.m, params.alpha, sim)) ++flags;
            }
            const double rate = static_cast<double>(flags) / static_cast<double>(params.sim_trials);
            ok = std::abs(rate - params.alpha) <= params.tol_sds * sd;
        }
        if (ok) return inst;
    }
    return std::nullopt;
}

// --- serialization --------------------------------------------------------------------

namespace {

json labeling_to_json(Hypothesis h, size_t domain_size) {
    json arr = json::array();
    for (size_t x = 0; x < domain_size; ++x) arr.push_back(apply(h, x));
    return arr;
}

Hypothesis labeling_from_json(const json& arr) {
    Hypothesis h = 0;
    for (size_t x = 0; x < arr.size(); ++x) {
        const int v = arr[x].get<int>();
        if (v != 0 && v != 1) throw IoError("instance fixture: labels must be 0/1");
        if (v == 1) h |= (1u << x);
    }
    return h;
}

} // namespace

std::string instance_to_json(const DiscreteInstance& inst, std::optional<double> eps) {
    json j;
    j["kind"] = "d3m.instance";
    j["domain_size"] = inst.domain_size;
    j["p"] = inst.p;
    j["q"] = inst.q;
    j["g"] = labeling_to_json(inst.g, inst.domain_size);
    j["g_prime"] = labeling_to_json(inst.g_prime, inst.domain_size);
    json hyps = json::array();
    for (Hypothesis h : inst.hypotheses) hyps.push_back(labeling_to_json(h, inst.domain_size));
    j["hypotheses"] = std::move(hyps);
    j["f_index"] = inst.f_index;
    if (eps.has_value()) j["eps"] = *eps;
    return j.dump(2) + "\n";
}

std::pair<DiscreteInstance, double> instance_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("instance fixture: corrupt file: ") + e.what());
    }
    try {
        if (!j.contains("kind") || j["kind"] != "d3m.instance") {
            throw IoError("instance fixture: not a d3m instance file");
        }
        DiscreteInstance inst;
        inst.domain_size = j.at("domain_size").get<size_t>();
        inst.p = j.at("p").get<std::vector<double>>();
        inst.q = j.at("q").get<std::vector<double>>();
        inst.g = labeling_from_json(j.at("g"));
        inst.g_prime = labeling_from_json(j.at("g_prime"));
        for (const auto& h : j.at("hypotheses")) {
            inst.hypotheses.push_back(labeling_from_json(h));
        }
        inst.f_index = j.at("f_index").get<size_t>();
        inst.validate();
        const double eps = j.contains("eps") ? j["eps"].get<double>()
                                             : population_err(inst.f(), inst.g, inst.p);
        return {inst, eps};
    } catch (const json::exception& e) {
        throw IoError(std::string("instance fixture: corrupt file: ") + e.what());
    }
}

std::pair<DiscreteInstance, double> load_instance(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("load_instance: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return instance_from_json(text);
}

void save_instance(const DiscreteInstance& inst, std::optional<double> eps,
                   const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("save_instance: cannot open " + path + " for writing");
    out << instance_to_json(inst, eps);
}

std::string theory_report_to_json(const TheoryReport& report) {
    json j;
    j["eps_f"] = report.eps_f;
    j["eps_p"] = report.eps_p;
    j["eps_q"] = report.eps_q;
    j["xi"] = report.xi;
    j["eta"] = report.eta;
    j["tv"] = report.tv;
    j["hp_size"] = report.hp_size;
    j["log2_hp"] = report.log2_hp;
    j["regime"] = regime_name(report.regime);
    return j.dump();
}

} // namespace d3m::oracle
