#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "d3m/rng.hpp"

namespace d3m::oracle {

// Exact, enumerable test bed for the idealized algorithms and the theory
// quantities. Domains are tiny by design (|X| <= 12, |H| <= 4096) so every
// maximum and every population error is computed by exhaustive enumeration
// rather than by search.

using Hypothesis = uint32_t; // bitmask over domain points: h(x) = (mask >> x) & 1

inline int apply(Hypothesis h, size_t x) { return static_cast<int>((h >> x) & 1u); }

struct DiscreteInstance {
    size_t domain_size = 0;
    std::vector<double> p; // training marginal over X
    std::vector<double> q; // deployment marginal over X
    Hypothesis g = 0;       // ground truth during training
    Hypothesis g_prime = 0; // ground truth during deployment
    std::vector<Hypothesis> hypotheses; // H; contains f
    size_t f_index = 0;

    Hypothesis f() const { return hypotheses[f_index]; }
    void validate() const;
};

// Population error of h against a labeling function under a marginal:
// sum_x dist(x) * 1{ h(x) != labeler(x) }.
double population_err(Hypothesis h, Hypothesis labeler, const std::vector<double>& dist);

// H_p = { h in H : err(h; P_g) <= eps }, as indices into instance.hypotheses.
// The base classifier must qualify.
std::vector<size_t> build_Hp(const DiscreteInstance& inst, double eps);

// Algorithm "Calibrate": per round draw m points from P, pseudolabel with f,
// take the exact max over H_p of the empirical disagreement. Returns the
// sorted collection of T maxima.
std::vector<double> idealized_calibrate(const DiscreteInstance& inst,
                                        const std::vector<size_t>& hp, size_t rounds, size_t m,
                                        Rng& rng);

// Algorithm "Deploy": draw m points from Q, flag iff the exact empirical max
// disagreement strictly exceeds the (1 - alpha) quantile of phi. (The
// practical monitor flags on >=; the idealized test uses the strict > written
// in the algorithm. The two conventions are never mixed.)
bool idealized_deploy(const DiscreteInstance& inst, const std::vector<size_t>& hp,
                      const std::vector<double>& phi, size_t m, double alpha, Rng& rng);

enum class Regime { non_deteriorating, regime1, regime2 };

const char* regime_name(Regime r);

struct TheoryReport {
    double eps_f = 0.0; // err(f; P_g)
    double eps_p = 0.0; // max_{h in H_p} err(h; P_f)
    double eps_q = 0.0; // max_{h in H_p} err(h; Q_f)
    double xi = 0.0;    // max_{h in H_p} [err(h; Q_f) - err(h; P_f)]
    double eta = 0.0;   // min_{h in H_p} err(h; U) - err(bayes; U), U = (P_f + Q_{1-f})/2
    double tv = 0.0;    // total variation between P and Q
    size_t hp_size = 0;
    double log2_hp = 0.0; // reported as a VC-dimension upper bound only
    Regime regime = Regime::non_deteriorating;
};

// All quantities computed exactly by enumeration over H_p built at threshold
// eps. The identities xi = tv - 2*eta and the sandwich
// xi >= eps_q - eps_p >= xi - 2*eps_f hold when eps equals err(f; P_g).
TheoryReport compute_theory(const DiscreteInstance& inst, double eps);

// D-PDD as defined: some h with err(h; P_g) <= eps_f and err(f; P_g) <= eps_f
// disagrees with f more on Q than on P.
bool dpdd_holds(const DiscreteInstance& inst, double eps_f);

// PDD as defined: err(f; Q_{g'}) > err(f; P_g).
bool pdd_holds(const DiscreteInstance& inst);

struct LemmaReport {
    bool gap_condition = false; // exists h in H_p with gap >= 2 (kappa + eps_f)
    double max_gap = 0.0;
    bool pdd = false;
    bool dpdd = false;
    bool consistent = true; // gap_condition implies (pdd == dpdd)
};

// Equivalence-condition check. Preconditions: g == g', TV(P,Q) <= kappa, and
// err(f; P_g) <= eps_f; violations raise InputError.
LemmaReport check_equivalence_lemma(const DiscreteInstance& inst, double eps_f, double kappa);

struct ExperimentResult {
    double estimate = 0.0; // FPR when the instance is non-deteriorating, TPR otherwise
    Regime regime = Regime::non_deteriorating;
    size_t flags = 0;
    size_t trials = 0;
};

ExperimentResult fpr_tpr_experiment(const DiscreteInstance& inst, double eps, size_t rounds,
                                    size_t m, double alpha, size_t trials, Rng& rng);

// --- instance generators ------------------------------------------------------

// Random enumerable instance: Dirichlet(1) marginals, hypothesis list that
// always contains the ground truth, base classifier picked as the best of a
// small random subset (so eps_f varies across draws), g' = g.
DiscreteInstance random_instance(Rng& rng, size_t domain_size, size_t max_hypotheses);

// Same skeleton with Q = P, so xi = 0 exactly.
DiscreteInstance non_deteriorating_instance(Rng& rng, size_t domain_size, size_t max_hypotheses);

// Fixed four-point instance with a large eps_q - eps_p gap (H_p threshold 0.05).
DiscreteInstance regime1_instance();
inline constexpr double kRegime1Eps = 0.05;

struct Regime2Search {
    size_t max_candidates = 20000;
    size_t domain_size = 6;
    size_t max_hypotheses = 64;
    size_t rounds = 1000;    // T used in the screening simulation
    size_t m = 80;
    double alpha = 0.05;
    size_t sim_trials = 4000;
    double tol_sds = 1.5;    // acceptance band around alpha, in binomial SDs
    size_t verify_reps = 2;  // independent screening repetitions
};

// Searches random instances until one exhibits regime 2 (xi > 0, eps_q <=
// eps_p) and a simulated idealized flag rate within the tolerance band of
// alpha, twice with independent streams. Returns nullopt if the candidate
// budget is exhausted.
std::optional<DiscreteInstance> find_regime2_instance(Rng& rng, const Regime2Search& params);

// --- fixture / report serialization -------------------------------------------

std::string instance_to_json(const DiscreteInstance& inst, std::optional<double> eps = {});
// Returns the instance and the fixture's H_p threshold eps (err(f; P_g) when
// the file does not carry one).
std::pair<DiscreteInstance, double> instance_from_json(const std::string& text);
std::pair<DiscreteInstance, double> load_instance(const std::string& path);
void save_instance(const DiscreteInstance& inst, std::optional<double> eps,
                   const std::string& path);

std::string theory_report_to_json(const TheoryReport& report);

} // namespace d3m::oracle
