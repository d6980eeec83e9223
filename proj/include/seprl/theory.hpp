#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seprl/common.hpp"
#include "seprl/exbmdp.hpp"

namespace seprl {

/// One-step value gap G(s, a) between two dynamics under a fixed value
/// function: E_{s' ~ T_alt}[V(s')] - E_{s' ~ T}[V(s')].
struct GapTable {
    numvecvec g;  // [s][a]
};

GapTable gap_table(const transtable& trans, const transtable& trans_alt,
                   const numvec& values);

struct TheoryReport {
    std::string check;
    double lhs = 0.0;
    double rhs = 0.0;
    double margin = 0.0;  // signed slack; >= -tolerance means pass
    double tolerance = 0.0;
    bool pass = false;
    std::uint64_t seed = 0;
    std::string instance;

    json to_json() const;
};

// ---------------------------------------------------------------------------
// Identity and bound checks
// ---------------------------------------------------------------------------

/// Return-gap identity: eta_alt(pi) - eta(pi) equals gamma times the
/// occupancy-weighted (under the altered dynamics) one-step value gap.
/// Both sides are computed by independent exact dynamic programs.
TheoryReport check_telescoping(const ExBmdpSpec& m, const transtable& trans_alt,
                               const PolicyTable& policy, double tol = 1e-8);

/// Performance lower bound of planning against penalized rewards on the
/// estimated dynamics. The error estimator is built admissible by
/// construction: lambda * u(s,a) = gamma * max over the enumerated value
/// functions of |gap|. `force_zero_uncertainty` deliberately breaks
/// admissibility to demonstrate a failing check.
TheoryReport check_performance_bound(const ExBmdpSpec& m, const transtable& trans_alt,
                                     double lambda, long policy_cap = 100000,
                                     double tol = 1e-8,
                                     bool force_zero_uncertainty = false);

/// Which action density scores a trajectory drawn from the mixed dataset:
/// the pooled mixture conditional (default, the data-generating action law
/// of the union dataset), or each trajectory's own generating policy (the
/// two sides then agree exactly).
enum class MixtureDensity { mixture_action_model, per_policy_action_model };

/// Marginal used when validating that the behavior policies share one
/// action distribution.
enum class MarginalMode { own_occupancy, uniform };

/// Largest deviation of any policy's action marginal from the set's mean.
double assumption3_mismatch(const ExBmdpSpec& m, const std::vector<PolicyTable>& policies,
                            MarginalMode mode);

struct SamplingCheckOptions {
    int horizon = 4;  // number of states per enumerated trajectory
    MixtureDensity density = MixtureDensity::mixture_action_model;
    MarginalMode marginal_mode = MarginalMode::own_occupancy;
    long long path_cap = 2000000;
    double marginal_tol = 1e-9;
    double tol = 1e-9;
};

/// Mixed-dataset expected log-likelihood vs the per-policy average, both by
/// exhaustive enumeration of latent trajectories.
TheoryReport check_sampling_likelihood(const ExBmdpSpec& m,
                                       const std::vector<PolicyTable>& policies,
                                       const SamplingCheckOptions& opts = {});

/// I(a; s) under the mixture policy vs the average of per-policy mutual
/// informations, with a supplied state marginal.
TheoryReport check_mixture_mi(const ExBmdpSpec& m, const std::vector<PolicyTable>& policies,
                              const numvec& endo_marginal, double tol = 1e-10,
                              double marginal_tol = 1e-9);

// ---------------------------------------------------------------------------
// Instance generators
// ---------------------------------------------------------------------------

/// Small random instance for identity/bound checks (exogenous part trivial).
ExBmdpSpec random_theory_spec(Rng& rng, int max_states, int max_actions);

/// Each row mixed toward an independent random row by a per-row coefficient
/// in [0, eps].
transtable perturb_transitions(const transtable& trans, Rng& rng, double eps);

/// All deterministic policies; throws EnumerationCapExceeded past the cap.
std::vector<PolicyTable> enumerate_deterministic_policies(int n_states, int n_actions,
                                                          long cap);

/// Instance on which every behavior policy provably shares one action
/// marginal: either a doubly stochastic action-free chain with
/// permutation-mixture policies, or a state-equals-previous-action chain
/// with permutation policies. Uniform initial distribution in both cases.
struct EqualMarginalInstance {
    ExBmdpSpec spec;
    std::vector<PolicyTable> policies;
};
EqualMarginalInstance make_equal_marginal_instance(Rng& rng, int dim, int n_policies,
                                                   bool action_dependent);

// ---------------------------------------------------------------------------
// Batch drivers (one independent seeded instance per report)
// ---------------------------------------------------------------------------

std::vector<TheoryReport> run_telescoping_batch(int count, std::uint64_t seed,
                                                Exec exec = Exec::par);
std::vector<TheoryReport> run_bound_batch(int count, std::uint64_t seed,
                                          Exec exec = Exec::par,
                                          bool force_zero_uncertainty = false);
std::vector<TheoryReport> run_sampling_batch(int count, std::uint64_t seed,
                                             Exec exec = Exec::par,
                                             MixtureDensity density =
                                                 MixtureDensity::mixture_action_model);
std::vector<TheoryReport> run_mi_batch(int count, std::uint64_t seed,
                                       Exec exec = Exec::par,
                                       MarginalMode mode = MarginalMode::uniform);

/// Report-only calibration of the mean-disagreement estimator against the
/// true squared transition error: fits the constant on half the cells and
/// reports the violation rate on the other half.
TheoryReport admissibility_report(int n_envs, std::uint64_t seed, Exec exec = Exec::par);

}  // namespace seprl
