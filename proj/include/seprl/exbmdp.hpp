#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "seprl/common.hpp"

namespace seprl {

/// A factored latent MDP: the endogenous state reacts to actions, the
/// exogenous state drifts on its own, and each (endo, exo) pair emits one
/// distinct observation id (block structure).
struct ExBmdpSpec {
    int n_endo = 0;
    int n_exo = 0;
    int n_act = 0;
    transtable endo_trans;                   // [s+][a] -> row over s+'
    numvecvec exo_trans;                     // [s-]    -> row over s-'
    numvecvec reward;                        // [s+][a] in [0,1]
    std::vector<std::vector<int>> emission;  // [s+][s-] -> observation id
    numvec init_endo;
    numvec init_exo;
    double discount = 0.95;

    int n_obs() const { return n_endo * n_exo; }
};

struct LatentState {
    int endo = 0;
    int exo = 0;
};

/// Stationary policy over endogenous states.
struct PolicyTable {
    numvecvec probs;  // [s+][a]

    int n_states() const { return static_cast<int>(probs.size()); }
    int n_actions() const { return probs.empty() ? 0 : static_cast<int>(probs[0].size()); }
};

/// Discounted state-action visitation rho(s+, a) = sum_t gamma^t Pr(s_t, a_t).
/// `scaled` means multiplied by (1 - gamma), in which case it sums to 1.
struct OccupancyMeasure {
    numvecvec rho;
    bool scaled = false;
    double discount = 0.0;

    double total() const {
        double s = 0.0;
        for (const auto& row : rho)
            for (const double v : row) s += v;
        return s;
    }
};

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

struct ValidationIssue {
    std::string code;
    std::string detail;
};

struct ValidationReport {
    std::vector<ValidationIssue> issues;

    bool ok() const { return issues.empty(); }
    std::string to_string() const;
};

/// Checks every structural invariant (row sums, ranges, emission injectivity,
/// initial distributions). Never throws; returns one issue per violation.
ValidationReport validate(const ExBmdpSpec& spec);

bool is_valid_policy(const PolicyTable& policy, int n_states, int n_actions,
                     double tol = 1e-12);

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

struct StepResult {
    LatentState next;
    double reward = 0.0;
    int observation = 0;
};

LatentState sample_initial(const ExBmdpSpec& spec, Rng& rng);
int observe(const ExBmdpSpec& spec, LatentState z);

/// One transition: endo and exo advance independently, the reward is read at
/// the current (s+, a), and the observation is emitted by the next pair.
StepResult step(const ExBmdpSpec& spec, LatentState state, int action, Rng& rng);

// ---------------------------------------------------------------------------
// Exact dynamic programming
// ---------------------------------------------------------------------------

/// V^pi on an arbitrary endogenous chain via the linear policy-evaluation
/// system (direct solve with refinement).
numvec policy_values(const transtable& trans, const numvecvec& reward,
                     const PolicyTable& policy, double gamma);

/// eta(pi) = E[sum_t gamma^t r(s+_t, a_t)] on the spec's endogenous chain.
double exact_return(const ExBmdpSpec& spec, const PolicyTable& policy);

/// Occupancy by iterative flow propagation to a fixed-point residual <= tol.
OccupancyMeasure occupancy(const transtable& trans, const numvec& init,
                           const PolicyTable& policy, double gamma,
                           bool scaled = false, Exec exec = Exec::par,
                           double tol = 1e-12);

struct ViResult {
    numvec values;
    std::vector<int> greedy;  // lowest action id on ties
    numvec residual_trace;
    int iterations = 0;
};

/// Jacobi value iteration to a Bellman residual <= tol. The sweep runs one
/// state per slot so serial and parallel execution produce identical bits.
ViResult value_iterate(const transtable& trans, const numvecvec& reward, double gamma,
                       double tol = 1e-10, Exec exec = Exec::par,
                       long max_iterations = 1000000);

/// Exact return of a policy defined over an arbitrary factor of the latent
/// product chain. `policy_state` maps (s+, s-) to the policy's state index.
double exact_return_product(const ExBmdpSpec& spec, const PolicyTable& policy,
                            const std::vector<std::vector<int>>& policy_state);

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

/// Spec file payload: the ground-truth tables plus generator provenance.
/// `endo_factor_index` records which decoder factor is the endogenous one.
struct EnvArtifact {
    ExBmdpSpec spec;
    int endo_factor_index = 0;
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;
    std::string drift = "custom";
};

json env_to_json(const EnvArtifact& env);
EnvArtifact env_from_json(const json& j);
void save_env(const EnvArtifact& env, const std::filesystem::path& path);
EnvArtifact load_env(const std::filesystem::path& path);

/// Hash of the canonical serialized form; embedded in downstream artifacts.
std::uint64_t env_fingerprint(const EnvArtifact& env);

}  // namespace seprl
