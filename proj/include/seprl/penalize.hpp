#pragma once

#include <span>
#include <string>
#include <utility>

#include "seprl/common.hpp"
#include "seprl/exbmdp.hpp"
#include "seprl/sepmodel.hpp"

namespace seprl {

/// md:  summed squared deviation of each member's next-state probability
///      vector from the ensemble mean.
/// vlp: expected (under the mean successor law) across-member variance of
///      the log next-state probability.
enum class Estimator { md, vlp };

std::string estimator_name(Estimator e);
Estimator estimator_from_name(const std::string& name);

double uncertainty_md(const EnsembleModel& model, int s, int a);

/// Population variance across members of ln T^i(s2 | s, a). Infinite when a
/// member assigns zero probability (alpha = 0 fits).
double vlp_log_variance(const EnsembleModel& model, int s, int a, int s2);

double uncertainty_vlp(const EnsembleModel& model, int s, int a);
double uncertainty_vlp(const EnsembleModel& model, int s, int a,
                       std::span<const double> successor_law);

struct UncertaintyTable {
    Estimator tag = Estimator::md;
    numvecvec u;  // [s][a], >= 0; zero wherever members agree exactly
    bool k1_warning = false;

    bool has_nonfinite() const {
        for (const auto& row : u)
            for (const double v : row)
                if (!std::isfinite(v)) return true;
        return false;
    }

    double mean_over_visited(const EnsembleModel& model) const;
};

UncertaintyTable uncertainty_table(const EnsembleModel& model, Estimator est,
                                   Exec exec = Exec::par);

// ---------------------------------------------------------------------------
// Penalized MDP and planning
// ---------------------------------------------------------------------------

struct PenalizedMdp {
    transtable trans;      // ensemble mean, rows re-validated
    numvecvec reward_hat;  // fitted reward
    numvecvec reward_pen;  // reward_hat - lambda * u
    double lambda = 1.0;
    double gamma = 0.95;
    Estimator estimator = Estimator::md;
    bool k1_warning = false;
};

PenalizedMdp build_penalized(const EnsembleModel& model, Estimator est, double lambda,
                             double gamma);

json penalized_to_json(const PenalizedMdp& pm);

struct PlanResult {
    PolicyTable policy;  // greedy, ties to the lowest action id
    numvec values;
    numvec residual_trace;
    int iterations = 0;
};

/// Exact value iteration on the penalized MDP to a Bellman residual <= tol.
PlanResult plan(const PenalizedMdp& pm, double tol = 1e-10, Exec exec = Exec::par);

// ---------------------------------------------------------------------------
// Evaluation in the true environment
// ---------------------------------------------------------------------------

struct NormalizationStats {
    double min_return = 0.0;
    double max_return = 0.0;
};

/// (score - min) / (max - min); throws NormalizationError when max <= min.
double normalized_return(double score, const NormalizationStats& stats);

/// Exact return plus its normalized value.
std::pair<double, double> evaluate_policy(const ExBmdpSpec& spec, const PolicyTable& policy,
                                          const NormalizationStats& stats);

/// Exact returns before and after replacing the exogenous chain. The swapped
/// chain may have a different state count; pass its initial distribution (or
/// leave empty for uniform).
std::pair<double, double> distractor_swap_eval(const ExBmdpSpec& spec,
                                               const PolicyTable& policy,
                                               const numvecvec& new_exo_trans,
                                               const numvec& new_init_exo = {});

}  // namespace seprl
