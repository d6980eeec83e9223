#include "seprl/penalize.hpp"

#include <cmath>

namespace seprl {

std::string estimator_name(Estimator e) { return e == Estimator::md ? "md" : "vlp"; }

Estimator estimator_from_name(const std::string& name) {
    if (name == "md") return Estimator::md;
    if (name == "vlp") return Estimator::vlp;
    throw ConfigError("unknown uncertainty estimator '" + name + "'");
}

namespace {

numvec mean_row(const EnsembleModel& model, int s, int a) {
    const int n = model.n_states;
    const int k = model.ensemble_size();
    numvec mean(static_cast<std::size_t>(n), 0.0);
    for (const auto& member : model.members) {
        const auto& row = member[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)];
        for (int s2 = 0; s2 < n; ++s2) mean[static_cast<std::size_t>(s2)] +=
            row[static_cast<std::size_t>(s2)];
    }
    for (auto& v : mean) v /= static_cast<double>(k);
    return mean;
}

}  // namespace

double uncertainty_md(const EnsembleModel& model, int s, int a) {
    if (model.ensemble_size() < 2) return 0.0;
    // exact agreement must report exactly zero
    const auto& first = model.members[0][static_cast<std::size_t>(s)]
                                     [static_cast<std::size_t>(a)];
    bool all_equal = true;
    for (const auto& member : model.members)
        if (member[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)] != first) {
            all_equal = false;
            break;
        }
    if (all_equal) return 0.0;
    const numvec mean = mean_row(model, s, a);
    double u = 0.0;
    for (const auto& member : model.members) {
        const auto& row = member[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)];
        for (int s2 = 0; s2 < model.n_states; ++s2) {
            const double d =
                row[static_cast<std::size_t>(s2)] - mean[static_cast<std::size_t>(s2)];
            u += d * d;
        }
    }
    return u;
}

double vlp_log_variance(const EnsembleModel& model, int s, int a, int s2) {
    const int k = model.ensemble_size();
    if (k < 2) return 0.0;
    auto prob = [&](int i) {
        return model.members[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)]
                            [static_cast<std::size_t>(a)][static_cast<std::size_t>(s2)];
    };
    // exact agreement means zero disagreement regardless of the value
    bool all_equal = true;
    for (int i = 1; i < k; ++i)
        if (prob(i) != prob(0)) {
            all_equal = false;
            break;
        }
    if (all_equal) return 0.0;

    double mean = 0.0;
    for (int i = 0; i < k; ++i) {
        const double p = prob(i);
        if (p <= 0.0) return std::numeric_limits<double>::infinity();
        mean += std::log(p);
    }
    mean /= static_cast<double>(k);
    double var = 0.0;
    for (int i = 0; i < k; ++i) {
        const double d = std::log(prob(i)) - mean;
        var += d * d;
    }
    return var / static_cast<double>(k);
}

double uncertainty_vlp(const EnsembleModel& model, int s, int a,
                       std::span<const double> successor_law) {
    if (model.ensemble_size() < 2) return 0.0;
    double u = 0.0;
    for (int s2 = 0; s2 < model.n_states; ++s2) {
        const double w = successor_law[static_cast<std::size_t>(s2)];
        if (w == 0.0) continue;
        u += w * vlp_log_variance(model, s, a, s2);
    }
    return u;
}

double uncertainty_vlp(const EnsembleModel& model, int s, int a) {
    const numvec mean = mean_row(model, s, a);
    return uncertainty_vlp(model, s, a, mean);
}

double UncertaintyTable::mean_over_visited(const EnsembleModel& model) const {
    double sum = 0.0;
    long long cells = 0;
    for (int s = 0; s < model.n_states; ++s)
        for (int a = 0; a < model.n_act; ++a)
            if (model.visit_counts[static_cast<std::size_t>(s)]
                                  [static_cast<std::size_t>(a)] > 0) {
                sum += u[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)];
                ++cells;
            }
    return cells > 0 ? sum / static_cast<double>(cells) : 0.0;
}

UncertaintyTable uncertainty_table(const EnsembleModel& model, Estimator est, Exec exec) {
    UncertaintyTable table;
    table.tag = est;
    table.k1_warning = model.ensemble_size() < 2;
    table.u.assign(static_cast<std::size_t>(model.n_states),
                   numvec(static_cast<std::size_t>(model.n_act), 0.0));
    [[maybe_unused]] const bool par = exec == Exec::par;
    const std::int64_t n = model.n_states;
#pragma omp parallel for schedule(static) if (par)
    for (std::int64_t s = 0; s < n; ++s)
        for (int a = 0; a < model.n_act; ++a)
            table.u[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)] =
                est == Estimator::md ? uncertainty_md(model, static_cast<int>(s), a)
                                     : uncertainty_vlp(model, static_cast<int>(s), a);
    return table;
}

PenalizedMdp build_penalized(const EnsembleModel& model, Estimator est, double lambda,
                             double gamma) {
    if (lambda < 0.0) throw ConfigError("build_penalized: lambda must be >= 0");
    if (!(gamma >= 0.0 && gamma < 1.0))
        throw ConfigError("build_penalized: discount must lie in [0,1)");

    PenalizedMdp pm;
    pm.lambda = lambda;
    pm.gamma = gamma;
    pm.estimator = est;
    pm.reward_hat = model.reward;

    pm.trans.assign(static_cast<std::size_t>(model.n_states),
                    numvecvec(static_cast<std::size_t>(model.n_act)));
    for (int s = 0; s < model.n_states; ++s)
        for (int a = 0; a < model.n_act; ++a) {
            numvec row = mean_row(model, s, a);
            double sum = 0.0;
            for (const double v : row) sum += v;
            if (std::abs(sum - 1.0) > 1e-9)
                throw PlanningError("build_penalized: ensemble mean row is not a distribution");
            pm.trans[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)] =
                std::move(row);
        }

    const UncertaintyTable table = uncertainty_table(model, est);
    pm.k1_warning = table.k1_warning;
    pm.reward_pen = pm.reward_hat;
    for (int s = 0; s < model.n_states; ++s)
        for (int a = 0; a < model.n_act; ++a)
            pm.reward_pen[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)] -=
                lambda * table.u[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)];
    return pm;
}

json penalized_to_json(const PenalizedMdp& pm) {
    json j;
    j["format_version"] = kFormatVersion;
    j["kind"] = "penalized_mdp";
    j["lambda"] = fmt_double(pm.lambda);
    j["gamma"] = fmt_double(pm.gamma);
    j["estimator"] = estimator_name(pm.estimator);
    j["k1_warning"] = pm.k1_warning;
    auto flat = [](const numvecvec& m) {
        json data = json::array();
        for (const auto& row : m)
            for (const double v : row) data.push_back(fmt_double(v));
        return data;
    };
    j["reward_hat"] = flat(pm.reward_hat);
    j["reward_pen"] = flat(pm.reward_pen);
    json trans = json::array();
    for (const auto& rows : pm.trans)
        for (const auto& row : rows)
            for (const double v : row) trans.push_back(fmt_double(v));
    j["trans"] = std::move(trans);
    return j;
}

PlanResult plan(const PenalizedMdp& pm, double tol, Exec exec) {
    const auto vi = value_iterate(pm.trans, pm.reward_pen, pm.gamma, tol, exec);
    PlanResult res;
    res.values = vi.values;
    res.residual_trace = vi.residual_trace;
    res.iterations = vi.iterations;
    const int n_act = pm.reward_pen.empty() ? 0 : static_cast<int>(pm.reward_pen[0].size());
    res.policy.probs.assign(pm.trans.size(), numvec(static_cast<std::size_t>(n_act), 0.0));
    for (std::size_t s = 0; s < pm.trans.size(); ++s)
        res.policy.probs[s][static_cast<std::size_t>(vi.greedy[s])] = 1.0;
    return res;
}

double normalized_return(double score, const NormalizationStats& stats) {
    if (!(stats.max_return > stats.min_return))
        throw NormalizationError("normalized_return: max must exceed min");
    return (score - stats.min_return) / (stats.max_return - stats.min_return);
}

std::pair<double, double> evaluate_policy(const ExBmdpSpec& spec, const PolicyTable& policy,
                                          const NormalizationStats& stats) {
    const double raw = exact_return(spec, policy);
    return {raw, normalized_return(raw, stats)};
}

std::pair<double, double> distractor_swap_eval(const ExBmdpSpec& spec,
                                               const PolicyTable& policy,
                                               const numvecvec& new_exo_trans,
                                               const numvec& new_init_exo) {
    const int nx = static_cast<int>(new_exo_trans.size());
    if (nx <= 0) throw std::invalid_argument("distractor_swap_eval: empty exogenous chain");
    for (const auto& row : new_exo_trans) {
        if (static_cast<int>(row.size()) != nx)
            throw std::invalid_argument("distractor_swap_eval: exogenous table must be square");
        double sum = 0.0;
        for (const double v : row) {
            if (v < 0.0)
                throw std::invalid_argument("distractor_swap_eval: negative probability");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-12)
            throw std::invalid_argument("distractor_swap_eval: exogenous row must sum to 1");
    }
    if (!new_init_exo.empty() && static_cast<int>(new_init_exo.size()) != nx)
        throw std::invalid_argument(
            "distractor_swap_eval: initial distribution does not match the chain");

    ExBmdpSpec swapped = spec;
    swapped.n_exo = nx;
    swapped.exo_trans = new_exo_trans;
    swapped.init_exo = new_init_exo.empty()
                           ? numvec(static_cast<std::size_t>(nx), 1.0 / nx)
                           : new_init_exo;
    swapped.emission.assign(static_cast<std::size_t>(spec.n_endo),
                            std::vector<int>(static_cast<std::size_t>(nx)));
    for (int e = 0; e < spec.n_endo; ++e)
        for (int x = 0; x < nx; ++x)
            swapped.emission[static_cast<std::size_t>(e)][static_cast<std::size_t>(x)] =
                e * nx + x;

    return {exact_return(spec, policy), exact_return(swapped, policy)};
}

}  // namespace seprl
