// Timing comparison of the serial and OpenMP execution paths of the
// data-parallel kernels. Both paths perform identical per-slot arithmetic,
// so the outputs are required to match bit for bit.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>

#include "seprl/datagen.hpp"
#include "seprl/exbmdp.hpp"
#include "seprl/harness.hpp"
#include "seprl/penalize.hpp"
#include "seprl/theory.hpp"

using namespace seprl;

namespace {

double time_ms(const std::function<void()>& fn) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    const auto stop = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(stop - start).count();
}

void report(const char* kernel, double serial_ms, double parallel_ms, double max_diff) {
    std::printf("%-22s %10.1f ms %10.1f ms %7.2fx %12g\n", kernel, serial_ms, parallel_ms,
                serial_ms / parallel_ms, max_diff);
}

double max_abs_diff(const numvec& a, const numvec& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

int main() {
    std::printf("%-22s %13s %13s %8s %12s\n", "kernel", "serial", "parallel", "speedup",
                "max |diff|");

    {
        // dense random MDP, 512 states x 4 actions
        Rng rng(1);
        const int ns = 512, na = 4;
        transtable trans(ns, numvecvec(na));
        numvecvec reward(ns, numvec(na));
        for (auto& per_state : trans)
            for (auto& row : per_state) row = rng.dirichlet_uniform(ns);
        for (auto& row : reward)
            for (auto& v : row) v = rng.uniform();

        ViResult seq, par;
        const double t_seq =
            time_ms([&] { seq = value_iterate(trans, reward, 0.9, 1e-10, Exec::seq); });
        const double t_par =
            time_ms([&] { par = value_iterate(trans, reward, 0.9, 1e-10, Exec::par); });
        report("value_iterate", t_seq, t_par, max_abs_diff(seq.values, par.values));

        PolicyTable pol;
        pol.probs.reserve(ns);
        for (int s = 0; s < ns; ++s) pol.probs.push_back(rng.dirichlet_uniform(na));
        numvec init(ns, 1.0 / ns);
        OccupancyMeasure o_seq, o_par;
        const double o_t_seq = time_ms(
            [&] { o_seq = occupancy(trans, init, pol, 0.95, false, Exec::seq, 1e-12); });
        const double o_t_par = time_ms(
            [&] { o_par = occupancy(trans, init, pol, 0.95, false, Exec::par, 1e-12); });
        double diff = 0.0;
        for (int s = 0; s < ns; ++s)
            diff = std::max(diff, max_abs_diff(o_seq.rho[s], o_par.rho[s]));
        report("occupancy", o_t_seq, o_t_par, diff);
    }

    {
        // ensemble uncertainty tables, K = 8 over 256 states x 4 actions
        Rng rng(2);
        const int ns = 256, na = 4, k = 8;
        EnsembleModel model;
        model.n_states = ns;
        model.n_act = na;
        model.alpha = 0.1;
        model.members.assign(k, transtable(ns, numvecvec(na)));
        for (auto& member : model.members)
            for (auto& per_state : member)
                for (auto& row : per_state) row = rng.dirichlet_uniform(ns);
        model.reward.assign(ns, numvec(na, 0.5));
        model.visit_counts.assign(ns, std::vector<long long>(na, 1));

        for (const auto est : {Estimator::md, Estimator::vlp}) {
            UncertaintyTable u_seq, u_par;
            const double t_seq =
                time_ms([&] { u_seq = uncertainty_table(model, est, Exec::seq); });
            const double t_par =
                time_ms([&] { u_par = uncertainty_table(model, est, Exec::par); });
            double diff = 0.0;
            for (int s = 0; s < ns; ++s)
                diff = std::max(diff, max_abs_diff(u_seq.u[s], u_par.u[s]));
            report(est == Estimator::md ? "uncertainty md" : "uncertainty vlp", t_seq,
                   t_par, diff);
        }
    }

    {
        // trajectory collection, 4000 episodes x 100 steps
        ExperimentConfig cfg;
        cfg.n_endo = 8;
        cfg.n_exo = 8;
        cfg.n_act = 3;
        cfg.env_seed = 3;
        const EnvArtifact env = generate_env(cfg);
        Rng prng(4);
        const BehaviorPolicySet pols = make_behavior_policies(env.spec, Tier::random, 8, prng);
        OfflineDataset d_seq, d_par;
        const double t_seq =
            time_ms([&] { d_seq = collect(env, pols, 4000, 100, 99, Exec::seq); });
        const double t_par =
            time_ms([&] { d_par = collect(env, pols, 4000, 100, 99, Exec::par); });
        report("collect", t_seq, t_par,
               dataset_to_string(d_seq) == dataset_to_string(d_par) ? 0.0 : 1.0);
    }

    {
        // theory batches
        std::vector<TheoryReport> r_seq, r_par;
        const double t_seq = time_ms([&] { r_seq = run_telescoping_batch(400, 7, Exec::seq); });
        const double t_par = time_ms([&] { r_par = run_telescoping_batch(400, 7, Exec::par); });
        double diff = 0.0;
        for (std::size_t i = 0; i < r_seq.size(); ++i)
            diff = std::max(diff, std::abs((r_seq[i].lhs - r_seq[i].rhs) -
                                           (r_par[i].lhs - r_par[i].rhs)));
        report("telescoping x400", t_seq, t_par, diff);
    }

    return 0;
}
