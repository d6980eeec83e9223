#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

// The OpenMP kernels write one output slot per loop iteration and reduce
// serially, so the parallel path must reproduce the serial path bit for bit.

#include "seprl/harness.hpp"
#include "test_util.hpp"

using namespace seprl;
namespace tu = seprl::testutil;

TEST_CASE("value iteration: serial and parallel sweeps match exactly") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(100 + seed);
        const auto spec = tu::random_spec(rng, 24, 2, 3, 0.93);
        const auto seq = value_iterate(spec.endo_trans, spec.reward, 0.93, 1e-11, Exec::seq);
        const auto par = value_iterate(spec.endo_trans, spec.reward, 0.93, 1e-11, Exec::par);
        CHECK(seq.values == par.values);
        CHECK(seq.greedy == par.greedy);
        CHECK(seq.residual_trace == par.residual_trace);
    }
}

TEST_CASE("occupancy propagation: serial and parallel match exactly") {
    Rng rng(7);
    const auto spec = tu::random_spec(rng, 20, 2, 3, 0.95);
    const auto pol = tu::random_policy(rng, 20, 3);
    const auto seq = occupancy(spec.endo_trans, spec.init_endo, pol, 0.95, true, Exec::seq);
    const auto par = occupancy(spec.endo_trans, spec.init_endo, pol, 0.95, true, Exec::par);
    CHECK(seq.rho == par.rho);
}

TEST_CASE("collection: serial and parallel datasets are byte-identical") {
    Rng rng(8);
    EnvArtifact env;
    env.spec = tu::structured_spec(rng, 5, 4, 2);
    Rng prng(9);
    const auto pols = make_behavior_policies(env.spec, Tier::random, 4, prng);
    const auto seq = collect(env, pols, 50, 60, 17, Exec::seq);
    const auto par = collect(env, pols, 50, 60, 17, Exec::par);
    CHECK(dataset_to_string(seq) == dataset_to_string(par));
}

TEST_CASE("ensemble fitting: serial and parallel models are byte-identical") {
    Rng rng(10);
    EnvArtifact env;
    env.spec = tu::structured_spec(rng, 4, 4, 2);
    Rng prng(11);
    const auto pols = make_behavior_policies(env.spec, Tier::random, 4, prng);
    const auto ds = collect(env, pols, 24, 40, 19);
    const auto dec = FactorDecoder::from_env(env);
    const auto seq = fit_separated_model(ds, dec, Partition{0, false}, 6, 0.1, 23, true,
                                         Exec::seq);
    const auto par = fit_separated_model(ds, dec, Partition{0, false}, 6, 0.1, 23, true,
                                         Exec::par);
    CHECK(model_to_json(seq).dump() == model_to_json(par).dump());
}

TEST_CASE("uncertainty tables: serial and parallel match exactly") {
    Rng rng(12);
    EnvArtifact env;
    env.spec = tu::structured_spec(rng, 4, 4, 2);
    Rng prng(13);
    const auto pols = make_behavior_policies(env.spec, Tier::random, 4, prng);
    const auto ds = collect(env, pols, 24, 40, 29);
    const auto dec = FactorDecoder::from_env(env);
    const auto model = fit_joint_model(ds, dec, 5, 0.1, 31);
    for (const auto est : {Estimator::md, Estimator::vlp}) {
        const auto seq = uncertainty_table(model, est, Exec::seq);
        const auto par = uncertainty_table(model, est, Exec::par);
        CHECK(seq.u == par.u);
    }
}

TEST_CASE("theory batches: serial and parallel reports agree exactly") {
    const auto seq = run_telescoping_batch(50, 41, Exec::seq);
    const auto par = run_telescoping_batch(50, 41, Exec::par);
    REQUIRE(seq.size() == par.size());
    for (std::size_t i = 0; i < seq.size(); ++i)
        CHECK(seq[i].to_json().dump() == par[i].to_json().dump());
}

TEST_CASE("ablation: serial and parallel outputs are byte-identical") {
    ExperimentConfig cfg;
    cfg.n_endo = 4;
    cfg.n_exo = 4;
    cfg.n_traj = 12;
    cfg.horizon = 30;
    cfg.ensemble_size = 3;
    cfg.n_seeds = 2;
    cfg.tiers = {"random"};
    cfg.master_seed = 3;
    const auto seq = run_ablation(cfg, Exec::seq);
    const auto par = run_ablation(cfg, Exec::par);
    CHECK(seq.csv == par.csv);
    CHECK(seq.report.dump() == par.report.dump());
}
