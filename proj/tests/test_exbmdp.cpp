#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "seprl/exbmdp.hpp"
#include "test_util.hpp"

using namespace seprl;
namespace tu = seprl::testutil;

TEST_CASE("validate accepts a well-formed 2x2x2 spec") {
    Rng rng(1);
    const auto spec = tu::random_spec(rng, 2, 2, 2);
    CHECK(validate(spec).ok());
}

TEST_CASE("validate flags a transition row that sums to 0.9") {
    Rng rng(2);
    auto spec = tu::random_spec(rng, 2, 2, 2);
    double scale = 0.9 / (spec.endo_trans[1][0][0] + spec.endo_trans[1][0][1]);
    for (auto& v : spec.endo_trans[1][0]) v *= scale;
    const auto rep = validate(spec);
    REQUIRE(rep.issues.size() == 1);
    CHECK(rep.issues[0].code == "endo_row");
    CHECK(rep.issues[0].detail.find("s+=1") != std::string::npos);
    CHECK(rep.issues[0].detail.find("a=0") != std::string::npos);
}

TEST_CASE("validate flags an emission collision") {
    Rng rng(3);
    auto spec = tu::random_spec(rng, 2, 2, 2);
    spec.emission[1][0] = spec.emission[0][0];
    const auto rep = validate(spec);
    REQUIRE(rep.issues.size() == 1);
    CHECK(rep.issues[0].code == "emission_collision");
}

TEST_CASE("validate reports bad discount and init sums") {
    Rng rng(4);
    auto spec = tu::random_spec(rng, 2, 2, 2);
    spec.discount = 1.0;
    spec.init_endo = {0.6, 0.6};
    const auto rep = validate(spec);
    CHECK(rep.issues.size() == 2);
}

TEST_CASE("step is the unique successor on a deterministic spec") {
    const auto spec = tu::deterministic_spec();
    for (std::uint64_t seed : {1ULL, 77ULL, 123456ULL}) {
        Rng rng(seed);
        const auto res = step(spec, {0, 0}, 1, rng);
        CHECK(res.next.endo == 1);
        CHECK(res.next.exo == 1);
        CHECK(res.reward == 1.0);
        CHECK(res.observation == spec.emission[1][1]);
    }
}

TEST_CASE("step range errors") {
    const auto spec = tu::deterministic_spec();
    Rng rng(5);
    CHECK_THROWS_AS(step(spec, {2, 0}, 0, rng), std::out_of_range);
    CHECK_THROWS_AS(step(spec, {0, 2}, 0, rng), std::out_of_range);
    CHECK_THROWS_AS(step(spec, {0, 0}, 5, rng), std::out_of_range);
}

TEST_CASE("step matches its table row empirically") {
    // Monte Carlo oracle: 1e5 draws from endo_trans(.|0,0) = [0.5, 0.5]
    auto spec = tu::deterministic_spec();
    spec.endo_trans[0][0] = {0.5, 0.5};
    Rng rng(42);
    const int n = 100000;
    int hits = 0;
    for (int i = 0; i < n; ++i) {
        const auto res = step(spec, {0, 0}, 0, rng);
        hits += res.next.endo == 0 ? 1 : 0;
    }
    CHECK(std::abs(static_cast<double>(hits) / n - 0.5) < 0.01);
}

TEST_CASE("joint successor frequency factorizes into the product of marginals") {
    Rng gen(6);
    const auto spec = tu::random_spec(gen, 2, 2, 2);
    Rng rng(7);
    const int n = 100000;
    double joint[2][2] = {{0, 0}, {0, 0}};
    double endo_marg[2] = {0, 0};
    double exo_marg[2] = {0, 0};
    for (int i = 0; i < n; ++i) {
        const auto res = step(spec, {0, 1}, 1, rng);
        joint[res.next.endo][res.next.exo] += 1.0;
        endo_marg[res.next.endo] += 1.0;
        exo_marg[res.next.exo] += 1.0;
    }
    for (int e = 0; e < 2; ++e)
        for (int x = 0; x < 2; ++x) {
            const double lhs = joint[e][x] / n;
            const double rhs = (endo_marg[e] / n) * (exo_marg[x] / n);
            CHECK(std::abs(lhs - rhs) < 0.01);
            // and both match the table product
            CHECK(std::abs(lhs - spec.endo_trans[0][1][e] * spec.exo_trans[1][x]) < 0.01);
        }
}

TEST_CASE("exact_return is zero for an all-zero reward table") {
    Rng rng(8);
    auto spec = tu::random_spec(rng, 3, 2, 2);
    for (auto& row : spec.reward)
        for (auto& v : row) v = 0.0;
    const auto pol = tu::random_policy(rng, 3, 2);
    CHECK(exact_return(spec, pol) == 0.0);
}

TEST_CASE("exact_return equals the geometric series on a single-state chain") {
    ExBmdpSpec spec;
    spec.n_endo = 1;
    spec.n_exo = 1;
    spec.n_act = 1;
    spec.discount = 0.9;
    spec.endo_trans = {{{1.0}}};
    spec.exo_trans = {{1.0}};
    spec.reward = {{1.0}};
    spec.emission = {{0}};
    spec.init_endo = {1.0};
    spec.init_exo = {1.0};
    const auto pol = tu::uniform_policy(1, 1);
    CHECK(exact_return(spec, pol) == doctest::Approx(10.0).epsilon(1e-8));
}

TEST_CASE("exact_return rejects discount >= 1") {
    Rng rng(9);
    auto spec = tu::random_spec(rng, 2, 2, 2);
    spec.discount = 1.0;
    CHECK_THROWS_AS(exact_return(spec, tu::uniform_policy(2, 2)), ConfigError);
    CHECK_THROWS_AS(occupancy(spec.endo_trans, spec.init_endo, tu::uniform_policy(2, 2), 1.0),
                    ConfigError);
    CHECK_THROWS_AS(value_iterate(spec.endo_trans, spec.reward, 1.0), ConfigError);
}

TEST_CASE("exact_return agrees with a Monte Carlo rollout oracle") {
    Rng gen(10);
    const auto spec = tu::random_spec(gen, 4, 2, 2, 0.9);
    const auto pol = tu::random_policy(gen, 4, 2);
    const double eta = exact_return(spec, pol);

    // truncated rollouts; truncation bias gamma^T/(1-gamma) ~ 2e-9 at T=200
    const int n_rollouts = 100000;
    const int horizon = 200;
    Rng rng(11);
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n_rollouts; ++i) {
        LatentState z = sample_initial(spec, rng);
        double ret = 0.0, g = 1.0;
        for (int t = 0; t < horizon; ++t) {
            const int a = rng.categorical(pol.probs[static_cast<std::size_t>(z.endo)]);
            const auto res = step(spec, z, a, rng);
            ret += g * res.reward;
            g *= spec.discount;
            z = res.next;
        }
        sum += ret;
        sumsq += ret * ret;
    }
    const double mean = sum / n_rollouts;
    const double var = (sumsq / n_rollouts - mean * mean) / n_rollouts;
    const double se = std::sqrt(var);
    CHECK(std::abs(mean - eta) < 3.0 * se + 1e-6);
}

TEST_CASE("occupancy at gamma = 0 is the initial distribution times the policy") {
    Rng rng(12);
    const auto spec = tu::random_spec(rng, 3, 2, 2);
    const auto pol = tu::random_policy(rng, 3, 2);
    const auto occ = occupancy(spec.endo_trans, spec.init_endo, pol, 0.0);
    for (int s = 0; s < 3; ++s)
        for (int a = 0; a < 2; ++a)
            CHECK(occ.rho[s][a] ==
                  doctest::Approx(spec.init_endo[s] * pol.probs[s][a]).epsilon(1e-14));
}

TEST_CASE("scaled occupancy sums to one for random inputs") {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        Rng rng(100 + seed);
        const int ns = 2 + static_cast<int>(rng.uniform_int(5));
        const int na = 1 + static_cast<int>(rng.uniform_int(3));
        const auto spec = tu::random_spec(rng, ns, 2, na, 0.5 + 0.49 * rng.uniform());
        const auto pol = tu::random_policy(rng, ns, na);
        const auto occ =
            occupancy(spec.endo_trans, spec.init_endo, pol, spec.discount, /*scaled=*/true);
        CHECK(std::abs(occ.total() - 1.0) < 1e-10);
    }
}

TEST_CASE("occupancy matches hand enumeration on a two-state deterministic cycle") {
    // both actions advance the cycle deterministically
    ExBmdpSpec spec;
    spec.n_endo = 2;
    spec.n_exo = 1;
    spec.n_act = 2;
    spec.discount = 0.9;
    spec.endo_trans = {{{0.0, 1.0}, {0.0, 1.0}}, {{1.0, 0.0}, {1.0, 0.0}}};
    spec.exo_trans = {{1.0}};
    spec.reward = {{0.0, 0.0}, {0.0, 0.0}};
    spec.emission = {{0}, {1}};
    spec.init_endo = {1.0, 0.0};
    spec.init_exo = {1.0};
    const auto pol = tu::uniform_policy(2, 2);

    // oracle: exhaustive sum over t <= 200
    double flow0 = 0.0, flow1 = 0.0, g = 1.0;
    for (int t = 0; t <= 200; ++t) {
        (t % 2 == 0 ? flow0 : flow1) += g;
        g *= spec.discount;
    }
    // truncation tail of the oracle: gamma^202 / (1 - gamma^2) ~ 3e-9
    const auto occ = occupancy(spec.endo_trans, spec.init_endo, pol, spec.discount);
    for (int a = 0; a < 2; ++a) {
        CHECK(std::abs(occ.rho[0][a] - 0.5 * flow0) < 1e-8);
        CHECK(std::abs(occ.rho[1][a] - 0.5 * flow1) < 1e-8);
    }
}

TEST_CASE("occupancy satisfies the flow identity") {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        Rng rng(200 + seed);
        const int ns = 2 + static_cast<int>(rng.uniform_int(5));
        const int na = 1 + static_cast<int>(rng.uniform_int(3));
        const auto spec = tu::random_spec(rng, ns, 2, na, 0.5 + 0.45 * rng.uniform());
        const auto pol = tu::random_policy(rng, ns, na);
        const auto occ = occupancy(spec.endo_trans, spec.init_endo, pol, spec.discount);
        for (int s = 0; s < ns; ++s) {
            for (int a = 0; a < na; ++a) {
                double rhs = spec.init_endo[s] * pol.probs[s][a];
                for (int s0 = 0; s0 < ns; ++s0)
                    for (int a0 = 0; a0 < na; ++a0)
                        rhs += spec.discount * occ.rho[s0][a0] *
                               spec.endo_trans[s0][a0][s] * pol.probs[s][a];
                CHECK(std::abs(occ.rho[s][a] - rhs) < 1e-10);
            }
        }
    }
}

TEST_CASE("exact_return ignores the exogenous chain") {
    Rng rng(13);
    auto spec = tu::random_spec(rng, 4, 3, 2);
    const auto pol = tu::random_policy(rng, 4, 2);
    const double before = exact_return(spec, pol);
    for (int x = 0; x < 3; ++x) spec.exo_trans[x] = rng.dirichlet_uniform(3);
    CHECK(exact_return(spec, pol) == before);
}

TEST_CASE("policy evaluation solves the linear system to tight residual") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(300 + seed);
        const auto spec = tu::random_spec(rng, 6, 2, 3, 0.95);
        const auto pol = tu::random_policy(rng, 6, 3);
        const auto v = policy_values(spec.endo_trans, spec.reward, pol, spec.discount);
        for (int s = 0; s < 6; ++s) {
            double expect = 0.0;
            for (int a = 0; a < 3; ++a) {
                double q = spec.reward[s][a];
                for (int s2 = 0; s2 < 6; ++s2)
                    q += spec.discount * spec.endo_trans[s][a][s2] * v[s2];
                expect += pol.probs[s][a] * q;
            }
            CHECK(std::abs(v[s] - expect) < 1e-10);
        }
    }
}

TEST_CASE("value iteration on a deterministic chain and monotone residuals") {
    Rng rng(14);
    const auto spec = tu::random_spec(rng, 5, 2, 2, 0.9);
    const auto res = value_iterate(spec.endo_trans, spec.reward, spec.discount, 1e-12);
    for (std::size_t i = 1; i < res.residual_trace.size(); ++i)
        CHECK(res.residual_trace[i] <= res.residual_trace[i - 1] + 1e-14);
    // greedy policy must satisfy the Bellman optimality equation
    for (int s = 0; s < 5; ++s) {
        double best = -1e300;
        for (int a = 0; a < 2; ++a) {
            double q = spec.reward[s][a];
            for (int s2 = 0; s2 < 5; ++s2)
                q += spec.discount * spec.endo_trans[s][a][s2] * res.values[s2];
            best = std::max(best, q);
        }
        CHECK(res.values[s] == doctest::Approx(best).epsilon(1e-9));
    }
}

TEST_CASE("product-chain evaluation agrees with the endogenous solve") {
    Rng rng(15);
    const auto spec = tu::random_spec(rng, 4, 3, 2, 0.9);
    const auto pol = tu::random_policy(rng, 4, 2);
    std::vector<std::vector<int>> endo_map(4, std::vector<int>(3));
    for (int e = 0; e < 4; ++e)
        for (int x = 0; x < 3; ++x) endo_map[e][x] = e;
    CHECK(exact_return_product(spec, pol, endo_map) ==
          doctest::Approx(exact_return(spec, pol)).epsilon(1e-10));
}

TEST_CASE("spec serialization round-trips byte-exactly") {
    Rng rng(16);
    EnvArtifact env;
    env.spec = tu::random_spec(rng, 3, 4, 2, 0.93);
    env.endo_factor_index = 1;
    env.seed = 999;
    env.drift = "slow_cycle";

    const auto path = std::filesystem::temp_directory_path() / "seprl_spec_rt.json";
    save_env(env, path);
    const auto bytes1 = read_file(path);
    const auto loaded = load_env(path);
    save_env(loaded, path);
    CHECK(read_file(path) == bytes1);
    CHECK(env_fingerprint(loaded) == env_fingerprint(env));
    CHECK(validate(loaded.spec).ok());
    std::filesystem::remove(path);
}

TEST_CASE("spec loader rejects a bumped format version") {
    Rng rng(17);
    EnvArtifact env;
    env.spec = tu::random_spec(rng, 2, 2, 2);
    auto j = env_to_json(env);
    j["format_version"] = kFormatVersion + 1;
    const auto path = std::filesystem::temp_directory_path() / "seprl_spec_ver.json";
    atomic_write_file(path, j.dump());
    try {
        load_env(path);
        FAIL("expected ArtifactError");
    } catch (const ArtifactError& e) {
        CHECK(e.kind == ArtifactError::Kind::version);
    }
    std::filesystem::remove(path);
}
