#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "seprl/datagen.hpp"
#include "test_util.hpp"

using namespace seprl;
namespace tu = seprl::testutil;

namespace {

EnvArtifact wrap(ExBmdpSpec spec) {
    EnvArtifact env;
    env.spec = std::move(spec);
    return env;
}

}  // namespace

TEST_CASE("random tier with one action yields the unique trivial policy") {
    Rng rng(1);
    auto spec = tu::structured_spec(rng, 3, 2, 1);
    spec.reward[2][0] = 1.0;
    Rng prng(2);
    const auto set = make_behavior_policies(spec, Tier::random, 1, prng);
    REQUIRE(set.policies.size() == 1);
    for (const auto& row : set.policies[0].probs) {
        REQUIRE(row.size() == 1);
        CHECK(row[0] == 1.0);
    }
}

TEST_CASE("medium tier lands in the 40-60% return band") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(100 + seed);
        const auto spec = tu::structured_spec(rng, 5, 3, 2);
        Rng prng(1);
        const auto set = make_behavior_policies(spec, Tier::medium, 1, prng);
        REQUIRE(set.policies.size() == 1);
        const double opt = exact_return(spec, optimal_policy(spec));
        const double ratio = exact_return(spec, set.policies[0]) / opt;
        CHECK(ratio >= 0.4);
        CHECK(ratio <= 0.6);
    }
}

TEST_CASE("medium tier is rejected on a degenerate reward") {
    Rng rng(3);
    auto spec = tu::structured_spec(rng, 4, 2, 2);
    for (auto& row : spec.reward)
        for (auto& v : row) v = 0.0;
    Rng prng(4);
    CHECK_THROWS_AS(make_behavior_policies(spec, Tier::medium, 1, prng), ConfigError);
}

TEST_CASE("medium_replay snapshot returns are non-decreasing") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(200 + seed);
        const auto spec = tu::structured_spec(rng, 5, 3, 2);
        Rng prng(5);
        const auto set = make_behavior_policies(spec, Tier::medium_replay, 6, prng);
        REQUIRE(set.policies.size() == 6);
        double prev = -1.0;
        for (const auto& pol : set.policies) {
            const double r = exact_return(spec, pol);
            CHECK(r >= prev - 1e-12);
            prev = r;
        }
        // the cap keeps every snapshot at or below the medium policy's return
        Rng mrng(6);
        const auto med = make_behavior_policies(spec, Tier::medium, 1, mrng);
        CHECK(prev <= exact_return(spec, med.policies[0]) + 1e-12);
    }
}

TEST_CASE("deterministic spec and policy produce identical trajectories") {
    auto env = wrap(tu::deterministic_spec());
    BehaviorPolicySet set;
    set.tier = Tier::medium;
    set.policies.push_back(tu::deterministic_policy({0, 0}, 2));
    const auto ds = collect(env, set, 8, 10, 99);
    for (const auto& t : ds.trajectories) {
        CHECK(t.observations == ds.trajectories[0].observations);
        CHECK(t.actions == ds.trajectories[0].actions);
        CHECK(t.rewards == ds.trajectories[0].rewards);
    }
}

TEST_CASE("collect rejects bad arguments") {
    auto env = wrap(tu::deterministic_spec());
    BehaviorPolicySet set;
    set.policies.push_back(tu::deterministic_policy({0, 0}, 2));
    CHECK_THROWS_AS(collect(env, set, 0, 10, 1), ConfigError);
    CHECK_THROWS_AS(collect(env, set, 1, 1, 1), ConfigError);
}

TEST_CASE("dataset stats are ordered and recomputable") {
    Rng rng(7);
    auto env = wrap(tu::structured_spec(rng, 4, 3, 2));
    Rng prng(8);
    const auto set = make_behavior_policies(env.spec, Tier::random, 20, prng);
    const auto ds = collect(env, set, 200, 40, 17);
    const auto st = ds.stats();
    CHECK(st.count == 200);
    CHECK(st.min <= st.p25);
    CHECK(st.p25 <= st.median);
    CHECK(st.median <= st.p75);
    CHECK(st.p75 <= st.max);
    CHECK(st.min <= st.mean);
    CHECK(st.mean <= st.max);
}

TEST_CASE("empirical transition frequencies converge to the tables") {
    Rng rng(9);
    auto env = wrap(tu::random_spec(rng, 3, 2, 2, 0.95));
    BehaviorPolicySet set;
    set.policies.push_back(tu::uniform_policy(3, 2));
    const int n_traj = 1000, horizon = 100;  // 1e5 steps total
    const auto ds = collect(env, set, n_traj, horizon, 23);

    // recover latent pairs through the emission inverse
    std::vector<std::pair<int, int>> inv(static_cast<std::size_t>(env.spec.n_obs()));
    for (int e = 0; e < 3; ++e)
        for (int x = 0; x < 2; ++x) inv[static_cast<std::size_t>(env.spec.emission[e][x])] = {e, x};

    std::vector<std::vector<std::vector<long long>>> counts(
        3, std::vector<std::vector<long long>>(2, std::vector<long long>(3, 0)));
    std::vector<std::vector<long long>> xcounts(2, std::vector<long long>(2, 0));
    for (const auto& t : ds.trajectories) {
        for (int k = 0; k < t.steps(); ++k) {
            const auto [e0, x0] = inv[static_cast<std::size_t>(t.observations[k])];
            const auto [e1, x1] = inv[static_cast<std::size_t>(t.observations[k + 1])];
            ++counts[e0][t.actions[k]][e1];
            ++xcounts[x0][x1];
        }
    }
    for (int e = 0; e < 3; ++e)
        for (int a = 0; a < 2; ++a) {
            long long tot = 0;
            for (int e2 = 0; e2 < 3; ++e2) tot += counts[e][a][e2];
            REQUIRE(tot > 0);
            for (int e2 = 0; e2 < 3; ++e2)
                CHECK(std::abs(static_cast<double>(counts[e][a][e2]) / tot -
                               env.spec.endo_trans[e][a][e2]) < 0.02);
        }
    for (int x = 0; x < 2; ++x) {
        long long tot = xcounts[x][0] + xcounts[x][1];
        for (int x2 = 0; x2 < 2; ++x2)
            CHECK(std::abs(static_cast<double>(xcounts[x][x2]) / tot -
                           env.spec.exo_trans[x][x2]) < 0.02);
    }
}

TEST_CASE("action entropy of a deterministic batch is zero") {
    Trajectory t;
    t.policy_id = 0;
    t.observations = {0, 0, 0, 0};
    t.actions = {1, 1, 1};
    t.rewards = {0.0, 0.0, 0.0};
    CHECK(action_entropy(std::vector<Trajectory>{t}) == 0.0);
}

TEST_CASE("action entropy of exactly uniform frequencies is ln 4") {
    Trajectory t;
    t.observations = {0, 0, 0, 0, 0, 0, 0, 0, 0};
    t.actions = {0, 1, 2, 3, 0, 1, 2, 3};
    t.rewards = numvec(8, 0.0);
    CHECK(action_entropy(std::vector<Trajectory>{t}) ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("pooled entropy of two disjoint deterministic policies is ln 2") {
    Trajectory a, b;
    a.observations = std::vector<int>(11, 0);
    a.actions = std::vector<int>(10, 0);
    a.rewards = numvec(10, 0.0);
    b.observations = std::vector<int>(11, 0);
    b.actions = std::vector<int>(10, 1);
    b.rewards = numvec(10, 0.0);
    CHECK(action_entropy(std::vector<Trajectory>{a, b}) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("action entropy rejects an empty batch") {
    CHECK_THROWS_AS(action_entropy(std::vector<Trajectory>{}), std::invalid_argument);
}

TEST_CASE("dataset save/load round-trips") {
    Rng rng(10);
    auto env = wrap(tu::structured_spec(rng, 4, 3, 2));
    Rng prng(11);
    const auto set = make_behavior_policies(env.spec, Tier::medium_replay, 4, prng);
    const auto ds = collect(env, set, 12, 20, 31);

    const auto path = std::filesystem::temp_directory_path() / "seprl_ds_rt.jsonl";
    save_dataset(ds, path);
    const auto loaded = load_dataset(path, env_fingerprint(env));
    CHECK(loaded.tier == ds.tier);
    CHECK(loaded.env_fingerprint == ds.env_fingerprint);
    CHECK(loaded.n_traj() == ds.n_traj());
    for (int i = 0; i < ds.n_traj(); ++i) {
        CHECK(loaded.trajectories[i].policy_id == ds.trajectories[i].policy_id);
        CHECK(loaded.trajectories[i].observations == ds.trajectories[i].observations);
        CHECK(loaded.trajectories[i].actions == ds.trajectories[i].actions);
        CHECK(loaded.trajectories[i].rewards == ds.trajectories[i].rewards);
    }
    // byte-identical re-save
    const auto bytes = read_file(path);
    save_dataset(loaded, path);
    CHECK(read_file(path) == bytes);
    std::filesystem::remove(path);
}

TEST_CASE("dataset loader error kinds are distinct") {
    Rng rng(12);
    auto env = wrap(tu::structured_spec(rng, 3, 2, 2));
    BehaviorPolicySet set;
    set.policies.push_back(tu::uniform_policy(3, 2));
    const auto ds = collect(env, set, 3, 5, 41);
    const auto dir = std::filesystem::temp_directory_path();
    const auto path = dir / "seprl_ds_err.jsonl";
    save_dataset(ds, path);
    const std::string good = read_file(path);

    SUBCASE("bumped format version") {
        auto pos = good.find('\n');
        json header = json::parse(good.substr(0, pos));
        header["format_version"] = kFormatVersion + 1;
        atomic_write_file(path, header.dump() + good.substr(pos));
        try {
            load_dataset(path);
            FAIL("expected version error");
        } catch (const ArtifactError& e) {
            CHECK(e.kind == ArtifactError::Kind::version);
        }
    }
    SUBCASE("mismatched lengths name the line") {
        std::istringstream in(good);
        std::string out, line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line_no == 3) {
                json j = json::parse(line);
                j["actions"].erase(0);
                line = j.dump();
            }
            out += line + "\n";
        }
        atomic_write_file(path, out);
        try {
            load_dataset(path);
            FAIL("expected parse error");
        } catch (const ArtifactError& e) {
            CHECK(e.kind == ArtifactError::Kind::parse);
            CHECK(std::string(e.what()).find("line 3") != std::string::npos);
        }
    }
    SUBCASE("truncated file") {
        const auto pos = good.rfind('\n', good.size() - 2);
        atomic_write_file(path, good.substr(0, pos + 1));
        try {
            load_dataset(path);
            FAIL("expected truncation error");
        } catch (const ArtifactError& e) {
            CHECK(e.kind == ArtifactError::Kind::truncated);
        }
    }
    SUBCASE("fingerprint mismatch") {
        atomic_write_file(path, good);
        try {
            load_dataset(path, ds.env_fingerprint + 1);
            FAIL("expected fingerprint error");
        } catch (const ArtifactError& e) {
            CHECK(e.kind == ArtifactError::Kind::fingerprint);
        }
    }
    std::filesystem::remove(path);
}

TEST_CASE("identical seeds produce byte-identical datasets") {
    Rng rng(13);
    auto env = wrap(tu::structured_spec(rng, 4, 3, 2));
    Rng prng1(14), prng2(14);
    const auto set1 = make_behavior_policies(env.spec, Tier::random, 3, prng1);
    const auto set2 = make_behavior_policies(env.spec, Tier::random, 3, prng2);
    const auto dir = std::filesystem::temp_directory_path();
    const auto p1 = dir / "seprl_det_a.jsonl";
    const auto p2 = dir / "seprl_det_b.jsonl";
    save_dataset(collect(env, set1, 15, 25, 7), p1);
    save_dataset(collect(env, set2, 15, 25, 7), p2);
    CHECK(read_file(p1) == read_file(p2));
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}

TEST_CASE("tier ordering holds on at least 90% of seeds") {
    const int n_seeds = 20;
    int ordered = 0;
    for (int seed = 0; seed < n_seeds; ++seed) {
        Rng rng(1000 + static_cast<std::uint64_t>(seed));
        auto env = wrap(tu::structured_spec(rng, 5, 3, 2));
        Rng prng(2000 + static_cast<std::uint64_t>(seed));
        const int n_traj = 30, horizon = 60;

        const auto rand_set = make_behavior_policies(env.spec, Tier::random, 3, prng);
        const auto rep_set = make_behavior_policies(env.spec, Tier::medium_replay, 5, prng);
        const auto med_set = make_behavior_policies(env.spec, Tier::medium, 1, prng);

        const std::uint64_t s = 3000 + static_cast<std::uint64_t>(seed);
        const double r_rand = collect(env, rand_set, n_traj, horizon, s).stats().mean;
        const double r_rep = collect(env, rep_set, n_traj, horizon, s + 1).stats().mean;
        const double r_med = collect(env, med_set, n_traj, horizon, s + 2).stats().mean;
        if (r_rand <= r_rep && r_rep <= r_med) ++ordered;
    }
    CHECK(ordered >= 18);
}
