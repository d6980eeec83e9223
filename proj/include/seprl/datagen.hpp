#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seprl/common.hpp"
#include "seprl/exbmdp.hpp"

namespace seprl {

enum class Tier { random, medium_replay, medium };

std::string tier_name(Tier t);
Tier tier_from_name(const std::string& name);

/// One episode: observation ids (horizon + 1), actions and rewards (horizon).
struct Trajectory {
    int policy_id = 0;
    std::vector<int> observations;
    std::vector<int> actions;
    numvec rewards;

    int steps() const { return static_cast<int>(actions.size()); }
    double episode_return() const {
        double s = 0.0;
        for (const double r : rewards) s += r;
        return s;
    }
};

/// Summary of per-episode returns (Table-3 style). Percentiles use linear
/// interpolation between closest ranks; std is the sample standard deviation.
struct DatasetStats {
    long long count = 0;
    double mean = 0.0;
    double stddev = 0.0;
    double min = 0.0;
    double p25 = 0.0;
    double median = 0.0;
    double p75 = 0.0;
    double max = 0.0;

    bool operator==(const DatasetStats&) const = default;
};

DatasetStats compute_stats(std::span<const Trajectory> trajectories);

struct OfflineDataset {
    Tier tier = Tier::random;
    std::uint64_t env_fingerprint = 0;
    int horizon = 0;
    int n_act = 0;
    int n_obs = 0;
    int policy_count = 0;
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;
    std::vector<Trajectory> trajectories;

    int n_traj() const { return static_cast<int>(trajectories.size()); }
    DatasetStats stats() const { return compute_stats(trajectories); }
};

struct BehaviorPolicySet {
    Tier tier = Tier::random;
    std::vector<PolicyTable> policies;
};

// ---------------------------------------------------------------------------
// Behavior policies
// ---------------------------------------------------------------------------

/// random:        `count` independent policies with Dirichlet(1) rows.
/// medium:        one mixture of the optimal policy with uniform, bisected so
///                its return lands in [40%, 60%] of the optimal return.
/// medium_replay: `count` snapshots of damped policy iteration from uniform,
///                capped once a snapshot reaches the medium policy's return.
BehaviorPolicySet make_behavior_policies(const ExBmdpSpec& spec, Tier tier, int count,
                                         Rng& rng);

/// Greedy policy of the spec's own dynamics (value iteration oracle).
PolicyTable optimal_policy(const ExBmdpSpec& spec, double tol = 1e-12);

// ---------------------------------------------------------------------------
// Collection
// ---------------------------------------------------------------------------

/// Rolls out `n_traj` episodes of `horizon` steps under a round-robin policy
/// assignment. Trajectory i draws from a stream derived from (seed, i), so
/// the result is independent of the parallel schedule.
OfflineDataset collect(const EnvArtifact& env, const BehaviorPolicySet& policies,
                       int n_traj, int horizon, std::uint64_t seed, Exec exec = Exec::par);

/// Shannon entropy (nats) of the pooled empirical action distribution.
double action_entropy(std::span<const Trajectory> batch);

// ---------------------------------------------------------------------------
// Persistence: one JSON header line, then one JSON object per trajectory.
// Rewards are stored as decimal strings so round-trips are bit-exact.
// ---------------------------------------------------------------------------

/// Canonical byte form, identical to the saved file.
std::string dataset_to_string(const OfflineDataset& ds);
std::uint64_t dataset_fingerprint(const OfflineDataset& ds);

void save_dataset(const OfflineDataset& ds, const std::filesystem::path& path);
OfflineDataset load_dataset(const std::filesystem::path& path,
                            std::optional<std::uint64_t> expected_fingerprint = {});

}  // namespace seprl
