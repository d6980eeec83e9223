#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "seprl/common.hpp"
#include "seprl/datagen.hpp"
#include "seprl/exbmdp.hpp"
#include "seprl/penalize.hpp"
#include "seprl/sepmodel.hpp"
#include "seprl/theory.hpp"

namespace seprl {

/// Everything a run needs. The config hash covers all fields except the
/// master seed and output paths, so (format version, config hash, master
/// seed) identifies an artifact byte-for-byte.
struct ExperimentConfig {
    // environment
    std::uint64_t env_seed = 1;
    int n_endo = 4;
    int n_exo = 6;
    int n_act = 2;
    std::string drift = "slow_cycle";  // static | slow_cycle | fast_random_walk
    double gamma = 0.95;
    // data
    std::string tier = "random";
    int n_traj = 40;
    int horizon = 100;
    int random_policy_block = 10;  // one random policy per this many trajectories
    int replay_snapshots = 5;
    // model
    std::string schedule = "conservative";
    bool joint = false;
    bool heldout = false;
    int ensemble_size = 5;
    double alpha = 0.1;
    int epochs = 0;  // 0 means one epoch per trajectory
    int batch_segments = 16;
    int segment_len = 50;
    // planning
    double lambda = 1.0;
    std::string estimator = "md";
    double plan_tol = 1e-10;
    // ablation grids
    std::vector<std::string> schedules{"conservative", "random"};
    std::vector<std::string> models{"separated", "joint"};
    std::vector<std::string> estimators{"md"};
    std::vector<double> lambdas{1.0};
    std::vector<std::string> tiers{"random", "medium_replay", "medium"};
    int n_seeds = 4;
    // harness
    std::uint64_t master_seed = 0;
    std::string out_dir = ".";

    json to_json(bool include_run_identity) const;
    std::uint64_t config_hash() const;
};

// ---------------------------------------------------------------------------
// Stage functions. Model training and planning never see the environment
// file; they work from the dataset and the decoder alone.
// ---------------------------------------------------------------------------

/// Synthesizes the ground-truth environment for the config: controllable
/// endogenous cycle, sparse rewards, and the configured exogenous drift.
EnvArtifact generate_env(const ExperimentConfig& config);

/// Behavior policies for a tier, sized per the config's tier conventions.
BehaviorPolicySet tier_policies(const ExBmdpSpec& spec, Tier tier,
                                const ExperimentConfig& config, std::uint64_t seed);

void stage_generate_env(const ExperimentConfig& config,
                        const std::filesystem::path& env_path,
                        const std::filesystem::path& decoder_path);

void stage_collect(const ExperimentConfig& config, const std::filesystem::path& env_path,
                   const std::filesystem::path& dataset_path);

/// Discovers the partition over the configured schedule and fits the
/// ensemble. Inputs: dataset + decoder only.
void stage_train(const ExperimentConfig& config, const std::filesystem::path& dataset_path,
                 const std::filesystem::path& decoder_path,
                 const std::filesystem::path& model_path);

void stage_plan(const ExperimentConfig& config, const std::filesystem::path& model_path,
                const std::filesystem::path& policy_path,
                const std::filesystem::path& penalized_dump_path = {});

/// Evaluates a policy file in the true environment; normalization stats are
/// pooled from the given dataset files' headers. Returns the report JSON.
json stage_evaluate(const ExperimentConfig& config, const std::filesystem::path& env_path,
                    const std::filesystem::path& policy_path,
                    const std::vector<std::filesystem::path>& stats_paths,
                    const std::filesystem::path& eval_path,
                    const std::filesystem::path& csv_append_path = {});

// ---------------------------------------------------------------------------
// Ablation grid
// ---------------------------------------------------------------------------

struct CellResult {
    std::string schedule;
    std::string model;  // separated | joint
    std::string estimator;
    double lambda = 0.0;
    std::string tier;
    int seed = 0;
    bool ok = false;
    std::string error;
    double return_raw = 0.0;
    double return_norm = 0.0;
    double entropy_early_mean = 0.0;
    double uncertainty_mean = 0.0;
    int partition_recovered = -1;  // -1 when not applicable (joint)
    bool degenerate = false;
};

struct AblationResult {
    std::vector<CellResult> cells;
    std::string csv;  // fixed documented columns, schema version in header
    json report;      // run report: per-seed stats, entropy series, cells
};

AblationResult run_ablation(const ExperimentConfig& config, Exec exec = Exec::par);

// ---------------------------------------------------------------------------
// Theory suite
// ---------------------------------------------------------------------------

struct TheorySuiteOptions {
    std::set<std::string> suites;  // empty set means "all"
    int telescoping_count = 1000;
    int bound_count = 100;
    int sampling_count = 100;
    int mi_count = 100;
    int admissibility_envs = 12;
    std::uint64_t seed = 2024;
    bool force_zero_uncertainty = false;
};

struct TheorySuiteResult {
    json report;  // one JSON report per check plus an aggregate summary
    bool all_pass = false;
};

TheorySuiteResult run_theory_suite(const TheorySuiteOptions& opts, Exec exec = Exec::par);

}  // namespace seprl
