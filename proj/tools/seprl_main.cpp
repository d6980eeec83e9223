// Command-line harness: environment generation, staged pipeline runs
// (collect -> train-model -> plan -> evaluate), ablation grids, and the
// theory verification suite.
//
// Exit codes: 0 success, 1 check failure, 2 usage error, 3 artifact error.

#include <chrono>
#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "seprl/harness.hpp"

using namespace seprl;

namespace {

struct StageTimer {
    const char* name;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    explicit StageTimer(const char* n) : name(n) {}
    ~StageTimer() {
        const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                            std::chrono::steady_clock::now() - start)
                            .count();
        std::printf("%s finished in %lld ms\n", name, static_cast<long long>(ms));
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tabular separated-model offline RL testbed"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Load options from a config file; flags override it");

    ExperimentConfig cfg;
    bool serial = false;
    app.add_flag("--serial", serial, "Run the data-parallel kernels single-threaded");

    std::string env_path = "env.json";
    std::string decoder_path = "decoder.json";
    std::string dataset_path = "dataset.jsonl";
    std::string model_path = "model.json";
    std::string policy_path = "policy.json";
    std::string eval_path = "eval.json";
    std::string csv_path;
    std::string dump_path;
    std::string out_dir = ".";
    std::vector<std::string> stats_paths;
    std::vector<std::string> suites;
    std::string theory_out;
    TheorySuiteOptions theory_opts;

    auto add_env_options = [&](CLI::App* cmd) {
        cmd->add_option("--env-seed", cfg.env_seed, "Environment generation seed");
        cmd->add_option("--n-endo", cfg.n_endo, "Endogenous state count");
        cmd->add_option("--n-exo", cfg.n_exo, "Exogenous state count");
        cmd->add_option("--n-act", cfg.n_act, "Action count");
        cmd->add_option("--drift", cfg.drift,
                        "Exogenous drift: static | slow_cycle | fast_random_walk");
        cmd->add_option("--gamma", cfg.gamma, "Discount factor");
    };
    auto add_data_options = [&](CLI::App* cmd) {
        cmd->add_option("--tier", cfg.tier, "Dataset tier: random | medium_replay | medium");
        cmd->add_option("--n-traj", cfg.n_traj, "Trajectories to collect");
        cmd->add_option("--horizon", cfg.horizon, "Steps per trajectory");
        cmd->add_option("--random-policy-block", cfg.random_policy_block,
                        "Trajectories per random-tier policy");
        cmd->add_option("--replay-snapshots", cfg.replay_snapshots,
                        "Snapshots in the medium_replay tier");
    };
    auto add_model_options = [&](CLI::App* cmd) {
        cmd->add_option("--schedule", cfg.schedule, "Sampling: conservative | random");
        cmd->add_flag("--joint", cfg.joint, "Fit the joint-latent baseline");
        cmd->add_flag("--heldout", cfg.heldout,
                      "Score partitions on held-out segments instead of plug-in");
        cmd->add_option("--ensemble-size", cfg.ensemble_size, "Ensemble members K");
        cmd->add_option("--alpha", cfg.alpha, "Additive smoothing");
        cmd->add_option("--epochs", cfg.epochs, "Schedule epochs (0: one per trajectory)");
        cmd->add_option("--batch-segments", cfg.batch_segments, "Segments per batch");
        cmd->add_option("--segment-len", cfg.segment_len, "Steps per segment");
    };
    auto add_plan_options = [&](CLI::App* cmd) {
        cmd->add_option("--lambda", cfg.lambda, "Uncertainty penalty weight");
        cmd->add_option("--estimator", cfg.estimator, "Uncertainty estimator: md | vlp");
        cmd->add_option("--plan-tol", cfg.plan_tol, "Value-iteration residual target");
    };

    CLI::App* c_gen = app.add_subcommand("generate-env", "Write env.json and decoder.json");
    add_env_options(c_gen);
    c_gen->add_option("--out-env", env_path, "Environment output path");
    c_gen->add_option("--out-decoder", decoder_path, "Decoder output path");

    CLI::App* c_collect = app.add_subcommand("collect", "Roll out an offline dataset");
    add_data_options(c_collect);
    c_collect->add_option("--env", env_path, "Environment file")->required();
    c_collect->add_option("--out", dataset_path, "Dataset output path");
    c_collect->add_option("--seed", cfg.master_seed, "Master seed");

    CLI::App* c_train = app.add_subcommand(
        "train-model", "Discover the partition and fit the transition ensemble");
    add_model_options(c_train);
    c_train->add_option("--dataset", dataset_path, "Dataset file")->required();
    c_train->add_option("--decoder", decoder_path, "Decoder file")->required();
    c_train->add_option("--out", model_path, "Model output path");
    c_train->add_option("--seed", cfg.master_seed, "Master seed");

    CLI::App* c_plan = app.add_subcommand("plan", "Plan against the penalized model");
    add_plan_options(c_plan);
    c_plan->add_option("--model", model_path, "Model file")->required();
    c_plan->add_option("--out", policy_path, "Policy output path");
    c_plan->add_option("--seed", cfg.master_seed, "Master seed");
    c_plan->add_option("--dump-penalized", dump_path, "Debug dump of the penalized MDP");

    CLI::App* c_eval = app.add_subcommand("evaluate", "Exact evaluation in the true environment");
    c_eval->add_option("--env", env_path, "Environment file")->required();
    c_eval->add_option("--policy", policy_path, "Policy file")->required();
    c_eval->add_option("--stats", stats_paths, "Dataset files supplying return stats")
        ->required()
        ->expected(-1);
    c_eval->add_option("--out", eval_path, "Evaluation report path");
    c_eval->add_option("--csv", csv_path, "Append a summary row to this CSV log");
    c_eval->add_option("--seed", cfg.master_seed, "Master seed");

    CLI::App* c_ablate = app.add_subcommand(
        "ablate", "Grid of schedule/model/estimator/lambda cells across seeds");
    add_env_options(c_ablate);
    add_data_options(c_ablate);
    add_model_options(c_ablate);
    add_plan_options(c_ablate);
    c_ablate->add_option("--schedules", cfg.schedules, "Schedules in the grid");
    c_ablate->add_option("--models", cfg.models, "Model kinds: separated | joint");
    c_ablate->add_option("--estimators", cfg.estimators, "Estimators in the grid");
    c_ablate->add_option("--lambdas", cfg.lambdas, "Penalty weights in the grid");
    c_ablate->add_option("--tiers", cfg.tiers, "Tiers in the grid");
    c_ablate->add_option("--n-seeds", cfg.n_seeds, "Seeds per cell");
    c_ablate->add_option("--seed", cfg.master_seed, "Master seed");
    c_ablate->add_option("--out-dir", out_dir, "Directory for ablate.csv and run_report.json");

    CLI::App* c_theory = app.add_subcommand("verify-theory", "Run the theory check suites");
    c_theory->add_option("--out", theory_out, "Report output path (default: stdout only)");
    c_theory->add_option("--suite", suites,
                         "Suites: telescoping bound sampling mi admissibility");
    c_theory->add_option("--telescoping-count", theory_opts.telescoping_count,
                         "Telescoping instances");
    c_theory->add_option("--bound-count", theory_opts.bound_count, "Bound instances");
    c_theory->add_option("--sampling-count", theory_opts.sampling_count,
                         "Sampling instances");
    c_theory->add_option("--mi-count", theory_opts.mi_count, "Mutual-information instances");
    c_theory->add_option("--admissibility-envs", theory_opts.admissibility_envs,
                         "Environments for the calibration report");
    c_theory->add_option("--seed", theory_opts.seed, "Suite seed");
    c_theory->add_flag("--force-zero-uncertainty", theory_opts.force_zero_uncertainty,
                       "Deliberately break admissibility (the bound suite must fail)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    }

    const Exec exec = serial ? Exec::seq : Exec::par;

    try {
        if (*c_gen) {
            StageTimer t("generate-env");
            stage_generate_env(cfg, env_path, decoder_path);
            std::printf("wrote %s and %s (config %s)\n", env_path.c_str(),
                        decoder_path.c_str(), hex64(cfg.config_hash()).c_str());
        } else if (*c_collect) {
            StageTimer t("collect");
            stage_collect(cfg, env_path, dataset_path);
            std::printf("wrote %s (config %s, seed %llu)\n", dataset_path.c_str(),
                        hex64(cfg.config_hash()).c_str(),
                        static_cast<unsigned long long>(cfg.master_seed));
        } else if (*c_train) {
            StageTimer t("train-model");
            stage_train(cfg, dataset_path, decoder_path, model_path);
            std::printf("wrote %s\n", model_path.c_str());
        } else if (*c_plan) {
            StageTimer t("plan");
            stage_plan(cfg, model_path, policy_path, dump_path);
            std::printf("wrote %s\n", policy_path.c_str());
        } else if (*c_eval) {
            StageTimer t("evaluate");
            std::vector<std::filesystem::path> stats(stats_paths.begin(), stats_paths.end());
            const json report = stage_evaluate(cfg, env_path, policy_path, stats, eval_path,
                                               csv_path.empty()
                                                   ? std::filesystem::path{}
                                                   : std::filesystem::path(csv_path));
            std::printf("return %s normalized %s -> %s\n",
                        report.at("return_raw").get<std::string>().c_str(),
                        report.at("return_normalized").get<std::string>().c_str(),
                        eval_path.c_str());
        } else if (*c_ablate) {
            StageTimer t("ablate");
            const AblationResult result = run_ablation(cfg, exec);
            const auto dir = std::filesystem::path(out_dir);
            std::filesystem::create_directories(dir);
            atomic_write_file(dir / "ablate.csv", result.csv);
            atomic_write_file(dir / "run_report.json", result.report.dump(2) + "\n");
            int ok = 0, failed = 0;
            for (const auto& c : result.cells) (c.ok ? ok : failed) += 1;
            std::printf("ablate: %d cells ok, %d failed -> %s\n", ok, failed,
                        (dir / "ablate.csv").string().c_str());
        } else if (*c_theory) {
            StageTimer t("verify-theory");
            theory_opts.suites = std::set<std::string>(suites.begin(), suites.end());
            const TheorySuiteResult result = run_theory_suite(theory_opts, exec);
            for (const auto& [name, agg] : result.report.at("aggregate").items())
                std::printf("%-18s %s/%s passed\n", name.c_str(),
                            agg.at("passed").dump().c_str(), agg.at("count").dump().c_str());
            if (!theory_out.empty())
                atomic_write_file(theory_out, result.report.dump(2) + "\n");
            std::printf("verify-theory: %s\n", result.all_pass ? "all checks passed"
                                                               : "CHECK FAILURES");
            return result.all_pass ? 0 : 1;
        }
    } catch (const ArtifactError& e) {
        std::cerr << "artifact error: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
