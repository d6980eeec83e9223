#include "seprl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace seprl {

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

json ExperimentConfig::to_json(bool include_run_identity) const {
    json j;
    j["format_version"] = kFormatVersion;
    j["env_seed"] = env_seed;
    j["n_endo"] = n_endo;
    j["n_exo"] = n_exo;
    j["n_act"] = n_act;
    j["drift"] = drift;
    j["gamma"] = fmt_double(gamma);
    j["tier"] = tier;
    j["n_traj"] = n_traj;
    j["horizon"] = horizon;
    j["random_policy_block"] = random_policy_block;
    j["replay_snapshots"] = replay_snapshots;
    j["schedule"] = schedule;
    j["joint"] = joint;
    j["heldout"] = heldout;
    j["ensemble_size"] = ensemble_size;
    j["alpha"] = fmt_double(alpha);
    j["epochs"] = epochs;
    j["batch_segments"] = batch_segments;
    j["segment_len"] = segment_len;
    j["lambda"] = fmt_double(lambda);
    j["estimator"] = estimator;
    j["plan_tol"] = fmt_double(plan_tol);
    j["schedules"] = schedules;
    j["models"] = models;
    j["estimators"] = estimators;
    json ls = json::array();
    for (const double l : lambdas) ls.push_back(fmt_double(l));
    j["lambdas"] = std::move(ls);
    j["tiers"] = tiers;
    j["n_seeds"] = n_seeds;
    if (include_run_identity) {
        j["master_seed"] = master_seed;
        j["out_dir"] = out_dir;
    }
    return j;
}

std::uint64_t ExperimentConfig::config_hash() const { return fnv1a64(to_json(false).dump()); }

// ---------------------------------------------------------------------------
// Environment generation
// ---------------------------------------------------------------------------

EnvArtifact generate_env(const ExperimentConfig& config) {
    if (config.n_endo < 2 || config.n_exo < 1 || config.n_act < 1)
        throw ConfigError("generate_env: sizes must be at least 2 endo, 1 exo, 1 action");
    if (!(config.gamma >= 0.0 && config.gamma < 1.0))
        throw ConfigError("generate_env: discount must lie in [0,1)");

    Rng rng(derive_seed(config.env_seed, 0xE21));
    EnvArtifact env;
    env.seed = config.env_seed;
    env.drift = config.drift;
    env.config_hash = config.config_hash();
    auto& s = env.spec;
    s.n_endo = config.n_endo;
    s.n_exo = config.n_exo;
    s.n_act = config.n_act;
    s.discount = config.gamma;

    // controllable endogenous cycle: action a drifts toward state (e + a)
    s.endo_trans.assign(static_cast<std::size_t>(s.n_endo),
                        numvecvec(static_cast<std::size_t>(s.n_act)));
    for (int e = 0; e < s.n_endo; ++e)
        for (int a = 0; a < s.n_act; ++a) {
            const int dominant = (e + a) % s.n_endo;
            const double spread = 0.15 * rng.uniform();
            numvec row = rng.dirichlet_uniform(s.n_endo);
            for (auto& v : row) v *= spread;
            row[static_cast<std::size_t>(dominant)] += 1.0 - spread;
            s.endo_trans[static_cast<std::size_t>(e)][static_cast<std::size_t>(a)] =
                std::move(row);
        }

    s.exo_trans.assign(static_cast<std::size_t>(s.n_exo),
                       numvec(static_cast<std::size_t>(s.n_exo), 0.0));
    if (config.drift == "static") {
        for (int x = 0; x < s.n_exo; ++x)
            s.exo_trans[static_cast<std::size_t>(x)][static_cast<std::size_t>(x)] = 1.0;
    } else if (config.drift == "slow_cycle") {
        for (int x = 0; x < s.n_exo; ++x) {
            s.exo_trans[static_cast<std::size_t>(x)][static_cast<std::size_t>(x)] = 0.8;
            s.exo_trans[static_cast<std::size_t>(x)]
                       [static_cast<std::size_t>((x + 1) % s.n_exo)] += 0.2;
        }
    } else if (config.drift == "fast_random_walk") {
        for (int x = 0; x < s.n_exo; ++x)
            s.exo_trans[static_cast<std::size_t>(x)] = rng.dirichlet_uniform(s.n_exo);
    } else {
        throw ConfigError("generate_env: unknown drift profile '" + config.drift + "'");
    }

    s.reward.assign(static_cast<std::size_t>(s.n_endo),
                    numvec(static_cast<std::size_t>(s.n_act)));
    for (auto& row : s.reward)
        for (auto& v : row) v = 0.1 * rng.uniform();
    s.reward[static_cast<std::size_t>(s.n_endo - 1)][0] = 1.0;

    s.emission.assign(static_cast<std::size_t>(s.n_endo),
                      std::vector<int>(static_cast<std::size_t>(s.n_exo)));
    for (int e = 0; e < s.n_endo; ++e)
        for (int x = 0; x < s.n_exo; ++x)
            s.emission[static_cast<std::size_t>(e)][static_cast<std::size_t>(x)] =
                e * s.n_exo + x;
    s.init_endo.assign(static_cast<std::size_t>(s.n_endo), 1.0 / s.n_endo);
    s.init_exo.assign(static_cast<std::size_t>(s.n_exo), 1.0 / s.n_exo);

    env.endo_factor_index = static_cast<int>(rng.uniform_int(2));
    return env;
}

BehaviorPolicySet tier_policies(const ExBmdpSpec& spec, Tier tier,
                                const ExperimentConfig& config, std::uint64_t seed) {
    Rng rng(seed);
    int count = 1;
    switch (tier) {
        case Tier::random:
            count = std::max(1, config.n_traj / std::max(1, config.random_policy_block));
            break;
        case Tier::medium_replay:
            count = std::max(1, config.replay_snapshots);
            break;
        case Tier::medium:
            count = 1;
            break;
    }
    return make_behavior_policies(spec, tier, count, rng);
}

// ---------------------------------------------------------------------------
// Policy artifact
// ---------------------------------------------------------------------------

namespace {

struct PolicyArtifact {
    std::string space = "factor";  // factor | joint
    int factor = 0;                // decoder factor index; -1 for joint
    std::array<int, 2> factor_dims{0, 0};
    PolicyTable policy;
    std::uint64_t env_fingerprint = 0;
    std::uint64_t dataset_fingerprint = 0;
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    double gamma = 0.95;
    double lambda = 1.0;
    std::string estimator = "md";
};

json policy_to_json(const PolicyArtifact& p) {
    json j;
    j["format_version"] = kFormatVersion;
    j["kind"] = "policy";
    j["space"] = p.space;
    j["factor"] = p.factor;
    j["factor_dims"] = {p.factor_dims[0], p.factor_dims[1]};
    j["n_states"] = p.policy.n_states();
    j["n_act"] = p.policy.n_actions();
    json probs = json::array();
    for (const auto& row : p.policy.probs)
        for (const double v : row) probs.push_back(fmt_double(v));
    j["probs"] = std::move(probs);
    j["env_fingerprint"] = hex64(p.env_fingerprint);
    j["dataset_fingerprint"] = hex64(p.dataset_fingerprint);
    j["config_hash"] = hex64(p.config_hash);
    j["seed"] = p.seed;
    j["gamma"] = fmt_double(p.gamma);
    j["lambda"] = fmt_double(p.lambda);
    j["estimator"] = p.estimator;
    return j;
}

PolicyArtifact policy_from_json(const json& j) {
    if (j.at("format_version").get<int>() != kFormatVersion)
        throw ArtifactError(ArtifactError::Kind::version, "unsupported policy format version");
    if (j.at("kind").get<std::string>() != "policy")
        throw ArtifactError(ArtifactError::Kind::parse, "not a policy file");
    PolicyArtifact p;
    p.space = j.at("space").get<std::string>();
    p.factor = j.at("factor").get<int>();
    p.factor_dims = {j.at("factor_dims").at(0).get<int>(),
                     j.at("factor_dims").at(1).get<int>()};
    const int ns = j.at("n_states").get<int>();
    const int na = j.at("n_act").get<int>();
    const auto& probs = j.at("probs");
    if (static_cast<int>(probs.size()) != ns * na)
        throw ArtifactError(ArtifactError::Kind::parse, "policy table shape mismatch");
    p.policy.probs.assign(static_cast<std::size_t>(ns),
                          numvec(static_cast<std::size_t>(na)));
    std::size_t k = 0;
    for (auto& row : p.policy.probs)
        for (auto& v : row) v = parse_double(probs.at(k++).get_ref<const std::string&>());
    p.env_fingerprint = parse_hex64(j.at("env_fingerprint").get_ref<const std::string&>());
    p.dataset_fingerprint =
        parse_hex64(j.at("dataset_fingerprint").get_ref<const std::string&>());
    p.config_hash = parse_hex64(j.at("config_hash").get_ref<const std::string&>());
    p.seed = j.at("seed").get<std::uint64_t>();
    p.gamma = parse_double(j.at("gamma").get_ref<const std::string&>());
    p.lambda = parse_double(j.at("lambda").get_ref<const std::string&>());
    p.estimator = j.at("estimator").get<std::string>();
    return p;
}

PolicyArtifact load_policy(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ArtifactError(ArtifactError::Kind::parse,
                            "cannot parse '" + path.string() + "': " + e.what());
    }
    return policy_from_json(j);
}

/// Maps each latent pair to the policy's state index for product-chain
/// evaluation. Handles endogenous, exogenous (mislabeled partition), and
/// joint policy spaces.
std::vector<std::vector<int>> policy_state_map(const EnvArtifact& env,
                                               const PolicyArtifact& pol) {
    const auto& spec = env.spec;
    std::vector<std::vector<int>> map(static_cast<std::size_t>(spec.n_endo),
                                      std::vector<int>(static_cast<std::size_t>(spec.n_exo)));
    const bool endo_first = env.endo_factor_index == 0;
    for (int e = 0; e < spec.n_endo; ++e)
        for (int x = 0; x < spec.n_exo; ++x) {
            const int f0 = endo_first ? e : x;
            const int f1 = endo_first ? x : e;
            int ps;
            if (pol.space == "joint")
                ps = f0 * pol.factor_dims[1] + f1;
            else
                ps = pol.factor == 0 ? f0 : f1;
            map[static_cast<std::size_t>(e)][static_cast<std::size_t>(x)] = ps;
        }
    return map;
}

double evaluate_artifact(const EnvArtifact& env, const PolicyArtifact& pol) {
    return exact_return_product(env.spec, pol.policy, policy_state_map(env, pol));
}

struct StatsHeader {
    std::uint64_t env_fingerprint = 0;
    std::string tier;
    DatasetStats stats;
};

StatsHeader read_stats_header(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw ArtifactError(ArtifactError::Kind::missing, "cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line))
        throw ArtifactError(ArtifactError::Kind::truncated, "'" + path.string() + "' is empty");
    json header;
    try {
        header = json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw ArtifactError(ArtifactError::Kind::parse,
                            path.string() + ": bad header: " + e.what());
    }
    if (!header.contains("kind") || header.at("kind").get<std::string>() != "offline_dataset")
        throw ArtifactError(ArtifactError::Kind::parse,
                            path.string() + " is not a dataset file");
    StatsHeader out;
    out.env_fingerprint =
        parse_hex64(header.at("env_fingerprint").get_ref<const std::string&>());
    out.tier = header.at("tier").get<std::string>();
    const auto& st = header.at("stats");
    out.stats.count = st.at("count").get<long long>();
    out.stats.min = parse_double(st.at("min").get_ref<const std::string&>());
    out.stats.max = parse_double(st.at("max").get_ref<const std::string&>());
    out.stats.mean = parse_double(st.at("mean").get_ref<const std::string&>());
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

void stage_generate_env(const ExperimentConfig& config,
                        const std::filesystem::path& env_path,
                        const std::filesystem::path& decoder_path) {
    const EnvArtifact env = generate_env(config);
    const ValidationReport rep = validate(env.spec);
    if (!rep.ok())
        throw std::logic_error("generate_env produced an invalid spec:\n" + rep.to_string());
    save_env(env, env_path);
    save_decoder(FactorDecoder::from_env(env), decoder_path);
}

void stage_collect(const ExperimentConfig& config, const std::filesystem::path& env_path,
                   const std::filesystem::path& dataset_path) {
    const EnvArtifact env = load_env(env_path);
    const Tier tier = tier_from_name(config.tier);
    const BehaviorPolicySet policies =
        tier_policies(env.spec, tier, config, derive_seed(config.master_seed, 0xB0));
    OfflineDataset ds = collect(env, policies, config.n_traj, config.horizon,
                                derive_seed(config.master_seed, 0xC0));
    ds.config_hash = config.config_hash();
    save_dataset(ds, dataset_path);
}

void stage_train(const ExperimentConfig& config, const std::filesystem::path& dataset_path,
                 const std::filesystem::path& decoder_path,
                 const std::filesystem::path& model_path) {
    const FactorDecoder decoder = load_decoder(decoder_path);
    const OfflineDataset ds = load_dataset(dataset_path);
    if (ds.env_fingerprint != decoder.env_fingerprint)
        throw ArtifactError(ArtifactError::Kind::fingerprint,
                            "dataset environment " + hex64(ds.env_fingerprint) +
                                " does not match decoder environment " +
                                hex64(decoder.env_fingerprint));

    const int epochs = config.epochs > 0 ? config.epochs : ds.n_traj();
    EnsembleModel model;
    if (config.joint) {
        model = fit_joint_model(ds, decoder, config.ensemble_size, config.alpha,
                                derive_seed(config.master_seed, 0xF1));
    } else {
        SamplingSchedule schedule;
        schedule.mode = sample_mode_from_name(config.schedule);
        schedule.batch_segments = config.batch_segments;
        schedule.segment_len = config.segment_len;
        const PartitionResult pr = discover_partition(
            ds, decoder, schedule, config.alpha, epochs,
            derive_seed(config.master_seed, 0xD1), 0.02,
            config.heldout ? LoglikMode::heldout : LoglikMode::plugin);
        Partition partition = pr.partition;
        partition.degenerate = false;  // proceed with the argmax; row records the flag
        model = fit_separated_model(ds, decoder, partition, config.ensemble_size,
                                    config.alpha, derive_seed(config.master_seed, 0xF1));
        model.partition.degenerate = pr.partition.degenerate;
    }
    model.config_hash = config.config_hash();
    save_model(model, model_path);
}

void stage_plan(const ExperimentConfig& config, const std::filesystem::path& model_path,
                const std::filesystem::path& policy_path,
                const std::filesystem::path& penalized_dump_path) {
    const EnsembleModel model = load_model(model_path);
    const Estimator est = estimator_from_name(config.estimator);
    const PenalizedMdp pm = build_penalized(model, est, config.lambda, model.discount);
    if (!penalized_dump_path.empty()) {
        json dump = penalized_to_json(pm);
        dump["config_hash"] = hex64(config.config_hash());
        dump["seed"] = config.master_seed;
        atomic_write_file(penalized_dump_path, dump.dump() + "\n");
    }
    const PlanResult res = plan(pm, config.plan_tol);

    PolicyArtifact artifact;
    artifact.space = model.joint ? "joint" : "factor";
    artifact.factor = model.joint ? -1 : model.partition.endo_factor;
    artifact.factor_dims = model.factor_dims;
    artifact.policy = res.policy;
    artifact.env_fingerprint = model.env_fingerprint;
    artifact.dataset_fingerprint = model.dataset_fingerprint;
    artifact.config_hash = config.config_hash();
    artifact.seed = config.master_seed;
    artifact.gamma = model.discount;
    artifact.lambda = config.lambda;
    artifact.estimator = config.estimator;
    atomic_write_file(policy_path, policy_to_json(artifact).dump() + "\n");
}

json stage_evaluate(const ExperimentConfig& config, const std::filesystem::path& env_path,
                    const std::filesystem::path& policy_path,
                    const std::vector<std::filesystem::path>& stats_paths,
                    const std::filesystem::path& eval_path,
                    const std::filesystem::path& csv_append_path) {
    const EnvArtifact env = load_env(env_path);
    const std::uint64_t env_fp = env_fingerprint(env);
    const PolicyArtifact pol = load_policy(policy_path);
    if (pol.env_fingerprint != env_fp)
        throw ArtifactError(ArtifactError::Kind::fingerprint,
                            "policy was trained on environment " +
                                hex64(pol.env_fingerprint) + ", evaluating on " +
                                hex64(env_fp));
    if (stats_paths.empty())
        throw ConfigError("stage_evaluate: at least one stats dataset is required");

    NormalizationStats stats{std::numeric_limits<double>::infinity(),
                             -std::numeric_limits<double>::infinity()};
    json stats_used = json::array();
    for (const auto& path : stats_paths) {
        const StatsHeader header = read_stats_header(path);
        if (header.env_fingerprint != env_fp)
            throw ArtifactError(ArtifactError::Kind::fingerprint,
                                "stats dataset " + path.string() + " has environment " +
                                    hex64(header.env_fingerprint) + ", expected " +
                                    hex64(env_fp));
        stats.min_return = std::min(stats.min_return, header.stats.min);
        stats.max_return = std::max(stats.max_return, header.stats.max);
        json entry;
        entry["tier"] = header.tier;
        entry["min"] = fmt_double(header.stats.min);
        entry["max"] = fmt_double(header.stats.max);
        stats_used.push_back(std::move(entry));
    }

    const double raw = evaluate_artifact(env, pol);
    const double norm = normalized_return(raw, stats);

    json report;
    report["format_version"] = kFormatVersion;
    report["kind"] = "evaluation";
    report["config_hash"] = hex64(config.config_hash());
    report["seed"] = config.master_seed;
    report["env_fingerprint"] = hex64(env_fp);
    report["policy_space"] = pol.space;
    report["return_raw"] = fmt_double(raw);
    report["return_normalized"] = fmt_double(norm);
    report["stats_min"] = fmt_double(stats.min_return);
    report["stats_max"] = fmt_double(stats.max_return);
    report["stats_used"] = std::move(stats_used);
    if (!eval_path.empty()) atomic_write_file(eval_path, report.dump() + "\n");

    if (!csv_append_path.empty()) {
        std::ofstream csv(csv_append_path, std::ios::app);
        if (!csv)
            throw ArtifactError(ArtifactError::Kind::missing,
                                "cannot append to '" + csv_append_path.string() + "'");
        csv << hex64(config.config_hash()) << ',' << config.master_seed << ','
            << hex64(env_fp) << ',' << pol.space << ',' << fmt_double(pol.lambda) << ','
            << pol.estimator << ',' << fmt_double(raw) << ',' << fmt_double(norm) << '\n';
    }
    return report;
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

namespace {

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (const char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

struct SeedContext {
    bool ok = false;
    std::string error;
    EnvArtifact env;
    FactorDecoder decoder;
    std::map<std::string, OfflineDataset> datasets;
    NormalizationStats stats{0.0, 0.0};
    // per tier, per schedule: entropy of the first min(n, 30) epochs
    std::map<std::string, std::map<std::string, numvec>> entropy_series;
};

}  // namespace

AblationResult run_ablation(const ExperimentConfig& config, Exec exec) {
    if (config.schedules.empty() || config.models.empty() || config.estimators.empty() ||
        config.lambdas.empty() || config.tiers.empty() || config.n_seeds < 1)
        throw ConfigError("run_ablation: empty grid");

    const std::uint64_t cfg_hash = config.config_hash();

    // canonical tier names up front so aliases like "medrep" resolve once
    std::vector<std::string> tiers;
    for (const auto& t : config.tiers) tiers.push_back(tier_name(tier_from_name(t)));

    // one context per seed: environment, three-tier datasets, pooled stats
    std::vector<SeedContext> contexts(static_cast<std::size_t>(config.n_seeds));
    [[maybe_unused]] const bool par = exec == Exec::par;
    const std::int64_t n_seeds = config.n_seeds;
#pragma omp parallel for schedule(static) if (par)
    for (std::int64_t si = 0; si < n_seeds; ++si) {
        SeedContext& ctx = contexts[static_cast<std::size_t>(si)];
        try {
            ExperimentConfig env_cfg = config;
            env_cfg.env_seed = derive_seed(config.master_seed, 0xE00 + static_cast<std::uint64_t>(si));
            ctx.env = generate_env(env_cfg);
            ctx.decoder = FactorDecoder::from_env(ctx.env);

            double mn = std::numeric_limits<double>::infinity();
            double mx = -std::numeric_limits<double>::infinity();
            for (const Tier tier :
                 {Tier::random, Tier::medium_replay, Tier::medium}) {
                const std::string name = tier_name(tier);
                const BehaviorPolicySet pols = tier_policies(
                    ctx.env.spec, tier, config,
                    derive_seed(config.master_seed,
                                0xB00 + 16 * static_cast<std::uint64_t>(si) +
                                    static_cast<std::uint64_t>(tier)));
                OfflineDataset ds =
                    collect(ctx.env, pols, config.n_traj, config.horizon,
                            derive_seed(config.master_seed,
                                        0xC00 + 16 * static_cast<std::uint64_t>(si) +
                                            static_cast<std::uint64_t>(tier)),
                            Exec::seq);
                ds.config_hash = cfg_hash;
                const DatasetStats st = ds.stats();
                mn = std::min(mn, st.min);
                mx = std::max(mx, st.max);
                ctx.datasets.emplace(name, std::move(ds));
            }
            ctx.stats = {mn, mx};

            for (const auto& tier : tiers) {
                const OfflineDataset& ds = ctx.datasets.at(tier);
                const int epochs = std::min(ds.n_traj(), 30);
                for (const std::string mode : {"conservative", "random"}) {
                    SamplingSchedule sched;
                    sched.mode = sample_mode_from_name(mode);
                    sched.batch_segments = config.batch_segments;
                    sched.segment_len = config.segment_len;
                    Rng rng(derive_seed(config.master_seed,
                                        0xA00 + 16 * static_cast<std::uint64_t>(si) +
                                            (mode == "random" ? 1 : 0)));
                    numvec series;
                    for (int m = 0; m < epochs; ++m)
                        series.push_back(batch_action_entropy(sched.next_batch(ds, rng)));
                    ctx.entropy_series[tier][mode] = std::move(series);
                }
            }
            ctx.ok = true;
        } catch (const std::exception& e) {
            ctx.ok = false;
            ctx.error = e.what();
        }
    }

    // grid cells: flatten, then run each cell independently in parallel
    AblationResult result;
    for (const auto& tier : tiers)
        for (const auto& schedule : config.schedules)
            for (const auto& model_kind : config.models)
                for (const auto& estimator : config.estimators)
                    for (const double lambda : config.lambdas)
                        for (int si = 0; si < config.n_seeds; ++si) {
                            CellResult cell;
                            cell.schedule = schedule;
                            cell.model = model_kind;
                            cell.estimator = estimator;
                            cell.lambda = lambda;
                            cell.tier = tier;
                            cell.seed = si;
                            result.cells.push_back(std::move(cell));
                        }

    const std::int64_t n_cells = static_cast<std::int64_t>(result.cells.size());
#pragma omp parallel for schedule(static) if (par)
    for (std::int64_t ci = 0; ci < n_cells; ++ci) {
        CellResult& cell = result.cells[static_cast<std::size_t>(ci)];
        const SeedContext& ctx = contexts[static_cast<std::size_t>(cell.seed)];
        if (!ctx.ok) {
            cell.error = ctx.error;
            continue;
        }
        try {
            const OfflineDataset& ds = ctx.datasets.at(cell.tier);
            const std::uint64_t cell_salt =
                fnv1a64(cell.tier + "/" + cell.schedule + "/" + cell.model + "/" +
                        cell.estimator + "/" + fmt_double(cell.lambda) + "/" +
                        std::to_string(cell.seed));
            EnsembleModel model;
            if (cell.model == "joint") {
                model = fit_joint_model(ds, ctx.decoder, config.ensemble_size, config.alpha,
                                        derive_seed(config.master_seed, cell_salt), true,
                                        Exec::seq);
                cell.partition_recovered = -1;
            } else if (cell.model == "separated") {
                SamplingSchedule sched;
                sched.mode = sample_mode_from_name(cell.schedule);
                sched.batch_segments = config.batch_segments;
                sched.segment_len = config.segment_len;
                const int epochs = config.epochs > 0 ? config.epochs : ds.n_traj();
                const PartitionResult pr = discover_partition(
                    ds, ctx.decoder, sched, config.alpha, epochs,
                    derive_seed(config.master_seed, cell_salt ^ 0xD));
                cell.degenerate = pr.partition.degenerate;
                cell.partition_recovered =
                    pr.partition.endo_factor == ctx.env.endo_factor_index ? 1 : 0;
                Partition partition = pr.partition;
                partition.degenerate = false;
                model = fit_separated_model(ds, ctx.decoder, partition,
                                            config.ensemble_size, config.alpha,
                                            derive_seed(config.master_seed, cell_salt), true,
                                            Exec::seq);
            } else {
                throw ConfigError("unknown model kind '" + cell.model + "'");
            }
            const Estimator est = estimator_from_name(cell.estimator);
            const PenalizedMdp pm =
                build_penalized(model, est, cell.lambda, ctx.decoder.discount);
            const PlanResult planned = plan(pm, config.plan_tol, Exec::seq);

            PolicyArtifact artifact;
            artifact.space = model.joint ? "joint" : "factor";
            artifact.factor = model.joint ? -1 : model.partition.endo_factor;
            artifact.factor_dims = model.factor_dims;
            artifact.policy = planned.policy;
            cell.return_raw = evaluate_artifact(ctx.env, artifact);
            cell.return_norm = normalized_return(cell.return_raw, ctx.stats);
            cell.uncertainty_mean =
                uncertainty_table(model, est, Exec::seq).mean_over_visited(model);
            const auto& series = ctx.entropy_series.at(cell.tier).at(cell.schedule);
            double esum = 0.0;
            for (const double e : series) esum += e;
            cell.entropy_early_mean = series.empty() ? 0.0 : esum / series.size();
            cell.ok = true;
        } catch (const std::exception& e) {
            cell.ok = false;
            cell.error = e.what();
        }
    }

    // CSV with schema header, data rows, then per-cell aggregates
    std::ostringstream csv;
    csv << "schema_version,row_type,config_hash,master_seed,tier,schedule,model,estimator,"
           "lambda,seed,status,error,return_raw,return_norm,entropy_early_mean,"
           "uncertainty_mean,partition_recovered,degenerate,return_norm_mean,"
           "return_norm_std\n";
    for (const auto& c : result.cells) {
        csv << kFormatVersion << ",data," << hex64(cfg_hash) << ',' << config.master_seed
            << ',' << c.tier << ',' << c.schedule << ',' << c.model << ',' << c.estimator
            << ',' << fmt_double(c.lambda) << ',' << c.seed << ','
            << (c.ok ? "ok" : "error") << ',' << csv_escape(c.error) << ','
            << fmt_double(c.return_raw) << ',' << fmt_double(c.return_norm) << ','
            << fmt_double(c.entropy_early_mean) << ',' << fmt_double(c.uncertainty_mean)
            << ','
            << (c.partition_recovered < 0 ? std::string("na")
                                          : std::to_string(c.partition_recovered))
            << ',' << (c.degenerate ? 1 : 0) << ",,\n";
    }
    for (const auto& tier : tiers)
        for (const auto& schedule : config.schedules)
            for (const auto& model_kind : config.models)
                for (const auto& estimator : config.estimators)
                    for (const double lambda : config.lambdas) {
                        numvec norms;
                        for (const auto& c : result.cells)
                            if (c.ok && c.tier == tier && c.schedule == schedule &&
                                c.model == model_kind && c.estimator == estimator &&
                                c.lambda == lambda)
                                norms.push_back(c.return_norm);
                        if (norms.empty()) continue;
                        double mean = 0.0;
                        for (const double v : norms) mean += v;
                        mean /= static_cast<double>(norms.size());
                        double ss = 0.0;
                        for (const double v : norms) ss += (v - mean) * (v - mean);
                        const double stddev =
                            norms.size() > 1
                                ? std::sqrt(ss / static_cast<double>(norms.size() - 1))
                                : 0.0;
                        csv << kFormatVersion << ",aggregate," << hex64(cfg_hash) << ','
                            << config.master_seed << ',' << tier << ',' << schedule << ','
                            << model_kind << ',' << estimator << ',' << fmt_double(lambda)
                            << ",,ok,,,,,,,," << fmt_double(mean) << ','
                            << fmt_double(stddev) << '\n';
                    }
    result.csv = csv.str();

    // run report
    json report;
    report["format_version"] = kFormatVersion;
    report["kind"] = "run_report";
    report["config_hash"] = hex64(cfg_hash);
    report["master_seed"] = config.master_seed;
    json seeds = json::array();
    for (int si = 0; si < config.n_seeds; ++si) {
        const SeedContext& ctx = contexts[static_cast<std::size_t>(si)];
        json js;
        js["seed"] = si;
        js["ok"] = ctx.ok;
        if (!ctx.ok) {
            js["error"] = ctx.error;
            seeds.push_back(std::move(js));
            continue;
        }
        js["env_fingerprint"] = hex64(env_fingerprint(ctx.env));
        js["stats_min"] = fmt_double(ctx.stats.min_return);
        js["stats_max"] = fmt_double(ctx.stats.max_return);
        json series = json::object();
        for (const auto& [tier, modes] : ctx.entropy_series) {
            json jt;
            for (const auto& [mode, values] : modes) {
                json arr = json::array();
                for (const double v : values) arr.push_back(fmt_double(v));
                jt[mode] = std::move(arr);
            }
            series[tier] = std::move(jt);
        }
        js["entropy_series"] = std::move(series);
        seeds.push_back(std::move(js));
    }
    report["seeds"] = std::move(seeds);
    json cells = json::array();
    for (const auto& c : result.cells) {
        json jc;
        jc["tier"] = c.tier;
        jc["schedule"] = c.schedule;
        jc["model"] = c.model;
        jc["estimator"] = c.estimator;
        jc["lambda"] = fmt_double(c.lambda);
        jc["seed"] = c.seed;
        jc["ok"] = c.ok;
        if (!c.ok) jc["error"] = c.error;
        jc["return_raw"] = fmt_double(c.return_raw);
        jc["return_norm"] = fmt_double(c.return_norm);
        jc["entropy_early_mean"] = fmt_double(c.entropy_early_mean);
        jc["uncertainty_mean"] = fmt_double(c.uncertainty_mean);
        jc["partition_recovered"] = c.partition_recovered;
        jc["degenerate"] = c.degenerate;
        cells.push_back(std::move(jc));
    }
    report["cells"] = std::move(cells);
    result.report = std::move(report);
    return result;
}

// ---------------------------------------------------------------------------
// Theory suite
// ---------------------------------------------------------------------------

TheorySuiteResult run_theory_suite(const TheorySuiteOptions& opts, Exec exec) {
    const std::set<std::string> known = {"telescoping", "bound", "sampling", "mi",
                                         "admissibility"};
    std::set<std::string> selected = opts.suites.empty() ? known : opts.suites;
    for (const auto& name : selected)
        if (!known.count(name)) throw ConfigError("unknown theory suite '" + name + "'");

    TheorySuiteResult out;
    json checks = json::array();
    json aggregate = json::object();
    bool all_pass = true;

    auto add_batch = [&](const std::string& name, const std::vector<TheoryReport>& reports) {
        int passed = 0;
        double worst = std::numeric_limits<double>::infinity();
        for (const auto& r : reports) {
            passed += r.pass ? 1 : 0;
            worst = std::min(worst, r.margin);
            checks.push_back(r.to_json());
        }
        json agg;
        agg["count"] = reports.size();
        agg["passed"] = passed;
        agg["worst_margin"] = fmt_double(worst);
        aggregate[name] = std::move(agg);
        if (passed != static_cast<int>(reports.size())) all_pass = false;
    };

    if (selected.count("telescoping"))
        add_batch("telescoping", run_telescoping_batch(opts.telescoping_count, opts.seed, exec));
    if (selected.count("bound"))
        add_batch("bound", run_bound_batch(opts.bound_count, opts.seed, exec,
                                           opts.force_zero_uncertainty));
    if (selected.count("sampling"))
        add_batch("sampling", run_sampling_batch(opts.sampling_count, opts.seed, exec));
    if (selected.count("mi")) {
        add_batch("mi_uniform",
                  run_mi_batch(opts.mi_count, opts.seed, exec, MarginalMode::uniform));
        add_batch("mi_own_occupancy",
                  run_mi_batch(opts.mi_count, opts.seed, exec, MarginalMode::own_occupancy));
    }
    if (selected.count("admissibility")) {
        const TheoryReport rep = admissibility_report(opts.admissibility_envs, opts.seed, exec);
        checks.push_back(rep.to_json());
        json agg;
        agg["count"] = 1;
        agg["passed"] = rep.pass ? 1 : 0;
        agg["failure_rate"] = fmt_double(rep.lhs);
        aggregate["admissibility"] = std::move(agg);
    }

    json report;
    report["format_version"] = kFormatVersion;
    report["kind"] = "theory_report";
    report["seed"] = opts.seed;
    report["all_pass"] = all_pass;
    report["aggregate"] = std::move(aggregate);
    report["checks"] = std::move(checks);
    out.report = std::move(report);
    out.all_pass = all_pass;
    return out;
}

}  // namespace seprl
