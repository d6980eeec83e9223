#include "seprl/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace seprl {

std::string tier_name(Tier t) {
    switch (t) {
        case Tier::random: return "random";
        case Tier::medium_replay: return "medium_replay";
        case Tier::medium: return "medium";
    }
    throw std::logic_error("tier_name: bad tier");
}

Tier tier_from_name(const std::string& name) {
    if (name == "random") return Tier::random;
    if (name == "medium_replay" || name == "medrep") return Tier::medium_replay;
    if (name == "medium") return Tier::medium;
    throw ConfigError("unknown tier '" + name + "'");
}

DatasetStats compute_stats(std::span<const Trajectory> trajectories) {
    if (trajectories.empty()) throw std::invalid_argument("compute_stats: empty dataset");
    numvec returns;
    returns.reserve(trajectories.size());
    for (const auto& t : trajectories) returns.push_back(t.episode_return());
    std::sort(returns.begin(), returns.end());

    const auto n = returns.size();
    DatasetStats st;
    st.count = static_cast<long long>(n);
    double sum = 0.0;
    for (const double r : returns) sum += r;
    st.mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (const double r : returns) ss += (r - st.mean) * (r - st.mean);
    st.stddev = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    st.min = returns.front();
    st.max = returns.back();

    auto percentile = [&returns, n](double q) {
        const double pos = q * static_cast<double>(n - 1);
        const auto lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, n - 1);
        const double frac = pos - static_cast<double>(lo);
        return returns[lo] + frac * (returns[hi] - returns[lo]);
    };
    st.p25 = percentile(0.25);
    st.median = percentile(0.50);
    st.p75 = percentile(0.75);
    return st;
}

PolicyTable optimal_policy(const ExBmdpSpec& spec, double tol) {
    const auto vi = value_iterate(spec.endo_trans, spec.reward, spec.discount, tol);
    PolicyTable p;
    p.probs.assign(static_cast<std::size_t>(spec.n_endo),
                   numvec(static_cast<std::size_t>(spec.n_act), 0.0));
    for (int s = 0; s < spec.n_endo; ++s)
        p.probs[static_cast<std::size_t>(s)]
               [static_cast<std::size_t>(vi.greedy[static_cast<std::size_t>(s)])] = 1.0;
    return p;
}

namespace {

PolicyTable mix_policies(const PolicyTable& a, const PolicyTable& b, double weight_b) {
    PolicyTable out = a;
    for (std::size_t s = 0; s < out.probs.size(); ++s)
        for (std::size_t act = 0; act < out.probs[s].size(); ++act)
            out.probs[s][act] =
                (1.0 - weight_b) * a.probs[s][act] + weight_b * b.probs[s][act];
    return out;
}

PolicyTable make_medium(const ExBmdpSpec& spec) {
    const PolicyTable opt = optimal_policy(spec);
    const double opt_return = exact_return(spec, opt);
    if (opt_return <= 0.0)
        throw ConfigError("medium tier unreachable: optimal return is zero (degenerate reward)");

    PolicyTable uni;
    uni.probs.assign(static_cast<std::size_t>(spec.n_endo),
                     numvec(static_cast<std::size_t>(spec.n_act),
                            1.0 / static_cast<double>(spec.n_act)));
    const double uni_return = exact_return(spec, uni);
    const double uni_ratio = uni_return / opt_return;
    if (uni_ratio > 0.6)
        throw ConfigError("medium tier unreachable: uniform policy already attains " +
                          fmt_double(uni_ratio) + " of the optimal return");
    if (uni_ratio >= 0.4) return uni;

    // bisect the mixing weight toward a 50% return ratio
    double lo = 0.0, hi = 1.0;  // ratio(lo) = 1, ratio(hi) < 0.4
    PolicyTable candidate = uni;
    for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (lo + hi);
        candidate = mix_policies(opt, uni, mid);
        const double ratio = exact_return(spec, candidate) / opt_return;
        if (ratio > 0.5)
            lo = mid;
        else
            hi = mid;
        if (ratio >= 0.4 && ratio <= 0.6 && it >= 20) return candidate;
    }
    const double final_ratio = exact_return(spec, candidate) / opt_return;
    if (final_ratio < 0.4 || final_ratio > 0.6)
        throw ConfigError("medium tier unreachable: bisection stalled at ratio " +
                          fmt_double(final_ratio));
    return candidate;
}

PolicyTable improve_damped(const ExBmdpSpec& spec, const PolicyTable& policy, double damping) {
    const numvec values = policy_values(spec.endo_trans, spec.reward, policy, spec.discount);
    PolicyTable greedy;
    greedy.probs.assign(static_cast<std::size_t>(spec.n_endo),
                        numvec(static_cast<std::size_t>(spec.n_act), 0.0));
    for (int s = 0; s < spec.n_endo; ++s) {
        double best = -std::numeric_limits<double>::infinity();
        int best_a = 0;
        for (int a = 0; a < spec.n_act; ++a) {
            double q = spec.reward[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)];
            for (int s2 = 0; s2 < spec.n_endo; ++s2)
                q += spec.discount *
                     spec.endo_trans[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)]
                                    [static_cast<std::size_t>(s2)] *
                     values[static_cast<std::size_t>(s2)];
            if (q > best) {
                best = q;
                best_a = a;
            }
        }
        greedy.probs[static_cast<std::size_t>(s)][static_cast<std::size_t>(best_a)] = 1.0;
    }
    return mix_policies(greedy, policy, damping);
}

}  // namespace

BehaviorPolicySet make_behavior_policies(const ExBmdpSpec& spec, Tier tier, int count,
                                         Rng& rng) {
    if (count < 1) throw ConfigError("make_behavior_policies: count must be >= 1");
    BehaviorPolicySet set;
    set.tier = tier;

    switch (tier) {
        case Tier::random: {
            for (int i = 0; i < count; ++i) {
                PolicyTable p;
                p.probs.reserve(static_cast<std::size_t>(spec.n_endo));
                for (int s = 0; s < spec.n_endo; ++s)
                    p.probs.push_back(rng.dirichlet_uniform(spec.n_act));
                set.policies.push_back(std::move(p));
            }
            break;
        }
        case Tier::medium: {
            set.policies.push_back(make_medium(spec));
            break;
        }
        case Tier::medium_replay: {
            const PolicyTable medium = make_medium(spec);
            const double med_return = exact_return(spec, medium);

            PolicyTable current;
            current.probs.assign(static_cast<std::size_t>(spec.n_endo),
                                 numvec(static_cast<std::size_t>(spec.n_act),
                                        1.0 / static_cast<double>(spec.n_act)));
            bool capped = exact_return(spec, current) >= med_return;
            set.policies.push_back(capped ? medium : current);
            for (int i = 1; i < count; ++i) {
                if (!capped) {
                    current = improve_damped(spec, current, 0.5);
                    if (exact_return(spec, current) >= med_return) capped = true;
                }
                set.policies.push_back(capped ? medium : current);
            }
            break;
        }
    }
    return set;
}

OfflineDataset collect(const EnvArtifact& env, const BehaviorPolicySet& policies,
                       int n_traj, int horizon, std::uint64_t seed, Exec exec) {
    if (n_traj < 1) throw ConfigError("collect: n_traj must be >= 1");
    if (horizon < 2) throw ConfigError("collect: horizon must be >= 2");
    if (policies.policies.empty()) throw ConfigError("collect: empty policy set");

    const auto& spec = env.spec;
    OfflineDataset ds;
    ds.tier = policies.tier;
    ds.env_fingerprint = env_fingerprint(env);
    ds.horizon = horizon;
    ds.n_act = spec.n_act;
    ds.n_obs = spec.n_obs();
    ds.policy_count = static_cast<int>(policies.policies.size());
    ds.seed = seed;
    ds.trajectories.assign(static_cast<std::size_t>(n_traj), Trajectory{});

    [[maybe_unused]] const bool par = exec == Exec::par;
    const std::int64_t n = n_traj;
#pragma omp parallel for schedule(static) if (par)
    for (std::int64_t i = 0; i < n; ++i) {
        const int pid = static_cast<int>(i % ds.policy_count);
        const auto& pol = policies.policies[static_cast<std::size_t>(pid)];
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));

        Trajectory traj;
        traj.policy_id = pid;
        traj.observations.reserve(static_cast<std::size_t>(horizon) + 1);
        traj.actions.reserve(static_cast<std::size_t>(horizon));
        traj.rewards.reserve(static_cast<std::size_t>(horizon));

        LatentState z = sample_initial(spec, rng);
        traj.observations.push_back(observe(spec, z));
        for (int t = 0; t < horizon; ++t) {
            const int a = rng.categorical(pol.probs[static_cast<std::size_t>(z.endo)]);
            const auto res = step(spec, z, a, rng);
            traj.actions.push_back(a);
            traj.rewards.push_back(res.reward);
            traj.observations.push_back(res.observation);
            z = res.next;
        }
        ds.trajectories[static_cast<std::size_t>(i)] = std::move(traj);
    }
    return ds;
}

double action_entropy(std::span<const Trajectory> batch) {
    if (batch.empty()) throw std::invalid_argument("action_entropy: empty batch");
    int n_act = 0;
    for (const auto& t : batch)
        for (const int a : t.actions) n_act = std::max(n_act, a + 1);
    if (n_act == 0) throw std::invalid_argument("action_entropy: batch has no actions");
    std::vector<long long> counts(static_cast<std::size_t>(n_act), 0);
    for (const auto& t : batch)
        for (const int a : t.actions) ++counts[static_cast<std::size_t>(a)];
    return entropy_nats(counts);
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace {

json stats_to_json(const DatasetStats& st) {
    json j;
    j["count"] = st.count;
    j["mean"] = fmt_double(st.mean);
    j["std"] = fmt_double(st.stddev);
    j["min"] = fmt_double(st.min);
    j["p25"] = fmt_double(st.p25);
    j["median"] = fmt_double(st.median);
    j["p75"] = fmt_double(st.p75);
    j["max"] = fmt_double(st.max);
    return j;
}

DatasetStats stats_from_json(const json& j) {
    DatasetStats st;
    st.count = j.at("count").get<long long>();
    st.mean = parse_double(j.at("mean").get_ref<const std::string&>());
    st.stddev = parse_double(j.at("std").get_ref<const std::string&>());
    st.min = parse_double(j.at("min").get_ref<const std::string&>());
    st.p25 = parse_double(j.at("p25").get_ref<const std::string&>());
    st.median = parse_double(j.at("median").get_ref<const std::string&>());
    st.p75 = parse_double(j.at("p75").get_ref<const std::string&>());
    st.max = parse_double(j.at("max").get_ref<const std::string&>());
    return st;
}

}  // namespace

std::string dataset_to_string(const OfflineDataset& ds) {
    std::ostringstream out;
    json header;
    header["format_version"] = kFormatVersion;
    header["kind"] = "offline_dataset";
    header["tier"] = tier_name(ds.tier);
    header["env_fingerprint"] = hex64(ds.env_fingerprint);
    header["n_traj"] = ds.n_traj();
    header["horizon"] = ds.horizon;
    header["n_act"] = ds.n_act;
    header["n_obs"] = ds.n_obs;
    header["policy_count"] = ds.policy_count;
    header["seed"] = ds.seed;
    header["config_hash"] = hex64(ds.config_hash);
    header["stats"] = stats_to_json(ds.stats());
    out << header.dump() << "\n";

    for (const auto& traj : ds.trajectories) {
        json line;
        line["policy_id"] = traj.policy_id;
        line["observations"] = traj.observations;
        line["actions"] = traj.actions;
        json rewards = json::array();
        for (const double r : traj.rewards) rewards.push_back(fmt_double(r));
        line["rewards"] = std::move(rewards);
        out << line.dump() << "\n";
    }
    return out.str();
}

std::uint64_t dataset_fingerprint(const OfflineDataset& ds) {
    return fnv1a64(dataset_to_string(ds));
}

void save_dataset(const OfflineDataset& ds, const std::filesystem::path& path) {
    atomic_write_file(path, dataset_to_string(ds));
}

OfflineDataset load_dataset(const std::filesystem::path& path,
                            std::optional<std::uint64_t> expected_fingerprint) {
    std::ifstream in(path);
    if (!in)
        throw ArtifactError(ArtifactError::Kind::missing, "cannot open '" + path.string() + "'");

    std::string line;
    if (!std::getline(in, line))
        throw ArtifactError(ArtifactError::Kind::truncated,
                            "'" + path.string() + "' is empty");

    json header;
    try {
        header = json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw ArtifactError(ArtifactError::Kind::parse,
                            "line 1: bad header: " + std::string(e.what()));
    }
    if (!header.contains("kind") || header.at("kind").get<std::string>() != "offline_dataset")
        throw ArtifactError(ArtifactError::Kind::parse, "line 1: not a dataset header");
    if (header.at("format_version").get<int>() != kFormatVersion)
        throw ArtifactError(ArtifactError::Kind::version,
                            "unsupported dataset format version " +
                                header.at("format_version").dump());

    OfflineDataset ds;
    ds.tier = tier_from_name(header.at("tier").get<std::string>());
    ds.env_fingerprint = parse_hex64(header.at("env_fingerprint").get_ref<const std::string&>());
    ds.horizon = header.at("horizon").get<int>();
    ds.n_act = header.at("n_act").get<int>();
    ds.n_obs = header.at("n_obs").get<int>();
    ds.policy_count = header.at("policy_count").get<int>();
    ds.seed = header.at("seed").get<std::uint64_t>();
    ds.config_hash = parse_hex64(header.at("config_hash").get_ref<const std::string&>());
    const int n_traj = header.at("n_traj").get<int>();

    if (expected_fingerprint && *expected_fingerprint != ds.env_fingerprint)
        throw ArtifactError(ArtifactError::Kind::fingerprint,
                            "dataset was collected on environment " +
                                hex64(ds.env_fingerprint) + ", expected " +
                                hex64(*expected_fingerprint));

    ds.trajectories.reserve(static_cast<std::size_t>(n_traj));
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (ds.n_traj() == n_traj)
            throw ArtifactError(ArtifactError::Kind::parse,
                                "line " + std::to_string(line_no) +
                                    ": more trajectories than the header announced");
        json j;
        try {
            j = json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ArtifactError(ArtifactError::Kind::parse,
                                "line " + std::to_string(line_no) + ": " + e.what());
        }
        Trajectory traj;
        try {
            traj.policy_id = j.at("policy_id").get<int>();
            traj.observations = j.at("observations").get<std::vector<int>>();
            traj.actions = j.at("actions").get<std::vector<int>>();
            for (const auto& r : j.at("rewards"))
                traj.rewards.push_back(parse_double(r.get_ref<const std::string&>()));
        } catch (const nlohmann::json::exception& e) {
            throw ArtifactError(ArtifactError::Kind::parse,
                                "line " + std::to_string(line_no) + ": " + e.what());
        }
        if (traj.observations.size() != static_cast<std::size_t>(ds.horizon) + 1 ||
            traj.actions.size() != static_cast<std::size_t>(ds.horizon) ||
            traj.rewards.size() != static_cast<std::size_t>(ds.horizon))
            throw ArtifactError(ArtifactError::Kind::parse,
                                "line " + std::to_string(line_no) +
                                    ": sequence lengths do not match the horizon");
        if (traj.policy_id < 0 || traj.policy_id >= ds.policy_count)
            throw ArtifactError(ArtifactError::Kind::parse,
                                "line " + std::to_string(line_no) +
                                    ": policy_id does not resolve to a registered policy");
        for (const double r : traj.rewards)
            if (!(r >= 0.0 && r <= 1.0))
                throw ArtifactError(ArtifactError::Kind::parse,
                                    "line " + std::to_string(line_no) +
                                        ": reward outside [0,1]");
        ds.trajectories.push_back(std::move(traj));
    }
    if (ds.n_traj() != n_traj)
        throw ArtifactError(ArtifactError::Kind::truncated,
                            "expected " + std::to_string(n_traj) + " trajectories, found " +
                                std::to_string(ds.n_traj()));

    const DatasetStats recomputed = ds.stats();
    if (!(recomputed == stats_from_json(header.at("stats"))))
        throw ArtifactError(ArtifactError::Kind::parse,
                            "stored stats do not match the trajectories");
    return ds;
}

}  // namespace seprl
