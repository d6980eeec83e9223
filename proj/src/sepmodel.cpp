#include "seprl/sepmodel.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace seprl {

// ---------------------------------------------------------------------------
// FactorDecoder
// ---------------------------------------------------------------------------

FactorDecoder FactorDecoder::from_env(const EnvArtifact& env) {
    const auto& spec = env.spec;
    const bool endo_second = env.endo_factor_index == 1;
    FactorDecoder dec;
    dec.env_fingerprint = seprl::env_fingerprint(env);
    dec.discount = spec.discount;
    dec.n_factor = endo_second ? std::array<int, 2>{spec.n_exo, spec.n_endo}
                               : std::array<int, 2>{spec.n_endo, spec.n_exo};
    dec.obs_to_factors.assign(static_cast<std::size_t>(spec.n_obs()), {0, 0});
    for (int e = 0; e < spec.n_endo; ++e)
        for (int x = 0; x < spec.n_exo; ++x) {
            const int obs = spec.emission[static_cast<std::size_t>(e)]
                                         [static_cast<std::size_t>(x)];
            dec.obs_to_factors[static_cast<std::size_t>(obs)] =
                endo_second ? std::array<int, 2>{x, e} : std::array<int, 2>{e, x};
        }
    return dec;
}

json decoder_to_json(const FactorDecoder& dec) {
    json j;
    j["format_version"] = kFormatVersion;
    j["kind"] = "factor_decoder";
    j["env_fingerprint"] = hex64(dec.env_fingerprint);
    j["discount"] = fmt_double(dec.discount);
    j["n_factor"] = {dec.n_factor[0], dec.n_factor[1]};
    json map = json::array();
    for (const auto& f : dec.obs_to_factors) map.push_back({f[0], f[1]});
    j["obs_to_factors"] = std::move(map);
    return j;
}

FactorDecoder decoder_from_json(const json& j) {
    if (j.at("format_version").get<int>() != kFormatVersion)
        throw ArtifactError(ArtifactError::Kind::version,
                            "unsupported decoder format version");
    if (j.at("kind").get<std::string>() != "factor_decoder")
        throw ArtifactError(ArtifactError::Kind::parse, "not a decoder file");
    FactorDecoder dec;
    dec.env_fingerprint = parse_hex64(j.at("env_fingerprint").get_ref<const std::string&>());
    dec.discount = parse_double(j.at("discount").get_ref<const std::string&>());
    dec.n_factor = {j.at("n_factor").at(0).get<int>(), j.at("n_factor").at(1).get<int>()};
    for (const auto& f : j.at("obs_to_factors"))
        dec.obs_to_factors.push_back({f.at(0).get<int>(), f.at(1).get<int>()});
    return dec;
}

void save_decoder(const FactorDecoder& dec, const std::filesystem::path& path) {
    atomic_write_file(path, decoder_to_json(dec).dump() + "\n");
}

FactorDecoder load_decoder(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ArtifactError(ArtifactError::Kind::parse,
                            "cannot parse '" + path.string() + "': " + e.what());
    }
    return decoder_from_json(j);
}

// ---------------------------------------------------------------------------
// Sampling schedules
// ---------------------------------------------------------------------------

std::string sample_mode_name(SampleMode m) {
    return m == SampleMode::conservative ? "conservative" : "random";
}

SampleMode sample_mode_from_name(const std::string& name) {
    if (name == "conservative" || name == "cs") return SampleMode::conservative;
    if (name == "random" || name == "rs") return SampleMode::random;
    throw ConfigError("unknown sampling mode '" + name + "'");
}

std::vector<int> Batch::policy_ids() const {
    std::set<int> ids;
    for (const auto& seg : segments)
        ids.insert(ds->trajectories[static_cast<std::size_t>(seg.traj)].policy_id);
    return {ids.begin(), ids.end()};
}

Batch SamplingSchedule::next_batch(const OfflineDataset& ds, Rng& rng) {
    if (ds.trajectories.empty()) throw std::invalid_argument("next_batch: empty dataset");
    if (epoch < 1) throw ConfigError("next_batch: epoch counter must be >= 1");
    const int n = ds.n_traj();
    const int len = std::min(segment_len, ds.horizon);

    Batch batch;
    batch.ds = &ds;
    batch.segments.reserve(static_cast<std::size_t>(batch_segments));

    std::vector<int> picks;
    if (mode == SampleMode::conservative && epoch <= n) {
        const int j = (epoch - 1) % std::min(epoch, n) + 1;  // = epoch while epoch <= n
        picks.assign(static_cast<std::size_t>(batch_segments), j - 1);
    } else if (batch_segments <= n) {
        picks = rng.sample_without_replacement(n, batch_segments);
    } else {
        picks.reserve(static_cast<std::size_t>(batch_segments));
        for (int k = 0; k < batch_segments; ++k)
            picks.push_back(static_cast<int>(rng.uniform_int(n)));
    }

    for (const int t : picks) {
        const int steps = ds.trajectories[static_cast<std::size_t>(t)].steps();
        const int span = std::min(len, steps);
        const int max_start = steps - span;
        const int start =
            max_start > 0 ? static_cast<int>(rng.uniform_int(max_start + 1)) : 0;
        batch.segments.push_back({t, start, span});
    }
    ++epoch;
    return batch;
}

double batch_action_entropy(const Batch& batch) {
    if (batch.segments.empty()) throw std::invalid_argument("batch_action_entropy: empty batch");
    std::vector<long long> counts(static_cast<std::size_t>(batch.ds->n_act), 0);
    for (const auto& seg : batch.segments) {
        const auto& traj = batch.ds->trajectories[static_cast<std::size_t>(seg.traj)];
        for (int t = seg.start; t < seg.start + seg.len; ++t)
            ++counts[static_cast<std::size_t>(traj.actions[static_cast<std::size_t>(t)])];
    }
    return entropy_nats(counts);
}

// ---------------------------------------------------------------------------
// Factored likelihood
// ---------------------------------------------------------------------------

namespace {

struct FactorCounts {
    int n_e = 0, n_x = 0, n_a = 0;
    std::vector<long long> action;      // [e * n_a + a]
    std::vector<long long> action_tot;  // [e]
    std::vector<long long> endo;        // [(e * n_a + a) * n_e + e2]
    std::vector<long long> endo_tot;    // [e * n_a + a]
    std::vector<long long> exo;         // [x * n_x + x2]
    std::vector<long long> exo_tot;     // [x]

    FactorCounts(int ne, int nx, int na) : n_e(ne), n_x(nx), n_a(na) {
        action.assign(static_cast<std::size_t>(ne) * static_cast<std::size_t>(na), 0);
        action_tot.assign(static_cast<std::size_t>(ne), 0);
        endo.assign(static_cast<std::size_t>(ne) * static_cast<std::size_t>(na) *
                        static_cast<std::size_t>(ne),
                    0);
        endo_tot.assign(static_cast<std::size_t>(ne) * static_cast<std::size_t>(na), 0);
        exo.assign(static_cast<std::size_t>(nx) * static_cast<std::size_t>(nx), 0);
        exo_tot.assign(static_cast<std::size_t>(nx), 0);
    }

    void add_segment(const Trajectory& traj, const Segment& seg, const FactorDecoder& dec,
                     int endo_factor) {
        const int exo_factor = 1 - endo_factor;
        for (int t = seg.start; t < seg.start + seg.len; ++t) {
            const auto f0 = dec.decode(traj.observations[static_cast<std::size_t>(t)]);
            const auto f1 = dec.decode(traj.observations[static_cast<std::size_t>(t) + 1]);
            const int e = f0[static_cast<std::size_t>(endo_factor)];
            const int e2 = f1[static_cast<std::size_t>(endo_factor)];
            const int x = f0[static_cast<std::size_t>(exo_factor)];
            const int x2 = f1[static_cast<std::size_t>(exo_factor)];
            const int a = traj.actions[static_cast<std::size_t>(t)];
            ++action[static_cast<std::size_t>(e * n_a + a)];
            ++action_tot[static_cast<std::size_t>(e)];
            ++endo[static_cast<std::size_t>((e * n_a + a) * n_e + e2)];
            ++endo_tot[static_cast<std::size_t>(e * n_a + a)];
            ++exo[static_cast<std::size_t>(x * n_x + x2)];
            ++exo_tot[static_cast<std::size_t>(x)];
        }
    }
};

/// ln of the add-alpha estimate (count + alpha) / (total + alpha * support).
double smoothed_log(long long count, long long total, double alpha, int support,
                    bool* neg_inf) {
    const double num = static_cast<double>(count) + alpha;
    const double den = static_cast<double>(total) + alpha * support;
    if (num <= 0.0 || den <= 0.0) {
        *neg_inf = true;
        return -std::numeric_limits<double>::infinity();
    }
    return std::log(num / den);
}

}  // namespace

FactoredLogLik factored_loglik(const Batch& batch, const FactorDecoder& decoder,
                               const Partition& partition, double alpha, LoglikMode mode) {
    if (alpha < 0.0) throw ConfigError("factored_loglik: alpha must be >= 0");
    if (batch.segments.empty())
        throw std::invalid_argument("factored_loglik: empty batch");
    if (mode == LoglikMode::heldout && batch.segments.size() < 2)
        throw ConfigError("factored_loglik: held-out mode needs at least two segments");

    const int endo_factor = partition.endo_factor;
    const int n_e = decoder.n_factor[static_cast<std::size_t>(endo_factor)];
    const int n_x = decoder.n_factor[static_cast<std::size_t>(1 - endo_factor)];
    const int n_a = batch.ds->n_act;

    FactorCounts counts(n_e, n_x, n_a);
    for (std::size_t i = 0; i < batch.segments.size(); ++i) {
        if (mode == LoglikMode::heldout && i % 2 == 1) continue;
        counts.add_segment(batch.ds->trajectories[static_cast<std::size_t>(
                               batch.segments[i].traj)],
                           batch.segments[i], decoder, endo_factor);
    }

    FactoredLogLik out;
    const int exo_factor = 1 - endo_factor;
    for (std::size_t i = 0; i < batch.segments.size(); ++i) {
        if (mode == LoglikMode::heldout && i % 2 == 0) continue;
        const auto& seg = batch.segments[i];
        const auto& traj = batch.ds->trajectories[static_cast<std::size_t>(seg.traj)];
        for (int t = seg.start; t < seg.start + seg.len; ++t) {
            const auto f0 = decoder.decode(traj.observations[static_cast<std::size_t>(t)]);
            const auto f1 =
                decoder.decode(traj.observations[static_cast<std::size_t>(t) + 1]);
            const int e = f0[static_cast<std::size_t>(endo_factor)];
            const int e2 = f1[static_cast<std::size_t>(endo_factor)];
            const int x = f0[static_cast<std::size_t>(exo_factor)];
            const int x2 = f1[static_cast<std::size_t>(exo_factor)];
            const int a = traj.actions[static_cast<std::size_t>(t)];

            out.action_term += smoothed_log(
                counts.action[static_cast<std::size_t>(e * n_a + a)],
                counts.action_tot[static_cast<std::size_t>(e)], alpha, n_a, &out.neg_inf);
            out.endo_term += smoothed_log(
                counts.endo[static_cast<std::size_t>((e * n_a + a) * n_e + e2)],
                counts.endo_tot[static_cast<std::size_t>(e * n_a + a)], alpha, n_e,
                &out.neg_inf);
            out.exo_term += smoothed_log(counts.exo[static_cast<std::size_t>(x * n_x + x2)],
                                         counts.exo_tot[static_cast<std::size_t>(x)], alpha,
                                         n_x, &out.neg_inf);
            ++out.steps;
        }
    }
    out.total = out.action_term + out.endo_term + out.exo_term;
    return out;
}

// ---------------------------------------------------------------------------
// Partition discovery
// ---------------------------------------------------------------------------

namespace {

struct DependenceScore {
    double raw = 0.0;     // max_{s, a != a'} TV(T(.|s,a), T(.|s,a'))
    double excess = 0.0;  // raw minus a count-based sampling-noise allowance
};

DependenceScore action_dependence_score(const FactorCounts& c) {
    DependenceScore score;
    for (int s = 0; s < c.n_e; ++s) {
        for (int a = 0; a < c.n_a; ++a) {
            const long long tot_a = c.endo_tot[static_cast<std::size_t>(s * c.n_a + a)];
            if (tot_a == 0) continue;
            for (int a2 = a + 1; a2 < c.n_a; ++a2) {
                const long long tot_b = c.endo_tot[static_cast<std::size_t>(s * c.n_a + a2)];
                if (tot_b == 0) continue;
                double tv = 0.0;
                for (int s2 = 0; s2 < c.n_e; ++s2) {
                    const double pa =
                        static_cast<double>(
                            c.endo[static_cast<std::size_t>((s * c.n_a + a) * c.n_e + s2)]) /
                        static_cast<double>(tot_a);
                    const double pb =
                        static_cast<double>(
                            c.endo[static_cast<std::size_t>((s * c.n_a + a2) * c.n_e + s2)]) /
                        static_cast<double>(tot_b);
                    tv += std::abs(pa - pb);
                }
                tv *= 0.5;
                score.raw = std::max(score.raw, tv);
                // TV between two empirical copies of the same row fluctuates
                // at about sqrt(k / min(N_a, N_b)); subtract twice that
                const double noise =
                    2.0 * std::sqrt(static_cast<double>(c.n_e) /
                                    static_cast<double>(std::min(tot_a, tot_b)));
                score.excess = std::max(score.excess, tv - noise);
            }
        }
    }
    return score;
}

}  // namespace

PartitionResult discover_partition(const OfflineDataset& ds, const FactorDecoder& decoder,
                                   SamplingSchedule schedule, double alpha, int epochs,
                                   std::uint64_t seed, double degenerate_tol,
                                   LoglikMode mode) {
    if (epochs < 1) throw ConfigError("discover_partition: epochs must be >= 1");
    if (decoder.n_factor[0] <= 0 || decoder.n_factor[1] <= 0)
        throw ConfigError("discover_partition: decoder must expose two factors");

    Rng rng(derive_seed(seed, 0x9a27));
    PartitionResult res;
    std::array<FactorCounts, 2> pooled{
        FactorCounts(decoder.n_factor[0], decoder.n_factor[1], ds.n_act),
        FactorCounts(decoder.n_factor[1], decoder.n_factor[0], ds.n_act)};

    for (int m = 0; m < epochs; ++m) {
        const Batch batch = schedule.next_batch(ds, rng);
        for (int cand = 0; cand < 2; ++cand) {
            Partition p;
            p.endo_factor = cand;
            res.loglik[static_cast<std::size_t>(cand)] +=
                factored_loglik(batch, decoder, p, alpha, mode).total;
            for (const auto& seg : batch.segments)
                pooled[static_cast<std::size_t>(cand)].add_segment(
                    ds.trajectories[static_cast<std::size_t>(seg.traj)], seg, decoder, cand);
        }
    }

    std::array<DependenceScore, 2> scores;
    for (int cand = 0; cand < 2; ++cand) {
        scores[static_cast<std::size_t>(cand)] =
            action_dependence_score(pooled[static_cast<std::size_t>(cand)]);
        res.action_dependence[static_cast<std::size_t>(cand)] =
            scores[static_cast<std::size_t>(cand)].raw;
    }

    const double l0 = res.loglik[0], l1 = res.loglik[1];
    const double tie_scale = std::max({1.0, std::abs(l0), std::abs(l1)});
    int winner;
    if (std::abs(l0 - l1) <= 1e-9 * tie_scale)
        winner = res.action_dependence[1] > res.action_dependence[0] ? 1 : 0;
    else
        winner = l1 > l0 ? 1 : 0;

    res.partition.endo_factor = winner;
    res.partition.degenerate =
        scores[0].excess < degenerate_tol && scores[1].excess < degenerate_tol;
    return res;
}

// ---------------------------------------------------------------------------
// Ensemble fitting
// ---------------------------------------------------------------------------

namespace {

struct LatentView {
    // per trajectory, per time index: projected state id
    std::vector<std::vector<int>> state;
};

/// Projects every observation to a model-state id: the partition's endo
/// factor for the separated model, or the dense factor pair for the joint
/// baseline.
LatentView project(const OfflineDataset& ds, const FactorDecoder& decoder, bool joint,
                   int endo_factor) {
    LatentView view;
    view.state.reserve(ds.trajectories.size());
    const int d1 = decoder.n_factor[1];
    for (const auto& traj : ds.trajectories) {
        std::vector<int> ids;
        ids.reserve(traj.observations.size());
        for (const int obs : traj.observations) {
            const auto f = decoder.decode(obs);
            ids.push_back(joint ? f[0] * d1 + f[1]
                                : f[static_cast<std::size_t>(endo_factor)]);
        }
        view.state.push_back(std::move(ids));
    }
    return view;
}

transtable fit_member(const OfflineDataset& ds, const LatentView& view, int n_states,
                      double alpha, const std::vector<int>& traj_indices) {
    const int n_act = ds.n_act;
    std::vector<std::vector<std::vector<long long>>> counts(
        static_cast<std::size_t>(n_states),
        std::vector<std::vector<long long>>(static_cast<std::size_t>(n_act),
                                            std::vector<long long>(
                                                static_cast<std::size_t>(n_states), 0)));
    for (const int ti : traj_indices) {
        const auto& traj = ds.trajectories[static_cast<std::size_t>(ti)];
        const auto& ids = view.state[static_cast<std::size_t>(ti)];
        for (int t = 0; t < traj.steps(); ++t)
            ++counts[static_cast<std::size_t>(ids[static_cast<std::size_t>(t)])]
                    [static_cast<std::size_t>(traj.actions[static_cast<std::size_t>(t)])]
                    [static_cast<std::size_t>(ids[static_cast<std::size_t>(t) + 1])];
    }

    transtable table(static_cast<std::size_t>(n_states),
                     numvecvec(static_cast<std::size_t>(n_act),
                               numvec(static_cast<std::size_t>(n_states), 0.0)));
    for (int s = 0; s < n_states; ++s) {
        for (int a = 0; a < n_act; ++a) {
            long long tot = 0;
            for (int s2 = 0; s2 < n_states; ++s2)
                tot += counts[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)]
                             [static_cast<std::size_t>(s2)];
            auto& row = table[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)];
            const double den = static_cast<double>(tot) + alpha * n_states;
            if (den <= 0.0) {
                // never visited and alpha = 0: fall back to uniform
                std::fill(row.begin(), row.end(), 1.0 / n_states);
                continue;
            }
            for (int s2 = 0; s2 < n_states; ++s2)
                row[static_cast<std::size_t>(s2)] =
                    (static_cast<double>(
                         counts[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)]
                               [static_cast<std::size_t>(s2)]) +
                     alpha) /
                    den;
        }
    }
    return table;
}

EnsembleModel fit_common(const OfflineDataset& ds, const FactorDecoder& decoder, bool joint,
                         const Partition& partition, int K, double alpha, std::uint64_t seed,
                         bool bootstrap, Exec exec) {
    if (K < 1) throw ConfigError("ensemble fit: K must be >= 1");
    if (alpha < 0.0) throw ConfigError("ensemble fit: alpha must be >= 0");
    if (ds.trajectories.empty()) throw std::invalid_argument("ensemble fit: empty dataset");
    if (!joint && partition.degenerate)
        throw ConfigError("ensemble fit: partition is degenerate");

    const int endo_factor = joint ? 0 : partition.endo_factor;
    const int n_states = joint ? decoder.n_factor[0] * decoder.n_factor[1]
                               : decoder.n_factor[static_cast<std::size_t>(endo_factor)];
    const int n_exo =
        joint ? 0 : decoder.n_factor[static_cast<std::size_t>(1 - endo_factor)];
    const int n_act = ds.n_act;
    const int n = ds.n_traj();

    EnsembleModel model;
    model.joint = joint;
    model.partition = partition;
    model.factor_dims = decoder.n_factor;
    model.n_states = n_states;
    model.n_exo_states = n_exo;
    model.n_act = n_act;
    model.alpha = alpha;
    model.discount = decoder.discount;
    model.dataset_fingerprint = dataset_fingerprint(ds);
    model.env_fingerprint = ds.env_fingerprint;
    model.seed = seed;
    model.members.assign(static_cast<std::size_t>(K), transtable{});

    const LatentView view = project(ds, decoder, joint, endo_factor);

    // members fit in parallel; each resample stream derives from (seed, k)
    [[maybe_unused]] const bool par = exec == Exec::par;
    const std::int64_t kk = K;
#pragma omp parallel for schedule(static) if (par)
    for (std::int64_t k = 0; k < kk; ++k) {
        std::vector<int> indices(static_cast<std::size_t>(n));
        if (bootstrap) {
            Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
            for (auto& idx : indices) idx = static_cast<int>(rng.uniform_int(n));
        } else {
            for (int i = 0; i < n; ++i) indices[static_cast<std::size_t>(i)] = i;
        }
        model.members[static_cast<std::size_t>(k)] =
            fit_member(ds, view, n_states, alpha, indices);
    }

    // exogenous table, reward, and visit counts from the full dataset
    std::vector<int> all(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;

    if (!joint) {
        const LatentView exo_view = project(ds, decoder, false, 1 - endo_factor);
        std::vector<std::vector<long long>> xc(
            static_cast<std::size_t>(n_exo),
            std::vector<long long>(static_cast<std::size_t>(n_exo), 0));
        for (const auto& ids : exo_view.state)
            for (std::size_t t = 0; t + 1 < ids.size(); ++t)
                ++xc[static_cast<std::size_t>(ids[t])][static_cast<std::size_t>(ids[t + 1])];
        model.exo_trans.assign(static_cast<std::size_t>(n_exo),
                               numvec(static_cast<std::size_t>(n_exo), 0.0));
        for (int x = 0; x < n_exo; ++x) {
            long long tot = 0;
            for (int x2 = 0; x2 < n_exo; ++x2)
                tot += xc[static_cast<std::size_t>(x)][static_cast<std::size_t>(x2)];
            const double den = static_cast<double>(tot) + alpha * n_exo;
            auto& row = model.exo_trans[static_cast<std::size_t>(x)];
            if (den <= 0.0) {
                std::fill(row.begin(), row.end(), 1.0 / n_exo);
                continue;
            }
            for (int x2 = 0; x2 < n_exo; ++x2)
                row[static_cast<std::size_t>(x2)] =
                    (static_cast<double>(
                         xc[static_cast<std::size_t>(x)][static_cast<std::size_t>(x2)]) +
                     alpha) /
                    den;
        }
    }

    model.reward.assign(static_cast<std::size_t>(n_states),
                        numvec(static_cast<std::size_t>(n_act), 0.0));
    model.visit_counts.assign(static_cast<std::size_t>(n_states),
                              std::vector<long long>(static_cast<std::size_t>(n_act), 0));
    for (int ti = 0; ti < n; ++ti) {
        const auto& traj = ds.trajectories[static_cast<std::size_t>(ti)];
        const auto& ids = view.state[static_cast<std::size_t>(ti)];
        for (int t = 0; t < traj.steps(); ++t) {
            const auto s = static_cast<std::size_t>(ids[static_cast<std::size_t>(t)]);
            const auto a = static_cast<std::size_t>(traj.actions[static_cast<std::size_t>(t)]);
            model.reward[s][a] += traj.rewards[static_cast<std::size_t>(t)];
            ++model.visit_counts[s][a];
        }
    }
    for (int s = 0; s < n_states; ++s)
        for (int a = 0; a < n_act; ++a) {
            const auto c = model.visit_counts[static_cast<std::size_t>(s)]
                                             [static_cast<std::size_t>(a)];
            if (c > 0)
                model.reward[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)] /=
                    static_cast<double>(c);
        }
    return model;
}

}  // namespace

EnsembleModel fit_separated_model(const OfflineDataset& ds, const FactorDecoder& decoder,
                                  const Partition& partition, int K, double alpha,
                                  std::uint64_t seed, bool bootstrap, Exec exec) {
    return fit_common(ds, decoder, false, partition, K, alpha, seed, bootstrap, exec);
}

EnsembleModel fit_joint_model(const OfflineDataset& ds, const FactorDecoder& decoder, int K,
                              double alpha, std::uint64_t seed, bool bootstrap, Exec exec) {
    return fit_common(ds, decoder, true, Partition{}, K, alpha, seed, bootstrap, exec);
}

// ---------------------------------------------------------------------------
// Model serialization
// ---------------------------------------------------------------------------

namespace {

json trans_to_json(const transtable& t) {
    json data = json::array();
    for (const auto& rows : t)
        for (const auto& row : rows)
            for (const double v : row) data.push_back(fmt_double(v));
    return data;
}

transtable trans_from_json(const json& data, int n_states, int n_act) {
    transtable t(static_cast<std::size_t>(n_states),
                 numvecvec(static_cast<std::size_t>(n_act),
                           numvec(static_cast<std::size_t>(n_states))));
    if (static_cast<int>(data.size()) != n_states * n_act * n_states)
        throw ArtifactError(ArtifactError::Kind::parse, "member table shape mismatch");
    std::size_t k = 0;
    for (int s = 0; s < n_states; ++s)
        for (int a = 0; a < n_act; ++a)
            for (int s2 = 0; s2 < n_states; ++s2)
                t[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)]
                 [static_cast<std::size_t>(s2)] =
                     parse_double(data.at(k++).get_ref<const std::string&>());
    return t;
}

}  // namespace

json model_to_json(const EnsembleModel& m) {
    json j;
    j["format_version"] = kFormatVersion;
    j["kind"] = "ensemble_model";
    j["joint"] = m.joint;
    j["endo_factor"] = m.partition.endo_factor;
    j["degenerate"] = m.partition.degenerate;
    j["factor_dims"] = {m.factor_dims[0], m.factor_dims[1]};
    j["n_states"] = m.n_states;
    j["n_exo_states"] = m.n_exo_states;
    j["n_act"] = m.n_act;
    j["K"] = m.ensemble_size();
    j["alpha"] = fmt_double(m.alpha);
    j["discount"] = fmt_double(m.discount);
    j["dataset_fingerprint"] = hex64(m.dataset_fingerprint);
    j["env_fingerprint"] = hex64(m.env_fingerprint);
    j["config_hash"] = hex64(m.config_hash);
    j["seed"] = m.seed;
    json members = json::array();
    for (const auto& t : m.members) members.push_back(trans_to_json(t));
    j["members"] = std::move(members);
    json exo = json::array();
    for (const auto& row : m.exo_trans)
        for (const double v : row) exo.push_back(fmt_double(v));
    j["exo_trans"] = std::move(exo);
    json reward = json::array();
    for (const auto& row : m.reward)
        for (const double v : row) reward.push_back(fmt_double(v));
    j["reward"] = std::move(reward);
    json counts = json::array();
    for (const auto& row : m.visit_counts)
        for (const long long v : row) counts.push_back(v);
    j["visit_counts"] = std::move(counts);
    return j;
}

EnsembleModel model_from_json(const json& j) {
    if (j.at("format_version").get<int>() != kFormatVersion)
        throw ArtifactError(ArtifactError::Kind::version, "unsupported model format version");
    if (j.at("kind").get<std::string>() != "ensemble_model")
        throw ArtifactError(ArtifactError::Kind::parse, "not a model file");
    EnsembleModel m;
    m.joint = j.at("joint").get<bool>();
    m.partition.endo_factor = j.at("endo_factor").get<int>();
    m.partition.degenerate = j.at("degenerate").get<bool>();
    m.factor_dims = {j.at("factor_dims").at(0).get<int>(),
                     j.at("factor_dims").at(1).get<int>()};
    m.n_states = j.at("n_states").get<int>();
    m.n_exo_states = j.at("n_exo_states").get<int>();
    m.n_act = j.at("n_act").get<int>();
    const int K = j.at("K").get<int>();
    m.alpha = parse_double(j.at("alpha").get_ref<const std::string&>());
    m.discount = parse_double(j.at("discount").get_ref<const std::string&>());
    m.dataset_fingerprint =
        parse_hex64(j.at("dataset_fingerprint").get_ref<const std::string&>());
    m.env_fingerprint = parse_hex64(j.at("env_fingerprint").get_ref<const std::string&>());
    m.config_hash = parse_hex64(j.at("config_hash").get_ref<const std::string&>());
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& t : j.at("members"))
        m.members.push_back(trans_from_json(t, m.n_states, m.n_act));
    if (static_cast<int>(m.members.size()) != K)
        throw ArtifactError(ArtifactError::Kind::parse, "member count mismatch");
    {
        const auto& exo = j.at("exo_trans");
        if (static_cast<int>(exo.size()) != m.n_exo_states * m.n_exo_states)
            throw ArtifactError(ArtifactError::Kind::parse, "exo table shape mismatch");
        m.exo_trans.assign(static_cast<std::size_t>(m.n_exo_states),
                           numvec(static_cast<std::size_t>(m.n_exo_states)));
        std::size_t k = 0;
        for (auto& row : m.exo_trans)
            for (auto& v : row) v = parse_double(exo.at(k++).get_ref<const std::string&>());
    }
    {
        const auto& rew = j.at("reward");
        if (static_cast<int>(rew.size()) != m.n_states * m.n_act)
            throw ArtifactError(ArtifactError::Kind::parse, "reward table shape mismatch");
        m.reward.assign(static_cast<std::size_t>(m.n_states),
                        numvec(static_cast<std::size_t>(m.n_act)));
        std::size_t k = 0;
        for (auto& row : m.reward)
            for (auto& v : row) v = parse_double(rew.at(k++).get_ref<const std::string&>());
    }
    {
        const auto& counts = j.at("visit_counts");
        if (static_cast<int>(counts.size()) != m.n_states * m.n_act)
            throw ArtifactError(ArtifactError::Kind::parse, "visit count shape mismatch");
        m.visit_counts.assign(static_cast<std::size_t>(m.n_states),
                              std::vector<long long>(static_cast<std::size_t>(m.n_act)));
        std::size_t k = 0;
        for (auto& row : m.visit_counts)
            for (auto& v : row) v = counts.at(k++).get<long long>();
    }
    return m;
}

void save_model(const EnsembleModel& model, const std::filesystem::path& path) {
    atomic_write_file(path, model_to_json(model).dump() + "\n");
}

EnsembleModel load_model(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ArtifactError(ArtifactError::Kind::parse,
                            "cannot parse '" + path.string() + "': " + e.what());
    }
    return model_from_json(j);
}

}  // namespace seprl
