#include "seprl/exbmdp.hpp"

#include <cmath>
#include <map>
#include <sstream>
#include <utility>

namespace seprl {

namespace {

constexpr double kRowSumTol = 1e-12;

bool row_ok(const numvec& row, std::string* why) {
    double sum = 0.0;
    for (const double v : row) {
        if (v < 0.0) {
            *why = "negative entry " + fmt_double(v);
            return false;
        }
        sum += v;
    }
    if (std::abs(sum - 1.0) > kRowSumTol) {
        *why = "row sums to " + fmt_double(sum);
        return false;
    }
    return true;
}

}  // namespace

std::string ValidationReport::to_string() const {
    std::ostringstream out;
    for (const auto& issue : issues) out << issue.code << ": " << issue.detail << "\n";
    return out.str();
}

ValidationReport validate(const ExBmdpSpec& spec) {
    ValidationReport rep;
    auto add = [&rep](std::string code, std::string detail) {
        rep.issues.push_back({std::move(code), std::move(detail)});
    };

    if (spec.n_endo <= 0 || spec.n_exo <= 0 || spec.n_act <= 0)
        add("sizes", "state/action counts must be positive");
    if (!(spec.discount >= 0.0 && spec.discount < 1.0))
        add("discount", "discount " + fmt_double(spec.discount) + " outside [0,1)");

    const auto ne = static_cast<std::size_t>(spec.n_endo);
    const auto nx = static_cast<std::size_t>(spec.n_exo);
    const auto na = static_cast<std::size_t>(spec.n_act);

    if (spec.endo_trans.size() != ne) {
        add("shape", "endo_trans has " + std::to_string(spec.endo_trans.size()) + " states");
    } else {
        for (std::size_t s = 0; s < ne; ++s) {
            if (spec.endo_trans[s].size() != na) {
                add("shape", "endo_trans[" + std::to_string(s) + "] has wrong action count");
                continue;
            }
            for (std::size_t a = 0; a < na; ++a) {
                const auto& row = spec.endo_trans[s][a];
                std::string why;
                if (row.size() != ne)
                    add("shape", "endo_trans row (s+=" + std::to_string(s) + ", a=" +
                                     std::to_string(a) + ") has wrong length");
                else if (!row_ok(row, &why))
                    add("endo_row", "(s+=" + std::to_string(s) + ", a=" + std::to_string(a) +
                                        "): " + why);
            }
        }
    }

    if (spec.exo_trans.size() != nx) {
        add("shape", "exo_trans has " + std::to_string(spec.exo_trans.size()) + " states");
    } else {
        for (std::size_t s = 0; s < nx; ++s) {
            const auto& row = spec.exo_trans[s];
            std::string why;
            if (row.size() != nx)
                add("shape", "exo_trans row (s-=" + std::to_string(s) + ") has wrong length");
            else if (!row_ok(row, &why))
                add("exo_row", "(s-=" + std::to_string(s) + "): " + why);
        }
    }

    if (spec.reward.size() != ne) {
        add("shape", "reward table has " + std::to_string(spec.reward.size()) + " states");
    } else {
        for (std::size_t s = 0; s < ne; ++s) {
            if (spec.reward[s].size() != na) {
                add("shape", "reward[" + std::to_string(s) + "] has wrong action count");
                continue;
            }
            for (std::size_t a = 0; a < na; ++a) {
                const double r = spec.reward[s][a];
                if (!(r >= 0.0 && r <= 1.0))
                    add("reward_range", "(s+=" + std::to_string(s) + ", a=" + std::to_string(a) +
                                            "): " + fmt_double(r));
            }
        }
    }

    if (spec.emission.size() != ne) {
        add("shape", "emission has " + std::to_string(spec.emission.size()) + " endo rows");
    } else {
        std::map<int, std::pair<int, int>> seen;
        for (std::size_t sp = 0; sp < ne; ++sp) {
            if (spec.emission[sp].size() != nx) {
                add("shape", "emission[" + std::to_string(sp) + "] has wrong length");
                continue;
            }
            for (std::size_t sx = 0; sx < nx; ++sx) {
                const int obs = spec.emission[sp][sx];
                if (obs < 0) {
                    add("emission_range", "negative observation id at (s+=" +
                                              std::to_string(sp) + ", s-=" + std::to_string(sx) +
                                              ")");
                    continue;
                }
                const auto [it, inserted] =
                    seen.emplace(obs, std::pair<int, int>{static_cast<int>(sp),
                                                          static_cast<int>(sx)});
                if (!inserted)
                    add("emission_collision",
                        "observation " + std::to_string(obs) + " emitted by (s+=" +
                            std::to_string(it->second.first) + ", s-=" +
                            std::to_string(it->second.second) + ") and (s+=" +
                            std::to_string(sp) + ", s-=" + std::to_string(sx) + ")");
            }
        }
    }

    auto check_init = [&](const numvec& init, std::size_t n, const char* name) {
        if (init.size() != n) {
            add("shape", std::string(name) + " has wrong length");
            return;
        }
        std::string why;
        if (!row_ok(init, &why)) add("init_sum", std::string(name) + ": " + why);
    };
    check_init(spec.init_endo, ne, "init_endo");
    check_init(spec.init_exo, nx, "init_exo");

    return rep;
}

bool is_valid_policy(const PolicyTable& policy, int n_states, int n_actions, double tol) {
    if (policy.n_states() != n_states) return false;
    for (const auto& row : policy.probs) {
        if (row.size() != static_cast<std::size_t>(n_actions)) return false;
        double sum = 0.0;
        for (const double v : row) {
            if (v < 0.0) return false;
            sum += v;
        }
        if (std::abs(sum - 1.0) > tol) return false;
    }
    return true;
}

LatentState sample_initial(const ExBmdpSpec& spec, Rng& rng) {
    LatentState z;
    z.endo = rng.categorical(spec.init_endo);
    z.exo = rng.categorical(spec.init_exo);
    return z;
}

int observe(const ExBmdpSpec& spec, LatentState z) {
    if (z.endo < 0 || z.endo >= spec.n_endo || z.exo < 0 || z.exo >= spec.n_exo)
        throw std::out_of_range("observe: latent state out of range");
    return spec.emission[static_cast<std::size_t>(z.endo)][static_cast<std::size_t>(z.exo)];
}

StepResult step(const ExBmdpSpec& spec, LatentState state, int action, Rng& rng) {
    if (state.endo < 0 || state.endo >= spec.n_endo)
        throw std::out_of_range("step: endogenous state out of range");
    if (state.exo < 0 || state.exo >= spec.n_exo)
        throw std::out_of_range("step: exogenous state out of range");
    if (action < 0 || action >= spec.n_act)
        throw std::out_of_range("step: action out of range");

    StepResult res;
    res.reward = spec.reward[static_cast<std::size_t>(state.endo)]
                            [static_cast<std::size_t>(action)];
    res.next.endo = rng.categorical(
        spec.endo_trans[static_cast<std::size_t>(state.endo)][static_cast<std::size_t>(action)]);
    res.next.exo = rng.categorical(spec.exo_trans[static_cast<std::size_t>(state.exo)]);
    res.observation = observe(spec, res.next);
    return res;
}

numvec policy_values(const transtable& trans, const numvecvec& reward,
                     const PolicyTable& policy, double gamma) {
    if (!(gamma >= 0.0 && gamma < 1.0))
        throw ConfigError("policy_values: discount must lie in [0,1)");
    const std::size_t n = trans.size();
    if (policy.probs.size() != n)
        throw std::invalid_argument("policy_values: policy/state count mismatch");

    // (I - gamma * P_pi) V = r_pi
    numvec a(n * n, 0.0);
    numvec b(n, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
        const auto& pol = policy.probs[s];
        double r = 0.0;
        for (std::size_t act = 0; act < pol.size(); ++act) {
            const double p = pol[act];
            if (p == 0.0) continue;
            r += p * reward[s][act];
            const auto& row = trans[s][act];
            for (std::size_t s2 = 0; s2 < n; ++s2) a[s * n + s2] -= gamma * p * row[s2];
        }
        a[s * n + s] += 1.0;
        b[s] = r;
    }
    return solve_linear(std::move(a), std::move(b));
}

double exact_return(const ExBmdpSpec& spec, const PolicyTable& policy) {
    const numvec values = policy_values(spec.endo_trans, spec.reward, policy, spec.discount);
    double eta = 0.0;
    for (std::size_t s = 0; s < values.size(); ++s) eta += spec.init_endo[s] * values[s];
    return eta;
}

OccupancyMeasure occupancy(const transtable& trans, const numvec& init,
                           const PolicyTable& policy, double gamma, bool scaled, Exec exec,
                           double tol) {
    if (!(gamma >= 0.0 && gamma < 1.0))
        throw ConfigError("occupancy: discount must lie in [0,1)");
    const std::int64_t n = static_cast<std::int64_t>(trans.size());
    const std::size_t na = policy.probs.empty() ? 0 : policy.probs[0].size();
    [[maybe_unused]] const bool par = exec == Exec::par;

    // flow matrix m(s, s') = sum_a pi(a|s) T(s'|s, a)
    numvec flow(static_cast<std::size_t>(n * n), 0.0);
    for (std::int64_t s = 0; s < n; ++s) {
        for (std::size_t a = 0; a < na; ++a) {
            const double p = policy.probs[static_cast<std::size_t>(s)][a];
            if (p == 0.0) continue;
            const auto& row = trans[static_cast<std::size_t>(s)][a];
            for (std::int64_t s2 = 0; s2 < n; ++s2)
                flow[static_cast<std::size_t>(s * n + s2)] += p * row[static_cast<std::size_t>(s2)];
        }
    }

    // fixed point of x = init + gamma * flow^T x
    numvec x(init);
    numvec next(static_cast<std::size_t>(n), 0.0);
    numvec resid(static_cast<std::size_t>(n), 0.0);
    const long max_sweeps = 1000000;
    for (long sweep = 0; sweep < max_sweeps; ++sweep) {
#pragma omp parallel for schedule(static) if (par)
        for (std::int64_t s2 = 0; s2 < n; ++s2) {
            double acc = init[static_cast<std::size_t>(s2)];
            for (std::int64_t s = 0; s < n; ++s)
                acc += gamma * flow[static_cast<std::size_t>(s * n + s2)] *
                       x[static_cast<std::size_t>(s)];
            next[static_cast<std::size_t>(s2)] = acc;
            resid[static_cast<std::size_t>(s2)] =
                std::abs(acc - x[static_cast<std::size_t>(s2)]);
        }
        std::swap(x, next);
        double rmax = 0.0;
        for (const double v : resid) rmax = std::max(rmax, v);
        if (rmax <= tol) break;
    }

    OccupancyMeasure occ;
    occ.discount = gamma;
    occ.scaled = scaled;
    occ.rho.assign(static_cast<std::size_t>(n), numvec(na, 0.0));
    const double scale = scaled ? (1.0 - gamma) : 1.0;
    for (std::int64_t s = 0; s < n; ++s)
        for (std::size_t a = 0; a < na; ++a)
            occ.rho[static_cast<std::size_t>(s)][a] =
                scale * x[static_cast<std::size_t>(s)] * policy.probs[static_cast<std::size_t>(s)][a];
    return occ;
}

ViResult value_iterate(const transtable& trans, const numvecvec& reward, double gamma,
                       double tol, Exec exec, long max_iterations) {
    if (!(gamma >= 0.0 && gamma < 1.0))
        throw ConfigError("value_iterate: discount must lie in [0,1)");
    const std::int64_t n = static_cast<std::int64_t>(trans.size());
    const std::size_t na = n > 0 ? trans[0].size() : 0;
    for (const auto& state_rows : trans)
        for (const auto& row : state_rows)
            for (const double v : row)
                if (!std::isfinite(v))
                    throw PlanningError("value_iterate: non-finite transition entry");
    for (const auto& row : reward)
        for (const double v : row)
            if (!std::isfinite(v))
                throw PlanningError(
                    "value_iterate: non-finite reward entry; refit the model with alpha > 0");

    [[maybe_unused]] const bool par = exec == Exec::par;
    ViResult res;
    res.values.assign(static_cast<std::size_t>(n), 0.0);
    res.greedy.assign(static_cast<std::size_t>(n), 0);
    numvec next(static_cast<std::size_t>(n), 0.0);
    numvec deltas(static_cast<std::size_t>(n), 0.0);
    std::vector<int> greedy(static_cast<std::size_t>(n), 0);

    for (long it = 0; it < max_iterations; ++it) {
#pragma omp parallel for schedule(static) if (par)
        for (std::int64_t s = 0; s < n; ++s) {
            const auto su = static_cast<std::size_t>(s);
            double best = -std::numeric_limits<double>::infinity();
            int best_a = 0;
            for (std::size_t a = 0; a < na; ++a) {
                double q = reward[su][a];
                const auto& row = trans[su][a];
                for (std::int64_t s2 = 0; s2 < n; ++s2)
                    q += gamma * row[static_cast<std::size_t>(s2)] *
                         res.values[static_cast<std::size_t>(s2)];
                if (q > best) {  // strict: ties keep the lowest action id
                    best = q;
                    best_a = static_cast<int>(a);
                }
            }
            next[su] = best;
            greedy[su] = best_a;
            deltas[su] = std::abs(best - res.values[su]);
        }
        std::swap(res.values, next);
        res.greedy = greedy;
        double residual = 0.0;
        for (const double v : deltas) residual = std::max(residual, v);
        res.residual_trace.push_back(residual);
        res.iterations = static_cast<int>(it) + 1;
        if (residual <= tol) return res;
    }
    throw PlanningError("value_iterate: did not converge within the iteration cap");
}

double exact_return_product(const ExBmdpSpec& spec, const PolicyTable& policy,
                            const std::vector<std::vector<int>>& policy_state) {
    const std::size_t ne = static_cast<std::size_t>(spec.n_endo);
    const std::size_t nx = static_cast<std::size_t>(spec.n_exo);
    const std::size_t nz = ne * nx;
    if (policy_state.size() != ne)
        throw std::invalid_argument("exact_return_product: policy_state shape mismatch");

    const double gamma = spec.discount;
    if (!(gamma >= 0.0 && gamma < 1.0))
        throw ConfigError("exact_return_product: discount must lie in [0,1)");

    // (I - gamma * P_pi) V = r_pi on the product chain
    numvec a(nz * nz, 0.0);
    numvec b(nz, 0.0);
    for (std::size_t e = 0; e < ne; ++e) {
        for (std::size_t x = 0; x < nx; ++x) {
            const std::size_t z = e * nx + x;
            const int ps = policy_state[e][x];
            if (ps < 0 || ps >= policy.n_states())
                throw std::out_of_range("exact_return_product: policy state out of range");
            const auto& pol = policy.probs[static_cast<std::size_t>(ps)];
            double r = 0.0;
            for (std::size_t act = 0; act < pol.size(); ++act) {
                const double p = pol[act];
                if (p == 0.0) continue;
                r += p * spec.reward[e][act];
                const auto& erow = spec.endo_trans[e][act];
                const auto& xrow = spec.exo_trans[x];
                for (std::size_t e2 = 0; e2 < ne; ++e2) {
                    if (erow[e2] == 0.0) continue;
                    for (std::size_t x2 = 0; x2 < nx; ++x2)
                        a[z * nz + (e2 * nx + x2)] -= gamma * p * erow[e2] * xrow[x2];
                }
            }
            a[z * nz + z] += 1.0;
            b[z] = r;
        }
    }
    const numvec values = solve_linear(std::move(a), std::move(b));

    double eta = 0.0;
    for (std::size_t e = 0; e < ne; ++e)
        for (std::size_t x = 0; x < nx; ++x)
            eta += spec.init_endo[e] * spec.init_exo[x] * values[e * nx + x];
    return eta;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

json table_to_json(const transtable& t, int d0, int d1, int d2) {
    json data = json::array();
    for (const auto& rows : t)
        for (const auto& row : rows)
            for (const double v : row) data.push_back(fmt_double(v));
    return json{{"shape", {d0, d1, d2}}, {"data", std::move(data)}};
}

json matrix_to_json(const numvecvec& m, int d0, int d1) {
    json data = json::array();
    for (const auto& row : m)
        for (const double v : row) data.push_back(fmt_double(v));
    return json{{"shape", {d0, d1}}, {"data", std::move(data)}};
}

json vec_to_json(const numvec& v) {
    json data = json::array();
    for (const double x : v) data.push_back(fmt_double(x));
    return data;
}

transtable table_from_json(const json& j) {
    const auto& shape = j.at("shape");
    const int d0 = shape.at(0).get<int>();
    const int d1 = shape.at(1).get<int>();
    const int d2 = shape.at(2).get<int>();
    const auto& data = j.at("data");
    if (static_cast<int>(data.size()) != d0 * d1 * d2)
        throw ArtifactError(ArtifactError::Kind::parse, "table data does not match shape");
    transtable t(static_cast<std::size_t>(d0),
                 numvecvec(static_cast<std::size_t>(d1), numvec(static_cast<std::size_t>(d2))));
    std::size_t k = 0;
    for (int s = 0; s < d0; ++s)
        for (int a = 0; a < d1; ++a)
            for (int s2 = 0; s2 < d2; ++s2)
                t[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)]
                 [static_cast<std::size_t>(s2)] =
                     parse_double(data.at(k++).get_ref<const std::string&>());
    return t;
}

numvecvec matrix_from_json(const json& j) {
    const auto& shape = j.at("shape");
    const int d0 = shape.at(0).get<int>();
    const int d1 = shape.at(1).get<int>();
    const auto& data = j.at("data");
    if (static_cast<int>(data.size()) != d0 * d1)
        throw ArtifactError(ArtifactError::Kind::parse, "matrix data does not match shape");
    numvecvec m(static_cast<std::size_t>(d0), numvec(static_cast<std::size_t>(d1)));
    std::size_t k = 0;
    for (int r = 0; r < d0; ++r)
        for (int c = 0; c < d1; ++c)
            m[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] =
                parse_double(data.at(k++).get_ref<const std::string&>());
    return m;
}

numvec vec_from_json(const json& j) {
    numvec v;
    v.reserve(j.size());
    for (const auto& e : j) v.push_back(parse_double(e.get_ref<const std::string&>()));
    return v;
}

}  // namespace

json env_to_json(const EnvArtifact& env) {
    const auto& s = env.spec;
    json j;
    j["format_version"] = kFormatVersion;
    j["kind"] = "exbmdp_spec";
    j["n_endo"] = s.n_endo;
    j["n_exo"] = s.n_exo;
    j["n_act"] = s.n_act;
    j["discount"] = fmt_double(s.discount);
    j["endo_trans"] = table_to_json(s.endo_trans, s.n_endo, s.n_act, s.n_endo);
    j["exo_trans"] = matrix_to_json(s.exo_trans, s.n_exo, s.n_exo);
    j["reward"] = matrix_to_json(s.reward, s.n_endo, s.n_act);
    json emission = json::array();
    for (const auto& row : s.emission)
        for (const int v : row) emission.push_back(v);
    j["emission"] = json{{"shape", {s.n_endo, s.n_exo}}, {"data", std::move(emission)}};
    j["init_endo"] = vec_to_json(s.init_endo);
    j["init_exo"] = vec_to_json(s.init_exo);
    j["endo_factor_index"] = env.endo_factor_index;
    j["seed"] = env.seed;
    j["config_hash"] = hex64(env.config_hash);
    j["drift"] = env.drift;
    return j;
}

EnvArtifact env_from_json(const json& j) {
    if (j.at("format_version").get<int>() != kFormatVersion)
        throw ArtifactError(ArtifactError::Kind::version,
                            "unsupported spec format version " +
                                j.at("format_version").dump());
    if (j.at("kind").get<std::string>() != "exbmdp_spec")
        throw ArtifactError(ArtifactError::Kind::parse, "not a spec file");

    EnvArtifact env;
    auto& s = env.spec;
    s.n_endo = j.at("n_endo").get<int>();
    s.n_exo = j.at("n_exo").get<int>();
    s.n_act = j.at("n_act").get<int>();
    s.discount = parse_double(j.at("discount").get_ref<const std::string&>());
    s.endo_trans = table_from_json(j.at("endo_trans"));
    s.exo_trans = matrix_from_json(j.at("exo_trans"));
    s.reward = matrix_from_json(j.at("reward"));
    {
        const auto& em = j.at("emission");
        const int d0 = em.at("shape").at(0).get<int>();
        const int d1 = em.at("shape").at(1).get<int>();
        const auto& data = em.at("data");
        if (static_cast<int>(data.size()) != d0 * d1)
            throw ArtifactError(ArtifactError::Kind::parse, "emission data does not match shape");
        s.emission.assign(static_cast<std::size_t>(d0),
                          std::vector<int>(static_cast<std::size_t>(d1)));
        std::size_t k = 0;
        for (int r = 0; r < d0; ++r)
            for (int c = 0; c < d1; ++c)
                s.emission[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] =
                    data.at(k++).get<int>();
    }
    s.init_endo = vec_from_json(j.at("init_endo"));
    s.init_exo = vec_from_json(j.at("init_exo"));
    env.endo_factor_index = j.at("endo_factor_index").get<int>();
    env.seed = j.at("seed").get<std::uint64_t>();
    env.config_hash = parse_hex64(j.at("config_hash").get_ref<const std::string&>());
    env.drift = j.at("drift").get<std::string>();
    return env;
}

void save_env(const EnvArtifact& env, const std::filesystem::path& path) {
    atomic_write_file(path, env_to_json(env).dump() + "\n");
}

EnvArtifact load_env(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ArtifactError(ArtifactError::Kind::parse,
                            "cannot parse '" + path.string() + "': " + e.what());
    }
    return env_from_json(j);
}

std::uint64_t env_fingerprint(const EnvArtifact& env) {
    return fnv1a64(env_to_json(env).dump());
}

}  // namespace seprl
