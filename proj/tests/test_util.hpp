#pragma once

// Shared builders for the test suites. Random instances are always derived
// from an explicit seed so every failure reproduces.

#include <vector>

#include "seprl/common.hpp"
#include "seprl/exbmdp.hpp"

namespace seprl::testutil {

inline PolicyTable uniform_policy(int n_states, int n_actions) {
    PolicyTable p;
    p.probs.assign(static_cast<std::size_t>(n_states),
                   numvec(static_cast<std::size_t>(n_actions),
                          1.0 / static_cast<double>(n_actions)));
    return p;
}

inline PolicyTable random_policy(Rng& rng, int n_states, int n_actions) {
    PolicyTable p;
    p.probs.reserve(static_cast<std::size_t>(n_states));
    for (int s = 0; s < n_states; ++s) p.probs.push_back(rng.dirichlet_uniform(n_actions));
    return p;
}

/// Deterministic policy from an explicit state -> action map.
inline PolicyTable deterministic_policy(const std::vector<int>& action_of_state,
                                        int n_actions) {
    PolicyTable p;
    p.probs.assign(action_of_state.size(), numvec(static_cast<std::size_t>(n_actions), 0.0));
    for (std::size_t s = 0; s < action_of_state.size(); ++s)
        p.probs[s][static_cast<std::size_t>(action_of_state[s])] = 1.0;
    return p;
}

/// Random spec with independently drawn stochastic rows, dense emission,
/// uniform initial distributions.
inline ExBmdpSpec random_spec(Rng& rng, int n_endo, int n_exo, int n_act,
                              double discount = 0.9) {
    ExBmdpSpec s;
    s.n_endo = n_endo;
    s.n_exo = n_exo;
    s.n_act = n_act;
    s.discount = discount;
    s.endo_trans.assign(static_cast<std::size_t>(n_endo),
                        numvecvec(static_cast<std::size_t>(n_act)));
    for (auto& per_state : s.endo_trans)
        for (auto& row : per_state) row = rng.dirichlet_uniform(n_endo);
    s.exo_trans.reserve(static_cast<std::size_t>(n_exo));
    for (int x = 0; x < n_exo; ++x) s.exo_trans.push_back(rng.dirichlet_uniform(n_exo));
    s.reward.assign(static_cast<std::size_t>(n_endo), numvec(static_cast<std::size_t>(n_act)));
    for (auto& row : s.reward)
        for (auto& v : row) v = rng.uniform();
    s.emission.assign(static_cast<std::size_t>(n_endo),
                      std::vector<int>(static_cast<std::size_t>(n_exo)));
    for (int e = 0; e < n_endo; ++e)
        for (int x = 0; x < n_exo; ++x)
            s.emission[static_cast<std::size_t>(e)][static_cast<std::size_t>(x)] =
                e * n_exo + x;
    s.init_endo.assign(static_cast<std::size_t>(n_endo), 1.0 / n_endo);
    s.init_exo.assign(static_cast<std::size_t>(n_exo), 1.0 / n_exo);
    return s;
}

/// Row with mass 1 - delta on a dominant successor and the rest spread at
/// random. delta = 0 gives a one-hot row.
inline numvec sharp_row(Rng& rng, int n, int dominant, double delta) {
    numvec row(static_cast<std::size_t>(n), 0.0);
    if (delta > 0.0 && n > 1) {
        row = rng.dirichlet_uniform(n);
        for (auto& v : row) v *= delta;
    }
    row[static_cast<std::size_t>(dominant)] += 1.0 - delta;
    return row;
}

/// Spec with a controllable endogenous cycle (action a advances by a states),
/// sparse rewards concentrated at the last state, and a drifting exogenous
/// chain. The optimal policy is markedly better than uniform, so a medium
/// tier exists.
inline ExBmdpSpec structured_spec(Rng& rng, int n_endo, int n_exo, int n_act,
                                  double discount = 0.95) {
    ExBmdpSpec s;
    s.n_endo = n_endo;
    s.n_exo = n_exo;
    s.n_act = n_act;
    s.discount = discount;
    s.endo_trans.assign(static_cast<std::size_t>(n_endo),
                        numvecvec(static_cast<std::size_t>(n_act)));
    for (int e = 0; e < n_endo; ++e)
        for (int a = 0; a < n_act; ++a)
            s.endo_trans[static_cast<std::size_t>(e)][static_cast<std::size_t>(a)] =
                sharp_row(rng, n_endo, (e + a) % n_endo, 0.15 * rng.uniform());
    s.exo_trans.reserve(static_cast<std::size_t>(n_exo));
    for (int x = 0; x < n_exo; ++x)
        s.exo_trans.push_back(sharp_row(rng, n_exo, (x + 1) % n_exo, 0.3));
    s.reward.assign(static_cast<std::size_t>(n_endo), numvec(static_cast<std::size_t>(n_act)));
    for (auto& row : s.reward)
        for (auto& v : row) v = 0.1 * rng.uniform();
    s.reward[static_cast<std::size_t>(n_endo - 1)][0] = 1.0;
    s.emission.assign(static_cast<std::size_t>(n_endo),
                      std::vector<int>(static_cast<std::size_t>(n_exo)));
    for (int e = 0; e < n_endo; ++e)
        for (int x = 0; x < n_exo; ++x)
            s.emission[static_cast<std::size_t>(e)][static_cast<std::size_t>(x)] =
                e * n_exo + x;
    s.init_endo.assign(static_cast<std::size_t>(n_endo), 1.0 / n_endo);
    s.init_exo.assign(static_cast<std::size_t>(n_exo), 1.0 / n_exo);
    return s;
}

/// Spec whose endogenous transitions react only weakly to actions: each row
/// mixes a shared per-state base row with a small per-action perturbation.
/// Paired with mixture-uniform behavior policies this makes the partition
/// hard to identify from pooled batches.
inline ExBmdpSpec weak_control_spec(Rng& rng, int n_endo, int n_exo, int n_act,
                                    double dep_strength = 0.15, double discount = 0.95) {
    ExBmdpSpec s = structured_spec(rng, n_endo, n_exo, n_act, discount);
    for (int e = 0; e < n_endo; ++e) {
        const numvec base = rng.dirichlet_uniform(n_endo);
        for (int a = 0; a < n_act; ++a) {
            const numvec pert = rng.dirichlet_uniform(n_endo);
            auto& row = s.endo_trans[static_cast<std::size_t>(e)][static_cast<std::size_t>(a)];
            for (int e2 = 0; e2 < n_endo; ++e2)
                row[static_cast<std::size_t>(e2)] =
                    (1.0 - dep_strength) * base[static_cast<std::size_t>(e2)] +
                    dep_strength * pert[static_cast<std::size_t>(e2)];
        }
    }
    // fast-mixing exogenous chain with dense rows
    for (int x = 0; x < n_exo; ++x) s.exo_trans[static_cast<std::size_t>(x)] =
        rng.dirichlet_uniform(n_exo);
    return s;
}

/// Deterministic state-dependent policies in complementary pairs, so the
/// pooled action mixture is exactly uniform at every state.
inline std::vector<PolicyTable> complementary_policy_pairs(Rng& rng, int n_pairs,
                                                           int n_states, int n_actions) {
    std::vector<PolicyTable> out;
    for (int i = 0; i < n_pairs; ++i) {
        std::vector<int> base(static_cast<std::size_t>(n_states));
        for (auto& a : base) a = static_cast<int>(rng.uniform_int(n_actions));
        for (int shift = 0; shift < n_actions; ++shift) {
            std::vector<int> map = base;
            for (auto& a : map) a = (a + shift) % n_actions;
            out.push_back(deterministic_policy(map, n_actions));
        }
    }
    return out;
}

/// 2x2x2 spec with one-hot rows everywhere; the unique trajectory from any
/// start is fully determined.
inline ExBmdpSpec deterministic_spec(double discount = 0.9) {
    ExBmdpSpec s;
    s.n_endo = 2;
    s.n_exo = 2;
    s.n_act = 2;
    s.discount = discount;
    // action 0 stays, action 1 swaps
    s.endo_trans = {{{1.0, 0.0}, {0.0, 1.0}}, {{0.0, 1.0}, {1.0, 0.0}}};
    // exo cycles deterministically
    s.exo_trans = {{0.0, 1.0}, {1.0, 0.0}};
    s.reward = {{0.0, 1.0}, {1.0, 0.0}};
    s.emission = {{0, 1}, {2, 3}};
    s.init_endo = {1.0, 0.0};
    s.init_exo = {1.0, 0.0};
    return s;
}

}  // namespace seprl::testutil
