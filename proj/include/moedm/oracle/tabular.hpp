#pragma once

#include "moedm/env/user_sim.hpp"

namespace moedm::oracle {

// Finite MDP over expert indices. Rows of P must sum to one; terminal states
// absorb with zero reward.
struct TabularMoEMDP {
    int n_states = 0;
    int n_actions = 0;
    std::vector<std::vector<std::vector<std::pair<int, double>>>> P; // [s][a] -> (s', prob)
    std::vector<std::vector<double>> R;                              // [s][a]
    std::vector<bool> terminal;
    int s0 = 0;
    double gamma = 0.8;

    void validate() const {
        for (int s = 0; s < n_states; ++s)
            for (int a = 0; a < n_actions; ++a) {
                double total = 0.0;
                for (auto [sp, p] : P[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)]) {
                    MOEDM_REQUIRE(sp >= 0 && sp < n_states, "transition target out of range");
                    total += p;
                }
                MOEDM_REQUIRE(std::fabs(total - 1.0) < 1e-9, "transition row does not sum to 1");
            }
    }
};

inline TabularMoEMDP make_empty_mdp(int n_states, int n_actions, double gamma) {
    TabularMoEMDP m;
    m.n_states = n_states;
    m.n_actions = n_actions;
    m.gamma = gamma;
    m.P.assign(static_cast<std::size_t>(n_states),
               std::vector<std::vector<std::pair<int, double>>>(static_cast<std::size_t>(n_actions)));
    m.R.assign(static_cast<std::size_t>(n_states), std::vector<double>(static_cast<std::size_t>(n_actions), 0.0));
    m.terminal.assign(static_cast<std::size_t>(n_states), false);
    return m;
}

// State indexing for the trust environment: (turn, trust band, mood band).
inline int env_state_id(int turn, int tband, int mband) {
    return (turn * env::kTrustBands + tband) * env::kMoodBands + mband;
}

struct EnvStateParts {
    int turn, tband, mband;
};

inline EnvStateParts env_state_parts(int id) {
    return {id / (env::kTrustBands * env::kMoodBands), (id / env::kMoodBands) % env::kTrustBands,
            id % env::kMoodBands};
}

// Exact tabular abstraction of the noise-free environment where expert i
// deterministically plays intent i. Shares band_step with the live
// environment, so simulation and abstraction agree to the last bit.
inline TabularMoEMDP build_tabular(const env::EnvConfig& cfg) {
    MOEDM_REQUIRE(cfg.noise_free(), "build_tabular requires the noise-free band-exact config");
    int n = (cfg.horizon + 1) * env::kTrustBands * env::kMoodBands;
    auto mdp = make_empty_mdp(n, toy::kNumIntents, cfg.gamma);
    mdp.s0 = env_state_id(0, 0, env::mood_band(cfg.init_mood_mean));
    for (int turn = 0; turn <= cfg.horizon; ++turn)
        for (int tb = 0; tb < env::kTrustBands; ++tb)
            for (int mb = 0; mb < env::kMoodBands; ++mb) {
                int s = env_state_id(turn, tb, mb);
                if (turn >= cfg.horizon) {
                    mdp.terminal[static_cast<std::size_t>(s)] = true;
                    for (int a = 0; a < toy::kNumIntents; ++a)
                        mdp.P[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)] = {{s, 1.0}};
                    continue;
                }
                for (int a = 0; a < toy::kNumIntents; ++a) {
                    auto b = env::band_step(cfg, env::mood_mid(mb), env::trust_mid(tb),
                                            toy::intent_from_index(a));
                    int sp = env_state_id(turn + 1, env::trust_band(b.trust), env::mood_band(b.mood));
                    mdp.P[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)] = {{sp, 1.0}};
                    mdp.R[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)] = b.reply_level;
                }
            }
    mdp.validate();
    return mdp;
}

inline double q_value(const TabularMoEMDP& m, const std::vector<double>& v, int s, int a) {
    if (m.terminal[static_cast<std::size_t>(s)]) return 0.0;
    double q = m.R[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)];
    for (auto [sp, p] : m.P[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)])
        q += m.gamma * p * v[static_cast<std::size_t>(sp)];
    return q;
}

inline std::vector<double> bellman_backup(const TabularMoEMDP& m, const std::vector<double>& v) {
    std::vector<double> out(static_cast<std::size_t>(m.n_states), 0.0);
    for (int s = 0; s < m.n_states; ++s) {
        if (m.terminal[static_cast<std::size_t>(s)]) continue;
        double best = -1e300;
        for (int a = 0; a < m.n_actions; ++a) best = std::max(best, q_value(m, v, s, a));
        out[static_cast<std::size_t>(s)] = best;
    }
    return out;
}

struct ValueIterationResult {
    std::vector<double> v;
    std::vector<std::vector<double>> q;        // [s][a]
    std::vector<int> policy;                   // greedy, ties to lowest index
    std::vector<std::vector<int>> optimal_set; // all actions within 1e-9 of the best
    int sweeps = 0;
};

inline ValueIterationResult value_iteration(const TabularMoEMDP& m, double tol = 1e-10) {
    ValueIterationResult res;
    // pessimistic init keeps the sweep sequence monotone
    double rmin = 0.0;
    for (const auto& row : m.R)
        for (double r : row) rmin = std::min(rmin, r);
    res.v.assign(static_cast<std::size_t>(m.n_states), rmin / (1.0 - m.gamma));
    for (int s = 0; s < m.n_states; ++s)
        if (m.terminal[static_cast<std::size_t>(s)]) res.v[static_cast<std::size_t>(s)] = 0.0;

    for (int it = 0; it < 100000; ++it) {
        auto next = bellman_backup(m, res.v);
        double delta = 0.0;
        for (int s = 0; s < m.n_states; ++s)
            delta = std::max(delta, std::fabs(next[static_cast<std::size_t>(s)] - res.v[static_cast<std::size_t>(s)]));
        res.v = std::move(next);
        ++res.sweeps;
        if (delta < tol) break;
    }

    res.q.assign(static_cast<std::size_t>(m.n_states), std::vector<double>(static_cast<std::size_t>(m.n_actions), 0.0));
    res.policy.assign(static_cast<std::size_t>(m.n_states), 0);
    res.optimal_set.assign(static_cast<std::size_t>(m.n_states), {});
    for (int s = 0; s < m.n_states; ++s) {
        double best = -1e300;
        for (int a = 0; a < m.n_actions; ++a) {
            double q = q_value(m, res.v, s, a);
            res.q[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)] = q;
            if (q > best) {
                best = q;
                res.policy[static_cast<std::size_t>(s)] = a;
            }
        }
        for (int a = 0; a < m.n_actions; ++a)
            if (res.q[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)] >= best - 1e-9)
                res.optimal_set[static_cast<std::size_t>(s)].push_back(a);
    }
    return res;
}

// Exact evaluation of a stationary deterministic policy by value iteration
// restricted to its actions.
inline std::vector<double> policy_eval(const TabularMoEMDP& m, const std::vector<int>& policy,
                                       double tol = 1e-12) {
    std::vector<double> v(static_cast<std::size_t>(m.n_states), 0.0);
    for (int it = 0; it < 100000; ++it) {
        double delta = 0.0;
        std::vector<double> next(static_cast<std::size_t>(m.n_states), 0.0);
        for (int s = 0; s < m.n_states; ++s) {
            if (m.terminal[static_cast<std::size_t>(s)]) continue;
            next[static_cast<std::size_t>(s)] = q_value(m, v, s, policy[static_cast<std::size_t>(s)]);
            delta = std::max(delta, std::fabs(next[static_cast<std::size_t>(s)] - v[static_cast<std::size_t>(s)]));
        }
        v = std::move(next);
        if (delta < tol) break;
    }
    return v;
}

// Value of following one expert everywhere.
inline std::vector<double> policy_eval(const TabularMoEMDP& m, int expert, double tol = 1e-12) {
    return policy_eval(m, std::vector<int>(static_cast<std::size_t>(m.n_states), expert), tol);
}

// Per-step immediate-reward maximizer, ties to the lowest index.
inline std::vector<int> myopic_policy(const TabularMoEMDP& m) {
    std::vector<int> pol(static_cast<std::size_t>(m.n_states), 0);
    for (int s = 0; s < m.n_states; ++s) {
        double best = -1e300;
        for (int a = 0; a < m.n_actions; ++a) {
            double r = m.R[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)];
            if (r > best + 1e-12) {
                best = r;
                pol[static_cast<std::size_t>(s)] = a;
            }
        }
    }
    return pol;
}

inline std::vector<int> reachable_states(const TabularMoEMDP& m) {
    std::vector<bool> seen(static_cast<std::size_t>(m.n_states), false);
    std::vector<int> stack{m.s0}, out;
    seen[static_cast<std::size_t>(m.s0)] = true;
    while (!stack.empty()) {
        int s = stack.back();
        stack.pop_back();
        out.push_back(s);
        if (m.terminal[static_cast<std::size_t>(s)]) continue;
        for (int a = 0; a < m.n_actions; ++a)
            for (auto [sp, p] : m.P[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)]) {
                if (p > 0.0 && !seen[static_cast<std::size_t>(sp)]) {
                    seen[static_cast<std::size_t>(sp)] = true;
                    stack.push_back(sp);
                }
            }
    }
    return out;
}

inline nlohmann::json mdp_to_json(const TabularMoEMDP& m) {
    nlohmann::json P = nlohmann::json::array();
    for (const auto& srow : m.P) {
        nlohmann::json arow = nlohmann::json::array();
        for (const auto& alist : srow) {
            nlohmann::json entries = nlohmann::json::array();
            for (auto [sp, p] : alist) entries.push_back({{"s", sp}, {"p", p}});
            arow.push_back(entries);
        }
        P.push_back(arow);
    }
    return {{"format", "moedm-mdp-v1"}, {"n_states", m.n_states}, {"n_actions", m.n_actions},
            {"gamma", m.gamma},         {"s0", m.s0},             {"terminal", m.terminal},
            {"R", m.R},                 {"P", P}};
}

} // namespace moedm::oracle
