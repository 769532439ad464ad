#pragma once

#include "moedm/numkit/adam.hpp"
#include "moedm/numkit/serialize.hpp"

namespace moedm::rl {

using nk::Vec;

// Feature matrix for the general offline RL methods, mirrored verbatim into a
// machine-readable asset. The trainers themselves wire SAC as a dual pair and
// the ensembles as dropout masks; see CriticSet.
struct MethodWiring {
    std::string name;
    bool multiple_q = false;
    bool dropout_q = false;
    bool target_v = true;
    bool target_q = true;
    bool learn_policy = false;
    bool entropy_reg = false;
    bool behavior_reg = false;
};

inline const std::vector<MethodWiring>& wiring_table() {
    static const std::vector<MethodWiring> rows = {
        {"iql", false, true, true, true, true, true, false},
        {"sac", false, true, true, true, true, true, true},
        {"ensq", true, false, true, true, true, true, false},
        {"klc", true, false, false, true, false, false, false},
    };
    return rows;
}

inline nlohmann::json wiring_table_json() {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& w : wiring_table())
        rows.push_back({{"method", w.name},
                        {"multiple_q", w.multiple_q},
                        {"dropout_q", w.dropout_q},
                        {"target_v", w.target_v},
                        {"target_q", w.target_q},
                        {"learn_policy", w.learn_policy},
                        {"entropy_reg", w.entropy_reg},
                        {"behavior_reg", w.behavior_reg}});
    return {{"format", "moedm-wiring-v1"}, {"rows", rows}};
}

// V and Q critics with target copies. Overestimation control is either a
// dual Q pair (elementwise min) or a dropout ensemble of the single net
// (min over masks); both apply to bootstrapped targets only.
struct CriticSet {
    bool dual = false;
    int dropout_masks = 0;
    double dropout_rate = 0.5;
    bool use_target_v = true;
    double alpha = 0.1;
    double polyak = 0.005;

    nk::DenseNet q1, q2, v;
    nk::DenseNet q1_tar, q2_tar, v_tar;

    nk::NetGrads gq1, gq2, gv;
    nk::Adam opt_q, opt_v;

    // last dual target evaluation, for the min-contract instrumentation
    mutable double last_dual_q1 = 0.0;
    mutable double last_dual_q2 = 0.0;

    // Parameter views are rebuilt on demand so copies of a critic set stay
    // independent; the optimizer moments line up by position.
    std::vector<nk::ParamRef> q_params() {
        std::vector<nk::ParamRef> refs;
        nk::collect_params(q1, gq1, "q1", refs);
        if (dual) nk::collect_params(q2, gq2, "q2", refs);
        return refs;
    }

    std::vector<nk::ParamRef> v_params() {
        std::vector<nk::ParamRef> refs;
        nk::collect_params(v, gv, "v", refs);
        return refs;
    }

    static CriticSet make(int in_dim, int hidden, int depth, bool dual_pair, int dropout_masks,
                          nk::Rng& rng, double lr = 2e-3) {
        CriticSet c;
        c.dual = dual_pair;
        c.dropout_masks = dropout_masks;
        c.q1 = nk::make_mlp(in_dim, hidden, depth, 1, nk::Act::relu, rng);
        c.q2 = dual_pair ? nk::make_mlp(in_dim, hidden, depth, 1, nk::Act::relu, rng) : nk::DenseNet{};
        c.v = nk::make_mlp(in_dim, hidden, depth, 1, nk::Act::relu, rng);
        c.q1_tar = c.q1;
        c.q2_tar = c.q2;
        c.v_tar = c.v;
        c.gq1 = c.q1.make_grads();
        if (dual_pair) c.gq2 = c.q2.make_grads();
        c.gv = c.v.make_grads();
        c.opt_q.lr = lr;
        c.opt_v.lr = lr;
        return c;
    }

    // Linear critics over one-hot features, for the tabular fixtures.
    static CriticSet make_linear(int in_dim, bool dual_pair, nk::Rng& rng, double lr = 2e-3) {
        CriticSet c;
        c.dual = dual_pair;
        c.q1 = nk::make_net({in_dim, 1}, {nk::Act::identity}, rng);
        c.q2 = dual_pair ? nk::make_net({in_dim, 1}, {nk::Act::identity}, rng) : nk::DenseNet{};
        c.v = nk::make_net({in_dim, 1}, {nk::Act::identity}, rng);
        c.q1_tar = c.q1;
        c.q2_tar = c.q2;
        c.v_tar = c.v;
        c.gq1 = c.q1.make_grads();
        if (dual_pair) c.gq2 = c.q2.make_grads();
        c.gv = c.v.make_grads();
        c.opt_q.lr = lr;
        c.opt_v.lr = lr;
        return c;
    }

    double v_online(std::span<const double> z) const { return v.forward(z)[0]; }
    double v_target_eval(std::span<const double> z) const {
        return (use_target_v ? v_tar : v).forward(z)[0];
    }

    // Bootstrapped Q target with the configured overestimation control.
    double q_target_eval(std::span<const double> z, nk::Rng& rng) const {
        if (dual) {
            last_dual_q1 = q1_tar.forward(z)[0];
            last_dual_q2 = q2_tar.forward(z)[0];
            return std::min(last_dual_q1, last_dual_q2);
        }
        if (dropout_masks > 0) {
            double best = 1e300;
            for (int k = 0; k < dropout_masks; ++k)
                best = std::min(best, q1_tar.forward_dropout(z, dropout_rate, rng)[0]);
            return best;
        }
        return q1_tar.forward(z)[0];
    }

    // Deterministic candidate score; the dual pair stays conservative.
    double q_score(std::span<const double> z) const {
        double a = q1.forward(z)[0];
        if (!dual) return a;
        return std::min(a, q2.forward(z)[0]);
    }

    void polyak_step() {
        nk::polyak_update(q1_tar, q1, polyak);
        if (dual) nk::polyak_update(q2_tar, q2, polyak);
        nk::polyak_update(v_tar, v, polyak);
    }
};

// Shared-trunk critic with one output head per expert, target copies included.
struct MultiHeadCritic {
    int heads = 0;
    double polyak = 0.005;
    nk::DenseNet q, v; // output dim == heads
    nk::DenseNet q_tar, v_tar;
    nk::NetGrads gq, gv;
    nk::Adam opt_q, opt_v;

    std::vector<nk::ParamRef> q_params() {
        std::vector<nk::ParamRef> refs;
        nk::collect_params(q, gq, "mh_q", refs);
        return refs;
    }

    std::vector<nk::ParamRef> v_params() {
        std::vector<nk::ParamRef> refs;
        nk::collect_params(v, gv, "mh_v", refs);
        return refs;
    }

    static MultiHeadCritic make(int in_dim, int hidden, int depth, int heads, nk::Rng& rng,
                                double lr = 2e-3) {
        MultiHeadCritic c;
        c.heads = heads;
        c.q = depth == 0 ? nk::make_net({in_dim, heads}, {nk::Act::identity}, rng)
                         : nk::make_mlp(in_dim, hidden, depth, heads, nk::Act::relu, rng);
        c.v = depth == 0 ? nk::make_net({in_dim, heads}, {nk::Act::identity}, rng)
                         : nk::make_mlp(in_dim, hidden, depth, heads, nk::Act::relu, rng);
        c.q_tar = c.q;
        c.v_tar = c.v;
        c.gq = c.q.make_grads();
        c.gv = c.v.make_grads();
        c.opt_q.lr = lr;
        c.opt_v.lr = lr;
        return c;
    }

    void polyak_step() {
        nk::polyak_update(q_tar, q, polyak);
        nk::polyak_update(v_tar, v, polyak);
    }
};

// Value of committing to each expert, with a target copy; the greedy selector
// breaks ties toward the lowest index.
struct ExpertValueFn {
    int heads = 0;
    double polyak = 0.005;
    nk::DenseNet lambda, lambda_tar;
    nk::NetGrads glambda;
    nk::Adam opt;

    std::vector<nk::ParamRef> params() {
        std::vector<nk::ParamRef> refs;
        nk::collect_params(lambda, glambda, "lambda", refs);
        return refs;
    }

    static ExpertValueFn make(int in_dim, int hidden, int depth, int heads, nk::Rng& rng,
                              double lr = 2e-3) {
        ExpertValueFn e;
        e.heads = heads;
        e.lambda = depth == 0 ? nk::make_net({in_dim, heads}, {nk::Act::identity}, rng)
                              : nk::make_mlp(in_dim, hidden, depth, heads, nk::Act::relu, rng);
        e.lambda_tar = e.lambda;
        e.glambda = e.lambda.make_grads();
        e.opt.lr = lr;
        return e;
    }

    int best_expert(std::span<const double> z) const {
        Vec out = lambda.forward(z);
        int best = 0;
        for (int i = 1; i < heads; ++i)
            if (out[static_cast<std::size_t>(i)] > out[static_cast<std::size_t>(best)]) best = i;
        return best;
    }

    void polyak_step() { nk::polyak_update(lambda_tar, lambda, polyak); }
};

} // namespace moedm::rl
