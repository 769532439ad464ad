#pragma once

#include "moedm/rl/algorithms.hpp"

namespace moedm::eval {

using data::LatentTransition;
using nk::Vec;

// Learned one-step user model in latent space: a reward head and a next-latent
// head over the action latent. Reward predictions are clamped to [-1, 1] at
// scoring time only.
struct UserModel {
    nk::DenseNet reward_head;  // z_a -> 1
    nk::DenseNet next_head;    // z_a -> d
    nk::NetGrads gr, gn;
    nk::Adam opt;

    static UserModel make(int in_dim, int next_dim, int hidden, int depth, nk::Rng& rng,
                          double lr = 2e-3) {
        UserModel m;
        m.reward_head = hidden == 0 ? nk::make_net({in_dim, 1}, {nk::Act::identity}, rng)
                                    : nk::make_mlp(in_dim, hidden, depth, 1, nk::Act::relu, rng);
        m.next_head = hidden == 0 ? nk::make_net({in_dim, next_dim}, {nk::Act::identity}, rng)
                                  : nk::make_mlp(in_dim, hidden, depth, next_dim, nk::Act::relu, rng);
        m.gr = m.reward_head.make_grads();
        m.gn = m.next_head.make_grads();
        m.opt.lr = lr;
        return m;
    }

    std::vector<nk::ParamRef> params() {
        std::vector<nk::ParamRef> refs;
        nk::collect_params(reward_head, gr, "um_r", refs);
        nk::collect_params(next_head, gn, "um_z", refs);
        return refs;
    }

    double predict_reward(std::span<const double> z_a) const {
        return std::clamp(reward_head.forward(z_a)[0], -1.0, 1.0);
    }

    Vec predict_next(std::span<const double> z_a) const { return next_head.forward(z_a); }
};

struct UserModelLosses {
    double reward_mse = 0.0;
    double next_mse = 0.0;
};

// Joint regression of both heads onto the dataset.
inline UserModelLosses train_user_model_step(UserModel& um, rl::Batch batch) {
    MOEDM_REQUIRE(!batch.empty(), "train_user_model: empty batch");
    um.gr.zero();
    um.gn.zero();
    UserModelLosses losses;
    double scale = 1.0 / static_cast<double>(batch.size());
    for (const auto* tr : batch) {
        nk::DenseNet::Cache rc;
        double rhat = um.reward_head.forward(tr->z_a, rc)[0];
        double re = rhat - tr->r;
        losses.reward_mse += scale * re * re;
        um.reward_head.backward(rc, Vec{2.0 * re * scale}, um.gr);

        nk::DenseNet::Cache nc;
        Vec zhat = um.next_head.forward(tr->z_a, nc);
        Vec dz(zhat.size());
        for (std::size_t k = 0; k < zhat.size(); ++k) {
            double e = zhat[k] - tr->z_next[k];
            losses.next_mse += scale * e * e;
            dz[k] = 2.0 * e * scale;
        }
        um.next_head.backward(nc, std::move(dz), um.gn);
    }
    um.opt.step(um.params());
    return losses;
}

// One-step lookahead score: predicted reward plus the discounted value of the
// predicted next latent. The final turn never bootstraps.
inline double score_model_based(const UserModel& um, const std::function<double(const Vec&)>& value,
                                std::span<const double> z_a, double gamma, bool last_turn) {
    double score = um.predict_reward(z_a);
    if (!last_turn) score += gamma * value(um.predict_next(z_a));
    return score;
}

} // namespace moedm::eval
