#pragma once

#include "moedm/data/offline.hpp"
#include "moedm/rl/critics.hpp"

namespace moedm::rl {

using data::LatentTransition;

// Asymmetric squared loss whose minimizer is the tau-expectile.
inline double expectile_loss(double u, double tau) {
    MOEDM_REQUIRE(tau > 0.0 && tau < 1.0, "expectile_loss: tau outside (0,1)");
    double w = std::fabs(tau - (u < 0.0 ? 1.0 : 0.0));
    return w * u * u;
}

inline double expectile_loss_grad(double u, double tau) { // d/du
    double w = std::fabs(tau - (u < 0.0 ? 1.0 : 0.0));
    return 2.0 * w * u;
}

using Batch = std::span<const LatentTransition* const>;

inline std::vector<const LatentTransition*> sample_batch(const std::vector<LatentTransition>& data,
                                                         int size, nk::Rng& rng) {
    std::vector<const LatentTransition*> out;
    out.reserve(static_cast<std::size_t>(size));
    for (int i = 0; i < size; ++i)
        out.push_back(&data[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(data.size())))]);
    return out;
}

// Squared TD regression of Q(z_a) toward r + gamma * V_tar(z_next); terminal
// transitions regress to the reward alone. Both nets of a dual pair see the
// same targets.
inline double q_step(CriticSet& c, Batch batch, double gamma, nk::Rng& rng) {
    MOEDM_REQUIRE(!batch.empty(), "q_step: empty batch");
    (void)rng;
    c.gq1.zero();
    if (c.dual) c.gq2.zero();
    double loss = 0.0;
    double scale = 1.0 / static_cast<double>(batch.size());
    for (const auto* tr : batch) {
        double target = tr->r + (tr->terminal ? 0.0 : gamma * c.v_target_eval(tr->z_next));
        auto fit = [&](nk::DenseNet& net, nk::NetGrads& grads) {
            nk::DenseNet::Cache cache;
            double q = net.forward(tr->z_a, cache)[0];
            double e = q - target;
            loss += scale * e * e * (c.dual ? 0.5 : 1.0);
            net.backward(cache, Vec{2.0 * e * scale * (c.dual ? 0.5 : 1.0)}, grads);
        };
        fit(c.q1, c.gq1);
        if (c.dual) fit(c.q2, c.gq2);
    }
    c.opt_q.step(c.q_params());
    return loss;
}

// Expectile regression of V toward the target Q at the logged actions; no
// policy network is touched.
inline double iql_v_step(CriticSet& c, Batch batch, double tau, nk::Rng& rng) {
    MOEDM_REQUIRE(!batch.empty(), "iql_v_step: empty batch");
    c.gv.zero();
    double loss = 0.0;
    double scale = 1.0 / static_cast<double>(batch.size());
    for (const auto* tr : batch) {
        double qt = c.q_target_eval(tr->z_a, rng);
        nk::DenseNet::Cache cache;
        double v = c.v.forward(tr->z, cache)[0];
        double u = qt - v;
        loss += scale * expectile_loss(u, tau);
        c.v.backward(cache, Vec{-expectile_loss_grad(u, tau) * scale}, c.gv);
    }
    c.opt_v.step(c.v_params());
    return loss;
}

// Expectile regression over the joint state and frozen-candidate distribution.
// With candidates equal to the logged action this is exactly iql_v_step.
inline double saiql_v_step(CriticSet& c, Batch batch, double tau, nk::Rng& rng) {
    MOEDM_REQUIRE(!batch.empty(), "saiql_v_step: empty batch");
    c.gv.zero();
    double loss = 0.0;
    double scale = 1.0 / static_cast<double>(batch.size());
    for (const auto* tr : batch) {
        MOEDM_REQUIRE(!tr->candidates.empty(), "saiql_v_step: transition lacks candidate latents");
        nk::DenseNet::Cache cache;
        double v = c.v.forward(tr->z, cache)[0];
        double cscale = scale / static_cast<double>(tr->candidates.size());
        double dv = 0.0;
        for (const auto& zc : tr->candidates) {
            double u = c.q_target_eval(zc, rng) - v;
            loss += cscale * expectile_loss(u, tau);
            dv += -expectile_loss_grad(u, tau) * cscale;
        }
        c.v.backward(cache, Vec{dv}, c.gv);
    }
    c.opt_v.step(c.v_params());
    return loss;
}

enum class EntropyMode { shannon, kl };

// Latent policy for the actor-critic methods and behavior cloning: a gaussian
// head over the latent space, seeded from the primitive.
struct LatentPolicy {
    nk::GaussianHead head;
    nk::GaussianHead::Grads grads;
    nk::Adam opt;

    std::vector<nk::ParamRef> params() {
        std::vector<nk::ParamRef> refs;
        head.collect(grads, "policy", refs);
        return refs;
    }

    static LatentPolicy from_head(const nk::GaussianHead& init, double lr = 2e-3) {
        LatentPolicy p;
        p.head = init;
        p.grads = p.head.make_grads();
        p.opt.lr = lr;
        return p;
    }
};

struct SacContext {
    const moe::MoeModel* model = nullptr; // decode/encode path for non-teacher-forced targets
    EntropyMode mode = EntropyMode::shannon;
    bool teacher_forcing = true;
    double decode_temperature = 1.0;
};

inline double entropy_regularizer(const nk::DiagGaussian& g, const nk::DiagGaussian& g0,
                                  std::span<const double> z_sample, EntropyMode mode) {
    double reg = gauss_logpdf(g, z_sample);
    if (mode == EntropyMode::kl) reg -= gauss_logpdf(g0, z_sample);
    return reg;
}

// V regresses toward Q_tar at the policy's action minus the entropy term. In
// teacher-forcing mode the action latent is the logged one; otherwise the
// sampled latent is decoded and re-encoded behind the critic.
inline double sac_v_step(CriticSet& c, const LatentPolicy& policy, const nk::GaussianHead& g0,
                         const SacContext& ctx, Batch batch, nk::Rng& rng) {
    MOEDM_REQUIRE(!batch.empty(), "sac_v_step: empty batch");
    c.gv.zero();
    double loss = 0.0;
    double scale = 1.0 / static_cast<double>(batch.size());
    for (const auto* tr : batch) {
        nk::DiagGaussian g = policy.head(tr->z);
        auto sample = nk::reparam_sample(g, rng);
        double reg = entropy_regularizer(g, g0(tr->z), sample.z, ctx.mode);
        double qt;
        if (ctx.teacher_forcing) {
            qt = c.q_target_eval(tr->z_a, rng);
        } else {
            MOEDM_REQUIRE(ctx.model != nullptr, "sac_v_step: decode mode needs the language model");
            auto decoded = moe::decode_sample(ctx.model->decoder, ctx.model->encoder.embed, sample.z,
                                              ctx.decode_temperature, rng);
            qt = c.q_target_eval(ctx.model->encode(tr->context.with(decoded.utt)), rng);
        }
        double target = qt - c.alpha * reg;
        nk::DenseNet::Cache cache;
        double v = c.v.forward(tr->z, cache)[0];
        double e = v - target;
        loss += scale * e * e;
        c.v.backward(cache, Vec{2.0 * e * scale}, c.gv);
    }
    c.opt_v.step(c.v_params());
    return loss;
}

// Pathwise actor update: ascend Q(z') - alpha * reg(z') through the
// reparameterized latent action. The critic scores the latent directly, which
// is the differentiable surrogate for decoding it into an utterance.
inline double sac_actor_step(CriticSet& c, LatentPolicy& policy, const nk::GaussianHead& g0,
                             const SacContext& ctx, Batch batch, nk::Rng& rng) {
    MOEDM_REQUIRE(!batch.empty(), "sac_actor_step: empty batch");
    policy.grads.zero();
    nk::NetGrads scratch = c.q1.make_grads(); // input gradients only, never applied
    double loss = 0.0;
    double scale = 1.0 / static_cast<double>(batch.size());
    int d = static_cast<int>(batch.front()->z.size());
    for (const auto* tr : batch) {
        nk::GaussianHead::Cache cache;
        nk::DiagGaussian g = policy.head.forward(tr->z, cache);
        auto sample = nk::reparam_sample(g, rng);
        nk::DiagGaussian g0_here = g0(tr->z);

        nk::DenseNet::Cache qcache;
        double qv = c.q1.forward(sample.z, qcache)[0];
        double reg = entropy_regularizer(g, g0_here, sample.z, ctx.mode);
        loss += scale * -(qv - c.alpha * reg);

        // dL/dz' = -dQ/dz' + alpha * d reg/dz'
        Vec dz = c.q1.backward(qcache, Vec{-scale}, scratch);
        Vec dmu_g, dsigma_g, dmu_unused, dsigma_g0;
        nk::gauss_logpdf_grad(g, sample.z, dmu_g, dsigma_g);
        Vec dx_g(static_cast<std::size_t>(d));
        for (int k = 0; k < d; ++k) dx_g[static_cast<std::size_t>(k)] = -dmu_g[static_cast<std::size_t>(k)];
        if (ctx.mode == EntropyMode::kl) {
            nk::gauss_logpdf_grad(g0_here, sample.z, dmu_unused, dsigma_g0);
            for (int k = 0; k < d; ++k)
                dx_g[static_cast<std::size_t>(k)] += dmu_unused[static_cast<std::size_t>(k)]; // -(-dmu) of g0
        }
        for (int k = 0; k < d; ++k)
            dz[static_cast<std::size_t>(k)] += scale * c.alpha * dx_g[static_cast<std::size_t>(k)];

        // explicit dependence of the regularizer on (mu, sigma), plus the
        // pathwise route through z' = mu + sigma * eps
        Vec dmu(static_cast<std::size_t>(d)), dsigma(static_cast<std::size_t>(d));
        for (int k = 0; k < d; ++k) {
            auto ks = static_cast<std::size_t>(k);
            dmu[ks] = dz[ks] + scale * c.alpha * dmu_g[ks];
            dsigma[ks] = dz[ks] * sample.eps[ks] + scale * c.alpha * dsigma_g[ks];
            if (ctx.mode == EntropyMode::kl) {
                // the reference density has no parameters here; only its
                // sample-argument gradient entered above
            }
        }
        policy.head.backward(cache, dmu, dsigma, policy.grads);
    }
    policy.opt.step(policy.params());
    return loss;
}

// Best-log-likelihood attribution of an utterance to an expert. Deterministic
// mode probes each expert at its mean latent; sampled mode averages K probes.
inline int assign_expert(const moe::MoeModel& model, std::span<const double> z,
                         const toy::Utterance& y, int sample_count = 0, nk::Rng* rng = nullptr) {
    int best = 0;
    double best_lp = -1e300;
    for (int i = 0; i < model.num_experts(); ++i) {
        nk::DiagGaussian g = model.experts[static_cast<std::size_t>(i)](z);
        double lp;
        if (sample_count <= 0) {
            lp = moe::decode_logprob(model.decoder, model.encoder.embed, g.mu, y);
        } else {
            MOEDM_REQUIRE(rng != nullptr, "assign_expert: sampled mode needs an rng");
            lp = 0.0;
            for (int k = 0; k < sample_count; ++k)
                lp += moe::decode_logprob(model.decoder, model.encoder.embed,
                                          nk::reparam_sample(g, *rng).z, y) /
                      sample_count;
        }
        if (lp > best_lp + 1e-12) {
            best_lp = lp;
            best = i;
        }
    }
    return best;
}

struct FtleLosses {
    double lq = 0.0;
    double lv = 0.0;
};

// Multi-headed critic update: every Q head fits its own bootstrapped target on
// every transition; the V head of the attributed expert alone regresses toward
// that head's target Q at the logged action.
inline FtleLosses ftle_step(MultiHeadCritic& mh, Batch batch, std::span<const int> attribution,
                            double gamma) {
    MOEDM_REQUIRE(!batch.empty(), "ftle_step: empty batch");
    MOEDM_REQUIRE(attribution.size() == batch.size(), "ftle_step: attribution size mismatch");
    mh.gq.zero();
    mh.gv.zero();
    FtleLosses losses;
    double scale = 1.0 / static_cast<double>(batch.size());
    for (std::size_t bi = 0; bi < batch.size(); ++bi) {
        const auto* tr = batch[bi];
        Vec v_tar_next = tr->terminal ? Vec(static_cast<std::size_t>(mh.heads), 0.0)
                                      : mh.v_tar.forward(tr->z_next);
        nk::DenseNet::Cache qcache;
        Vec q = mh.q.forward(tr->z_a, qcache);
        Vec dq(static_cast<std::size_t>(mh.heads), 0.0);
        for (int i = 0; i < mh.heads; ++i) {
            auto is = static_cast<std::size_t>(i);
            double target = tr->r + (tr->terminal ? 0.0 : gamma * v_tar_next[is]);
            double e = q[is] - target;
            losses.lq += scale * e * e;
            dq[is] = 2.0 * e * scale;
        }
        mh.q.backward(qcache, std::move(dq), mh.gq);

        int a = attribution[bi];
        MOEDM_REQUIRE(a >= 0 && a < mh.heads, "ftle_step: attribution index out of range");
        double q_tar_a = mh.q_tar.forward(tr->z_a)[static_cast<std::size_t>(a)];
        nk::DenseNet::Cache vcache;
        Vec vs = mh.v.forward(tr->z, vcache);
        double u = q_tar_a - vs[static_cast<std::size_t>(a)];
        losses.lv += scale * u * u;
        Vec dv(static_cast<std::size_t>(mh.heads), 0.0);
        dv[static_cast<std::size_t>(a)] = -2.0 * u * scale;
        mh.v.backward(vcache, std::move(dv), mh.gv);
    }
    mh.opt_q.step(mh.q_params());
    mh.opt_v.step(mh.v_params());
    return losses;
}

// One-step value iteration over expert indices: the attributed head regresses
// toward r + gamma * max_i target(z_next, i).
inline double moevrl_step(ExpertValueFn& evf, Batch batch, std::span<const int> attribution,
                          double gamma) {
    MOEDM_REQUIRE(!batch.empty(), "moevrl_step: empty batch");
    MOEDM_REQUIRE(attribution.size() == batch.size(), "moevrl_step: attribution size mismatch");
    evf.glambda.zero();
    double loss = 0.0;
    double scale = 1.0 / static_cast<double>(batch.size());
    for (std::size_t bi = 0; bi < batch.size(); ++bi) {
        const auto* tr = batch[bi];
        double bootstrap = 0.0;
        if (!tr->terminal) {
            Vec next = evf.lambda_tar.forward(tr->z_next);
            bootstrap = *std::max_element(next.begin(), next.end());
        }
        double target = tr->r + gamma * bootstrap;
        int a = attribution[bi];
        MOEDM_REQUIRE(a >= 0 && a < evf.heads, "moevrl_step: attribution index out of range");
        nk::DenseNet::Cache cache;
        Vec out = evf.lambda.forward(tr->z, cache);
        double u = out[static_cast<std::size_t>(a)] - target;
        loss += scale * u * u;
        Vec dout(static_cast<std::size_t>(evf.heads), 0.0);
        dout[static_cast<std::size_t>(a)] = 2.0 * u * scale;
        evf.lambda.backward(cache, std::move(dout), evf.glambda);
    }
    evf.opt.step(evf.params());
    return loss;
}

// Latent behavior cloning: raise the teacher-forced likelihood of the logged
// utterance under latents drawn from the cloned policy. Decoder and encoder
// stay frozen.
inline double bc_step(LatentPolicy& policy, const moe::MoeModel& model, Batch batch, nk::Rng& rng) {
    MOEDM_REQUIRE(!batch.empty(), "bc_step: empty batch");
    policy.grads.zero();
    nk::NetGrads dec_scratch = model.decoder.net.make_grads();
    nk::Mat embed_scratch(model.encoder.embed.rows, model.encoder.embed.cols);
    double loss = 0.0;
    double scale = 1.0 / static_cast<double>(batch.size());
    int d = static_cast<int>(model.latent_dim());
    for (const auto* tr : batch) {
        nk::GaussianHead::Cache cache;
        nk::DiagGaussian g = policy.head.forward(tr->z, cache);
        auto sample = nk::reparam_sample(g, rng);
        Vec dz(static_cast<std::size_t>(d), 0.0);
        loss += scale * moe::teacher_forced_nll_backward(model.decoder, model.encoder.embed, sample.z,
                                                         tr->action, scale, dec_scratch, embed_scratch, dz);
        Vec dsigma(static_cast<std::size_t>(d));
        for (int k = 0; k < d; ++k)
            dsigma[static_cast<std::size_t>(k)] =
                dz[static_cast<std::size_t>(k)] * sample.eps[static_cast<std::size_t>(k)];
        policy.head.backward(cache, dz, dsigma, policy.grads);
    }
    policy.opt.step(policy.params());
    return loss;
}

// bandit_step is q_step with the discount forced to zero.
inline double bandit_step(CriticSet& c, Batch batch, nk::Rng& rng) { return q_step(c, batch, 0.0, rng); }

} // namespace moedm::rl
