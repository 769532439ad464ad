#pragma once

#include "moedm/moe/model.hpp"

namespace moedm::moe {

// Teacher-forced negative log-likelihood with its full reverse pass: gradients
// land in the decoder net, the shared embedding table (through the prefix
// means) and dz (the latent the utterance was decoded from).
inline double teacher_forced_nll_backward(const Decoder& dec, const nk::Mat& embed,
                                          std::span<const double> z, const Utterance& y, double scale,
                                          nk::NetGrads& dec_grads, nk::Mat& embed_grads, Vec& dz) {
    double nll = 0.0;
    std::vector<int> prefix{toy::kSos};
    for (int tok : y.ids) {
        Vec prefix_mean = pool_embedding(embed, prefix);
        nk::DenseNet::Cache cache;
        Vec logits = dec.net.forward(nk::concat(z, prefix_mean), cache);
        Vec lp = Decoder::masked_log_softmax(logits);
        nll -= lp[static_cast<std::size_t>(tok)];

        Vec dlogits(logits.size(), 0.0);
        for (std::size_t k = toy::kEos; k < logits.size(); ++k) dlogits[k] = std::exp(lp[k]) * scale;
        dlogits[static_cast<std::size_t>(tok)] -= scale;
        Vec din = dec.net.backward(cache, std::move(dlogits), dec_grads);

        for (std::size_t k = 0; k < z.size(); ++k) dz[k] += din[k];
        double w = 1.0 / static_cast<double>(prefix.size());
        for (int ptok : prefix) {
            auto grow = embed_grads.row(ptok);
            for (int c = 0; c < embed.cols; ++c)
                grow[static_cast<std::size_t>(c)] += w * din[z.size() + static_cast<std::size_t>(c)];
        }
        prefix.push_back(tok);
    }
    return nll;
}

struct PrimitiveLosses {
    double nll = 0.0;
    double kl = 0.0;

    double total(double kappa) const { return nll + kappa * kl; }
};

// Joint trainer for encoder, decoder, posterior and the primitive latent:
// reconstruction through a posterior reparameterization plus a weighted KL
// penalty tying the posterior to the primitive latent.
struct PrimitiveTrainer {
    MoeModel* model;
    double kappa_kl = 0.1;
    nk::Adam opt;

    Encoder::Grads enc_grads;
    nk::NetGrads dec_grads;
    nk::GaussianHead::Grads post_grads;
    nk::GaussianHead::Grads prim_grads;
    std::vector<nk::ParamRef> refs;

    explicit PrimitiveTrainer(MoeModel* m, double kappa = 0.1, double lr = 2e-3)
        : model(m), kappa_kl(kappa) {
        opt.lr = lr;
        enc_grads = m->encoder.make_grads();
        dec_grads = m->decoder.net.make_grads();
        post_grads = m->posterior.head.make_grads();
        prim_grads = m->experts[0].head.make_grads();
        refs.push_back({"embed", &m->encoder.embed.a, &enc_grads.embed.a});
        nk::collect_params(m->encoder.net, enc_grads.net, "encoder", refs);
        nk::collect_params(m->decoder.net, dec_grads, "decoder", refs);
        m->posterior.head.collect(post_grads, "posterior", refs);
        m->experts[0].head.collect(prim_grads, "primitive", refs);
    }

    void zero() {
        enc_grads.zero();
        dec_grads.zero();
        post_grads.zero();
        prim_grads.zero();
    }

    // Gradient accumulation only; callers that need the optimizer use step().
    PrimitiveLosses accumulate(std::span<const std::pair<ConversationHistory, Utterance>> batch,
                               nk::Rng& rng) {
        MOEDM_REQUIRE(!batch.empty(), "train_primitive_step: empty batch");
        PrimitiveLosses losses;
        double scale = 1.0 / static_cast<double>(batch.size());
        int d = model->latent_dim();
        for (const auto& [x, y] : batch) {
            Encoder::Cache ec;
            Vec z = model->encoder.encode(x, ec);
            Vec u = model->posterior.embed_target(y);

            nk::GaussianHead::Cache pc;
            nk::DiagGaussian rho = model->posterior.head.forward(nk::concat(z, u), pc);
            auto sample = nk::reparam_sample(rho, rng);

            nk::GaussianHead::Cache g0c;
            nk::DiagGaussian g0 = model->experts[0].head.forward(z, g0c);

            losses.kl += scale * gauss_kl(rho, g0);
            auto klg = nk::gauss_kl_grad(rho, g0);

            Vec dzp(static_cast<std::size_t>(d), 0.0);
            losses.nll += scale * teacher_forced_nll_backward(model->decoder, model->encoder.embed,
                                                              sample.z, y, scale, dec_grads,
                                                              enc_grads.embed, dzp);

            Vec dmu_rho(static_cast<std::size_t>(d)), dsigma_rho(static_cast<std::size_t>(d));
            for (int k = 0; k < d; ++k) {
                dmu_rho[static_cast<std::size_t>(k)] =
                    dzp[static_cast<std::size_t>(k)] + scale * kappa_kl * klg.dmu_p[static_cast<std::size_t>(k)];
                dsigma_rho[static_cast<std::size_t>(k)] =
                    dzp[static_cast<std::size_t>(k)] * sample.eps[static_cast<std::size_t>(k)] +
                    scale * kappa_kl * klg.dsigma_p[static_cast<std::size_t>(k)];
            }
            Vec dzu = model->posterior.head.backward(pc, dmu_rho, dsigma_rho, post_grads);

            Vec dmu_g0(static_cast<std::size_t>(d)), dsigma_g0(static_cast<std::size_t>(d));
            for (int k = 0; k < d; ++k) {
                dmu_g0[static_cast<std::size_t>(k)] = scale * kappa_kl * klg.dmu_q[static_cast<std::size_t>(k)];
                dsigma_g0[static_cast<std::size_t>(k)] = scale * kappa_kl * klg.dsigma_q[static_cast<std::size_t>(k)];
            }
            Vec dz = model->experts[0].head.backward(g0c, dmu_g0, dsigma_g0, prim_grads);
            for (int k = 0; k < d; ++k) dz[static_cast<std::size_t>(k)] += dzu[static_cast<std::size_t>(k)];

            model->encoder.backward(ec, dz, enc_grads);
        }
        if (!std::isfinite(losses.total(kappa_kl)))
            throw training_error("train_primitive_step: non-finite loss (nll=" + std::to_string(losses.nll) +
                                 " kl=" + std::to_string(losses.kl) + ")");
        return losses;
    }

    PrimitiveLosses step(std::span<const std::pair<ConversationHistory, Utterance>> batch, nk::Rng& rng) {
        zero();
        auto losses = accumulate(batch, rng);
        opt.step(refs);
        return losses;
    }
};

// Score-function trainer for one latent expert. The shared encoder/decoder
// stay frozen; only the expert head moves, in the ascent direction of the
// advantage-weighted log-density of its own samples.
struct ExpertTrainer {
    MoeModel* model;
    int index;
    const toy::Lexicon* lexicon;
    int samples_per_context = 4;
    double temperature = 0.7;
    double baseline_decay = 0.99;
    nk::Adam opt;
    nk::GaussianHead::Grads grads;
    std::vector<nk::ParamRef> refs;

    ExpertTrainer(MoeModel* m, int expert_index, const toy::Lexicon* lex, double lr = 2e-3)
        : model(m), index(expert_index), lexicon(lex) {
        MOEDM_REQUIRE(index >= 1 && index < m->num_experts(), "train_expert_step: expert index must be >= 1");
        opt.lr = lr;
        grads = m->experts[static_cast<std::size_t>(index)].head.make_grads();
        m->experts[static_cast<std::size_t>(index)].head.collect(grads, "expert" + std::to_string(index), refs);
    }

    double step(std::span<const ConversationHistory> batch, nk::Rng& rng) {
        MOEDM_REQUIRE(!batch.empty(), "train_expert_step: empty batch");
        auto& expert = model->experts[static_cast<std::size_t>(index)];
        grads.zero();
        double mean_label = 0.0;
        double scale = 1.0 / static_cast<double>(batch.size() * static_cast<std::size_t>(samples_per_context));
        for (const auto& x : batch) {
            Vec z = model->encode(x);
            for (int k = 0; k < samples_per_context; ++k) {
                nk::GaussianHead::Cache cache;
                nk::DiagGaussian gi = expert.head.forward(z, cache);
                auto sample = nk::reparam_sample(gi, rng);
                auto decoded = decode_sample(model->decoder, model->encoder.embed, sample.z, temperature, rng);
                double label = toy::intent_label(index, x, decoded.utt, *lexicon);
                mean_label += scale * label;

                double adv = label - expert.baseline;
                Vec dmu, dsigma;
                nk::gauss_logpdf_grad(gi, sample.z, dmu, dsigma);
                for (auto& v : dmu) v *= -adv * scale; // minimize the negated objective
                for (auto& v : dsigma) v *= -adv * scale;
                expert.head.backward(cache, dmu, dsigma, grads);
            }
        }
        expert.baseline = baseline_decay * expert.baseline + (1.0 - baseline_decay) * mean_label;
        opt.step(refs);
        return mean_label;
    }
};

struct Candidate {
    int expert = 0;
    Utterance utt;
    Vec latent; // the latent the utterance decoded from
    double logprob = 0.0;
};

// Every expert proposes k utterances for the current history.
inline std::vector<Candidate> gen_candidates(const MoeModel& model, const ConversationHistory& x,
                                             int k_per_expert, double temperature, nk::Rng& rng) {
    MOEDM_REQUIRE(k_per_expert >= 1, "gen_candidates: k_per_expert must be >= 1");
    Vec z = model.encode(x);
    std::vector<Candidate> out;
    out.reserve(static_cast<std::size_t>(model.num_experts() * k_per_expert));
    for (int i = 0; i < model.num_experts(); ++i) {
        nk::DiagGaussian gi = model.experts[static_cast<std::size_t>(i)](z);
        for (int k = 0; k < k_per_expert; ++k) {
            Candidate c;
            c.expert = i;
            auto sample = nk::reparam_sample(gi, rng);
            c.latent = sample.z;
            auto decoded = decode_sample(model.decoder, model.encoder.embed, c.latent, temperature, rng);
            c.utt = std::move(decoded.utt);
            c.logprob = decoded.logprob;
            out.push_back(std::move(c));
        }
    }
    return out;
}

// Perplexity of held-out pairs under the primitive: teacher forcing at the
// primitive's mean latent.
inline double primitive_perplexity(const MoeModel& model,
                                   std::span<const std::pair<ConversationHistory, Utterance>> data) {
    MOEDM_REQUIRE(!data.empty(), "perplexity: empty data");
    double nll = 0.0;
    long tokens = 0;
    for (const auto& [x, y] : data) {
        Vec z = model.encode(x);
        nk::DiagGaussian g0 = model.primitive()(z);
        nll -= decode_logprob(model.decoder, model.encoder.embed, g0.mu, y);
        tokens += static_cast<long>(y.ids.size());
    }
    return std::exp(nll / static_cast<double>(tokens));
}

} // namespace moedm::moe
