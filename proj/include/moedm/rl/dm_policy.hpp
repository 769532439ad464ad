#pragma once

#include "moedm/rl/algorithms.hpp"

namespace moedm::rl {

using moe::Candidate;

enum class ScoringMode { model_free_q, model_based, ftle, moevrl, bc_likelihood };

// Softmax-over-scores selector among candidate utterances. The scorer closure
// is what distinguishes the methods; everything else is shared.
struct DMPolicy {
    ScoringMode mode = ScoringMode::model_free_q;
    double beta = 20.0;
    std::function<double(const toy::ConversationHistory& x, const Vec& z, const Candidate&)> scorer;
};

struct Selection {
    int index = 0;
    std::vector<double> probs;
    std::vector<double> scores;
};

inline std::vector<double> softmax(std::span<const double> scores, double beta) {
    double mx = -1e300;
    for (double s : scores) mx = std::max(mx, beta * s);
    std::vector<double> p(scores.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        p[i] = std::exp(beta * scores[i] - mx);
        sum += p[i];
    }
    for (auto& v : p) v /= sum;
    return p;
}

inline Selection select_action(const DMPolicy& policy, const toy::ConversationHistory& x, const Vec& z,
                               std::span<const Candidate> candidates, nk::Rng& rng) {
    MOEDM_REQUIRE(!candidates.empty(), "select_action: no candidates");
    MOEDM_REQUIRE(policy.beta > 0.0, "select_action: beta must be positive");
    Selection sel;
    sel.scores.reserve(candidates.size());
    for (const auto& c : candidates) sel.scores.push_back(policy.scorer(x, z, c));
    sel.probs = softmax(sel.scores, policy.beta);
    double u = rng.uniform();
    double acc = 0.0;
    sel.index = static_cast<int>(candidates.size()) - 1;
    for (std::size_t i = 0; i < sel.probs.size(); ++i) {
        acc += sel.probs[i];
        if (u <= acc) {
            sel.index = static_cast<int>(i);
            break;
        }
    }
    return sel;
}

// Scorer factories. All of them encode (history + candidate) through the
// frozen encoder, exactly the way the datasets were built.

inline DMPolicy make_q_policy(const moe::MoeModel* model, const CriticSet* critics, double beta) {
    DMPolicy p;
    p.mode = ScoringMode::model_free_q;
    p.beta = beta;
    p.scorer = [model, critics](const toy::ConversationHistory& x, const Vec&, const Candidate& c) {
        return critics->q_score(model->encode(x.with(c.utt)));
    };
    return p;
}

// Follow the leading expert: the V heads elect a leader per state, the
// leader's Q head ranks the candidates attributed to it. Everyone else's
// proposals are shut out unless the leader offered none.
inline DMPolicy make_ftle_policy(const moe::MoeModel* model, const MultiHeadCritic* mh, double beta,
                                 int attribution_samples = 0) {
    DMPolicy p;
    p.mode = ScoringMode::ftle;
    p.beta = beta;
    p.scorer = [model, mh, attribution_samples](const toy::ConversationHistory& x, const Vec& z,
                                                const Candidate& c) {
        Vec v = mh->v.forward(z);
        int leader = static_cast<int>(std::distance(v.begin(), std::max_element(v.begin(), v.end())));
        int head = assign_expert(*model, z, c.utt, attribution_samples);
        if (head != leader) return -1e9;
        return mh->q.forward(model->encode(x.with(c.utt)))[static_cast<std::size_t>(head)];
    };
    return p;
}

// Expert-gated: the value function picks the expert, its critic head ranks
// that expert's own candidates; everyone else's proposals are shut out.
inline DMPolicy make_moevrl_policy(const moe::MoeModel* model, const ExpertValueFn* evf,
                                   const MultiHeadCritic* mh, double beta) {
    DMPolicy p;
    p.mode = ScoringMode::moevrl;
    p.beta = beta;
    p.scorer = [model, evf, mh](const toy::ConversationHistory& x, const Vec& z, const Candidate& c) {
        int best = evf->best_expert(z);
        if (c.expert != best) return -1e9;
        return mh->q.forward(model->encode(x.with(c.utt)))[static_cast<std::size_t>(best)];
    };
    return p;
}

// Behavior cloning scores a candidate by its teacher-forced likelihood at the
// cloned policy's mean latent.
inline DMPolicy make_bc_policy(const moe::MoeModel* model, const LatentPolicy* policy, double beta) {
    DMPolicy p;
    p.mode = ScoringMode::bc_likelihood;
    p.beta = beta;
    p.scorer = [model, policy](const toy::ConversationHistory&, const Vec& z, const Candidate& c) {
        nk::DiagGaussian g = policy->head(z);
        return moe::decode_logprob(model->decoder, model->encoder.embed, g.mu, c.utt);
    };
    return p;
}

} // namespace moedm::rl
