#pragma once

#include "moedm/numkit/gaussian.hpp"
#include "moedm/numkit/serialize.hpp"
#include "moedm/toylang/templates.hpp"

namespace moedm::moe {

using nk::Vec;
using toy::ConversationHistory;
using toy::Utterance;

// Mean embedding of an utterance's stored tokens (content plus <eos>).
inline Vec pool_embedding(const nk::Mat& table, const std::vector<int>& ids) {
    Vec out(static_cast<std::size_t>(table.cols), 0.0);
    if (ids.empty()) return out;
    for (int id : ids) nk::axpy(1.0 / static_cast<double>(ids.size()), table.row(id), out);
    return out;
}

// History encoder: per-slot mean token embeddings for the last kHistoryLen
// utterances (zeros for missing slots), plus a turn-phase scalar, through a
// dense net into the latent space.
struct Encoder {
    nk::Mat embed; // vocab x emb, shared with the decoder prefix
    nk::DenseNet net;

    int emb_dim() const { return embed.cols; }
    int latent_dim() const { return net.out_dim(); }

    Vec assemble_input(const ConversationHistory& x) const {
        Vec in(static_cast<std::size_t>(toy::kHistoryLen * emb_dim()) + 1, 0.0);
        int base = toy::kHistoryLen - static_cast<int>(x.utts.size());
        MOEDM_REQUIRE(base >= 0, "history longer than window");
        for (std::size_t s = 0; s < x.utts.size(); ++s) {
            Vec pooled = pool_embedding(embed, x.utts[s].ids);
            std::copy(pooled.begin(), pooled.end(),
                      in.begin() + static_cast<long>((base + static_cast<int>(s)) * emb_dim()));
        }
        in.back() = std::min(x.turn, 7) / 7.0;
        return in;
    }

    Vec encode(const ConversationHistory& x) const { return net.forward(assemble_input(x)); }

    struct Cache {
        nk::DenseNet::Cache net;
        std::vector<std::vector<int>> slot_ids; // aligned with window slots
    };

    Vec encode(const ConversationHistory& x, Cache& cache) const {
        cache.slot_ids.assign(toy::kHistoryLen, {});
        int base = toy::kHistoryLen - static_cast<int>(x.utts.size());
        for (std::size_t s = 0; s < x.utts.size(); ++s)
            cache.slot_ids[static_cast<std::size_t>(base) + s] = x.utts[s].ids;
        return net.forward(assemble_input(x), cache.net);
    }

    struct Grads {
        nk::Mat embed;
        nk::NetGrads net;

        void zero() {
            embed.zero();
            net.zero();
        }
    };

    void backward(const Cache& cache, const Vec& dz, Grads& grads) const {
        Vec din = net.backward(cache.net, dz, grads.net);
        for (int s = 0; s < toy::kHistoryLen; ++s) {
            const auto& ids = cache.slot_ids[static_cast<std::size_t>(s)];
            if (ids.empty()) continue;
            double w = 1.0 / static_cast<double>(ids.size());
            for (int id : ids) {
                auto grow = grads.embed.row(id);
                for (int c = 0; c < emb_dim(); ++c)
                    grow[static_cast<std::size_t>(c)] += w * din[static_cast<std::size_t>(s * emb_dim() + c)];
            }
        }
    }

    Grads make_grads() const { return {nk::Mat(embed.rows, embed.cols), net.make_grads()}; }
};

// Token-by-token decoder: (latent, mean prefix embedding) -> vocabulary
// logits. <pad> and <sos> are masked out of every next-token distribution.
struct Decoder {
    nk::DenseNet net;

    int vocab() const { return net.out_dim(); }

    struct StepResult {
        Vec logprobs; // log softmax over the full vocabulary (masked ids at -inf)
    };

    Vec step_logprobs(std::span<const double> z, const Vec& prefix_mean, const nk::Mat& embed,
                      nk::DenseNet::Cache* cache) const {
        (void)embed;
        Vec in = nk::concat(z, prefix_mean);
        Vec logits = cache ? net.forward(in, *cache) : net.forward(in);
        return masked_log_softmax(logits);
    }

    static Vec masked_log_softmax(const Vec& logits) {
        constexpr double neg_inf = -1e30;
        Vec out(logits.size(), neg_inf);
        double mx = -1e300;
        for (std::size_t k = toy::kEos; k < logits.size(); ++k) mx = std::max(mx, logits[k]);
        double sum = 0.0;
        for (std::size_t k = toy::kEos; k < logits.size(); ++k) sum += std::exp(logits[k] - mx);
        double lse = mx + std::log(sum);
        for (std::size_t k = toy::kEos; k < logits.size(); ++k) out[k] = logits[k] - lse;
        return out;
    }
};

struct DecodedSample {
    Utterance utt;
    Vec token_logprobs; // per emitted token, under the untempered model
    double logprob = 0.0;
};

// Autoregressive sampling; temperature below 1e-9 is greedy argmax. The
// recorded log-probabilities are always the model's own (temperature 1).
inline DecodedSample decode_sample(const Decoder& dec, const nk::Mat& embed, std::span<const double> z,
                                   double temperature, nk::Rng& rng, int max_len = toy::kMaxUtterance) {
    DecodedSample out;
    std::vector<int> prefix{toy::kSos};
    for (int n = 0; n < max_len; ++n) {
        Vec prefix_mean = pool_embedding(embed, prefix);
        Vec lp = dec.step_logprobs(z, prefix_mean, embed, nullptr);
        int tok;
        if (temperature < 1e-9) {
            tok = toy::kEos;
            for (std::size_t k = toy::kEos; k < lp.size(); ++k)
                if (lp[k] > lp[static_cast<std::size_t>(tok)]) tok = static_cast<int>(k);
        } else {
            double mx = -1e300;
            for (std::size_t k = toy::kEos; k < lp.size(); ++k) mx = std::max(mx, lp[k] / temperature);
            double sum = 0.0;
            std::vector<double> w(lp.size(), 0.0);
            for (std::size_t k = toy::kEos; k < lp.size(); ++k) {
                w[k] = std::exp(lp[k] / temperature - mx);
                sum += w[k];
            }
            double u = rng.uniform() * sum;
            tok = static_cast<int>(lp.size()) - 1;
            double acc = 0.0;
            for (std::size_t k = toy::kEos; k < lp.size(); ++k) {
                acc += w[k];
                if (u <= acc) {
                    tok = static_cast<int>(k);
                    break;
                }
            }
        }
        out.utt.ids.push_back(tok);
        out.token_logprobs.push_back(lp[static_cast<std::size_t>(tok)]);
        out.logprob += lp[static_cast<std::size_t>(tok)];
        if (tok == toy::kEos) break;
        prefix.push_back(tok);
    }
    return out;
}

// Teacher-forced log-likelihood of y under the decoder at latent z.
inline double decode_logprob(const Decoder& dec, const nk::Mat& embed, std::span<const double> z,
                             const Utterance& y) {
    double total = 0.0;
    std::vector<int> prefix{toy::kSos};
    for (int tok : y.ids) {
        Vec prefix_mean = pool_embedding(embed, prefix);
        Vec lp = dec.step_logprobs(z, prefix_mean, embed, nullptr);
        total += lp[static_cast<std::size_t>(tok)];
        prefix.push_back(tok);
    }
    return total;
}

// Posterior over latents given (encoded history, target utterance). The
// utterance enters through a frozen mean-embedding table seeded at build
// time and never trained.
struct Posterior {
    nk::Mat frozen_embed;
    nk::GaussianHead head;

    Vec embed_target(const Utterance& y) const { return pool_embedding(frozen_embed, y.ids); }

    nk::DiagGaussian operator()(std::span<const double> z, const Utterance& y) const {
        return head(nk::concat(z, embed_target(y)));
    }
};

struct LatentExpert {
    nk::GaussianHead head;
    double baseline = 0.0; // running mean label for variance reduction

    nk::DiagGaussian operator()(std::span<const double> z) const { return head(z); }
};

struct ModelConfig {
    int vocab = toy::kVocabSize;
    int emb_dim = 16;
    int latent_dim = 16;
    int hidden = 64;
    int depth = 2;
    int num_experts = toy::kNumIntents; // primitive included
};

struct MoeModel {
    ModelConfig cfg;
    Encoder encoder;
    Decoder decoder;
    Posterior posterior;
    std::vector<LatentExpert> experts; // [0] is the primitive latent
    std::vector<std::string> intent_tags;

    int latent_dim() const { return cfg.latent_dim; }
    int num_experts() const { return static_cast<int>(experts.size()); }

    Vec encode(const ConversationHistory& x) const { return encoder.encode(x); }

    const LatentExpert& primitive() const { return experts.front(); }
};

inline MoeModel make_model(const ModelConfig& cfg, nk::Rng& rng) {
    MoeModel m;
    m.cfg = cfg;
    m.encoder.embed = nk::Mat(cfg.vocab, cfg.emb_dim);
    for (auto& v : m.encoder.embed.a) v = 0.3 * rng.normal();
    m.encoder.net =
        nk::make_mlp(toy::kHistoryLen * cfg.emb_dim + 1, cfg.hidden, cfg.depth - 1, cfg.latent_dim, nk::Act::tanh_, rng);
    m.decoder.net =
        nk::make_mlp(cfg.latent_dim + cfg.emb_dim, cfg.hidden, cfg.depth - 1, cfg.vocab, nk::Act::tanh_, rng);
    m.posterior.frozen_embed = nk::Mat(cfg.vocab, cfg.emb_dim);
    {
        nk::Rng frozen(0x0ddba11); // fixed provenance for the frozen target encoder
        for (auto& v : m.posterior.frozen_embed.a) v = 0.5 * frozen.normal();
    }
    m.posterior.head = nk::make_gaussian_head(cfg.latent_dim + cfg.emb_dim, cfg.hidden, 1, cfg.latent_dim, rng);
    for (int i = 0; i < cfg.num_experts; ++i) {
        LatentExpert e;
        e.head = nk::make_gaussian_head(cfg.latent_dim, cfg.hidden, 1, cfg.latent_dim, rng);
        m.experts.push_back(std::move(e));
        m.intent_tags.push_back(i < toy::kNumIntents ? toy::intent_names()[static_cast<std::size_t>(i)]
                                                     : "expert" + std::to_string(i));
    }
    return m;
}

inline constexpr const char* kModelFormat = "moedm-model-v1";

inline nk::json model_to_json(const MoeModel& m) {
    nk::json experts = nk::json::array();
    for (const auto& e : m.experts)
        experts.push_back({{"head", nk::head_to_json(e.head)}, {"baseline", e.baseline}});
    return {{"format", kModelFormat},
            {"vocab", m.cfg.vocab},
            {"emb_dim", m.cfg.emb_dim},
            {"latent_dim", m.cfg.latent_dim},
            {"hidden", m.cfg.hidden},
            {"depth", m.cfg.depth},
            {"intents", m.intent_tags},
            {"embed", nk::mat_to_json(m.encoder.embed)},
            {"encoder", nk::net_to_json(m.encoder.net)},
            {"decoder", nk::net_to_json(m.decoder.net)},
            {"posterior_embed", nk::mat_to_json(m.posterior.frozen_embed)},
            {"posterior", nk::head_to_json(m.posterior.head)},
            {"experts", experts}};
}

inline MoeModel model_from_json(const nk::json& j) {
    MOEDM_REQUIRE(j.at("format") == kModelFormat, "model checkpoint: unexpected format tag");
    MoeModel m;
    m.cfg.vocab = j.at("vocab").get<int>();
    m.cfg.emb_dim = j.at("emb_dim").get<int>();
    m.cfg.latent_dim = j.at("latent_dim").get<int>();
    m.cfg.hidden = j.at("hidden").get<int>();
    m.cfg.depth = j.at("depth").get<int>();
    m.intent_tags = j.at("intents").get<std::vector<std::string>>();
    m.encoder.embed = nk::mat_from_json(j.at("embed"));
    m.encoder.net = nk::net_from_json(j.at("encoder"));
    m.decoder.net = nk::net_from_json(j.at("decoder"));
    m.posterior.frozen_embed = nk::mat_from_json(j.at("posterior_embed"));
    m.posterior.head = nk::head_from_json(j.at("posterior"));
    for (const auto& ej : j.at("experts")) {
        LatentExpert e;
        e.head = nk::head_from_json(ej.at("head"));
        e.baseline = ej.at("baseline").get<double>();
        m.experts.push_back(std::move(e));
    }
    m.cfg.num_experts = static_cast<int>(m.experts.size());
    return m;
}

inline std::uint64_t model_hash(const MoeModel& m) {
    return fnv1a(model_to_json(m).dump());
}

} // namespace moedm::moe
