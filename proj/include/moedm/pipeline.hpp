#pragma once

#include <filesystem>

#include "moedm/config.hpp"
#include "moedm/data/offline.hpp"
#include "moedm/eval/evaluate.hpp"
#include "moedm/oracle/expectile.hpp"
#include "moedm/oracle/gradcheck.hpp"
#include "moedm/oracle/tabular.hpp"
#include "moedm/rl/dm_policy.hpp"

namespace moedm::pipeline {

using data::LatentTransition;
using moe::MoeModel;
using nk::Vec;
using toy::ConversationHistory;
using toy::Utterance;

// ---------------------------------------------------------------------------
// corpus

struct Conversation {
    std::vector<Utterance> turns; // query, agent, reply, agent, reply, ...
    std::vector<int> intents;     // one per agent turn
};

// Synthetic warm-start corpus: a scripted agent with random intents talks to
// the simulated user; the primitive later learns P(agent turn | history).
inline std::vector<Conversation> gen_corpus(const ExperimentConfig& cfg, const toy::Lexicon& lex) {
    std::vector<Conversation> out(static_cast<std::size_t>(cfg.corpus_conversations));
    parallel_for(out.size(), cfg.workers, [&](std::size_t i) {
        nk::Rng rng = nk::Rng::stream(cfg.seed ^ 0xc0041u, i);
        Conversation conv;
        auto [history, state] = env::reset(cfg.env, lex, rng);
        conv.turns.push_back(history.utts.front());
        while (!state.done(cfg.env)) {
            int intent = rng.uniform_int(toy::kNumIntents);
            double level = toy::intent_is_sentiment(toy::intent_from_index(intent))
                               ? toy::intent_target_valence(toy::intent_from_index(intent))
                               : rng.uniform(-0.3, 0.3);
            Utterance agent = toy::gen_template(intent, level, lex, rng);
            auto sr = env::step(cfg.env, state, agent, lex, rng);
            conv.turns.push_back(agent);
            conv.turns.push_back(sr.reply);
            conv.intents.push_back(intent);
            state = sr.state;
        }
        out[i] = std::move(conv);
    });
    return out;
}

inline void write_corpus(const std::string& path, const std::vector<Conversation>& corpus,
                         const std::string& config_hash, std::uint64_t seed) {
    std::ofstream out(path);
    MOEDM_REQUIRE(out.good(), "cannot open corpus file: " + path);
    nlohmann::json header{{"format", "moedm-corpus-v1"},
                          {"config_hash", config_hash},
                          {"seed", seed},
                          {"revision", kRevision}};
    out << header.dump() << "\n";
    for (const auto& conv : corpus) {
        nlohmann::json turns = nlohmann::json::array();
        for (const auto& u : conv.turns) turns.push_back(u.ids);
        out << nlohmann::json{{"turns", turns}, {"intents", conv.intents}}.dump() << "\n";
    }
}

struct CorpusFile {
    std::string config_hash;
    std::vector<Conversation> conversations;
};

inline CorpusFile read_corpus(const std::string& path) {
    std::ifstream in(path);
    MOEDM_REQUIRE(in.good(), "corpus file not found: " + path);
    std::string line;
    MOEDM_REQUIRE(static_cast<bool>(std::getline(in, line)), "corpus file is empty");
    auto header = nlohmann::json::parse(line);
    MOEDM_REQUIRE(header.at("format") == "moedm-corpus-v1", "corpus: unexpected format tag");
    CorpusFile out;
    out.config_hash = header.at("config_hash").get<std::string>();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        Conversation conv;
        for (const auto& t : j.at("turns")) {
            Utterance u;
            u.ids = t.get<std::vector<int>>();
            conv.turns.push_back(std::move(u));
        }
        conv.intents = j.at("intents").get<std::vector<int>>();
        out.conversations.push_back(std::move(conv));
    }
    return out;
}

// (history, next agent utterance) pairs, the primitive's training view.
inline std::vector<std::pair<ConversationHistory, Utterance>> corpus_pairs(
    const std::vector<Conversation>& corpus) {
    std::vector<std::pair<ConversationHistory, Utterance>> out;
    for (const auto& conv : corpus) {
        ConversationHistory h;
        h.push(conv.turns.front());
        h.turn = 0;
        for (std::size_t t = 1; t + 1 < conv.turns.size(); t += 2) {
            out.emplace_back(h, conv.turns[t]);
            h.push(conv.turns[t]);
            h.push(conv.turns[t + 1]);
            h.turn += 1;
        }
    }
    return out;
}

inline std::vector<ConversationHistory> corpus_contexts(const std::vector<Conversation>& corpus) {
    std::vector<ConversationHistory> out;
    for (auto& [x, y] : corpus_pairs(corpus)) out.push_back(x);
    return out;
}

// ---------------------------------------------------------------------------
// warm start

struct CurvePoint {
    int step = 0;
    double a = 0.0, b = 0.0;
};

inline std::vector<CurvePoint> train_primitive(MoeModel& model,
                                               const std::vector<std::pair<ConversationHistory, Utterance>>& pairs,
                                               const ExperimentConfig& cfg) {
    MOEDM_REQUIRE(!pairs.empty(), "train-primitive: empty corpus");
    moe::PrimitiveTrainer trainer(&model, cfg.kappa_kl, cfg.lr);
    nk::Rng rng = nk::Rng::stream(cfg.seed, 0x9417e);
    std::vector<CurvePoint> curve;
    for (int step = 0; step < cfg.primitive_steps; ++step) {
        std::vector<std::pair<ConversationHistory, Utterance>> batch;
        for (int k = 0; k < cfg.primitive_batch; ++k)
            batch.push_back(pairs[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(pairs.size())))]);
        auto losses = trainer.step(batch, rng);
        if (step % 50 == 0 || step + 1 == cfg.primitive_steps)
            curve.push_back({step, losses.nll, losses.kl});
    }
    return curve;
}

inline std::vector<CurvePoint> train_experts(MoeModel& model,
                                             const std::vector<ConversationHistory>& contexts,
                                             const ExperimentConfig& cfg, const toy::Lexicon& lex) {
    MOEDM_REQUIRE(!contexts.empty(), "train-experts: no contexts");
    std::vector<CurvePoint> curve;
    for (int i = 1; i < model.num_experts(); ++i) {
        moe::ExpertTrainer trainer(&model, i, &lex, cfg.lr);
        trainer.samples_per_context = cfg.expert_samples;
        trainer.temperature = cfg.expert_temperature;
        nk::Rng rng = nk::Rng::stream(cfg.seed, 0xe0u + static_cast<std::uint64_t>(i));
        double mean = 0.0;
        for (int step = 0; step < cfg.expert_steps; ++step) {
            std::vector<ConversationHistory> batch;
            for (int k = 0; k < cfg.expert_batch; ++k)
                batch.push_back(
                    contexts[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(contexts.size())))]);
            mean = trainer.step(batch, rng);
        }
        curve.push_back({i, mean, model.experts[static_cast<std::size_t>(i)].baseline});
    }
    return curve;
}

// ---------------------------------------------------------------------------
// offline RL methods

enum class Method { sac, ensq, klc, iql, saiql, ftle, moevrl, bc, bandit };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::sac: return "sac";
        case Method::ensq: return "ensq";
        case Method::klc: return "klc";
        case Method::iql: return "iql";
        case Method::saiql: return "saiql";
        case Method::ftle: return "ftle";
        case Method::moevrl: return "moevrl";
        case Method::bc: return "bc";
        case Method::bandit: return "bandit";
    }
    return "?";
}

inline Method method_from_name(const std::string& s) {
    for (Method m : {Method::sac, Method::ensq, Method::klc, Method::iql, Method::saiql, Method::ftle,
                     Method::moevrl, Method::bc, Method::bandit})
        if (s == method_name(m)) return m;
    throw contract_error("unknown RL method: " + s);
}

inline bool needs_augmented_data(Method m) { return m == Method::saiql; }
inline bool needs_attribution(Method m) { return m == Method::ftle || m == Method::moevrl; }

struct MethodArtifacts {
    Method method = Method::iql;
    std::optional<rl::CriticSet> critics;
    std::optional<rl::LatentPolicy> actor;
    std::optional<rl::MultiHeadCritic> mh;
    std::optional<rl::ExpertValueFn> evf;
    std::vector<CurvePoint> curve;
    long steps = 0;
};

inline std::vector<int> compute_attribution(const MoeModel& model,
                                            const std::vector<LatentTransition>& transitions,
                                            int sample_count, std::uint64_t seed, int workers) {
    std::vector<int> out(transitions.size(), 0);
    parallel_for(transitions.size(), workers, [&](std::size_t i) {
        nk::Rng rng = nk::Rng::stream(seed ^ 0xa771bu, i);
        out[i] = rl::assign_expert(model, transitions[i].z, transitions[i].action, sample_count, &rng);
    });
    return out;
}

inline MethodArtifacts train_rl(Method method, const MoeModel& model,
                                const std::vector<LatentTransition>& transitions,
                                const ExperimentConfig& cfg, std::uint64_t seed) {
    MOEDM_REQUIRE(!transitions.empty(), "train-rl: empty dataset");
    MethodArtifacts out;
    out.method = method;
    int d = model.latent_dim();
    nk::Rng init_rng = nk::Rng::stream(seed, 0xc217u);
    nk::Rng rng = nk::Rng::stream(seed, 0x57e9u);

    auto record = [&](int step, double a, double b) {
        if (step % 100 == 0 || step + 1 == cfg.rl_steps) out.curve.push_back({step, a, b});
    };
    // linear decay to a tenth of the base rate over the run
    auto lr_at = [&](int step) {
        if (!cfg.lr_decay) return cfg.lr;
        double frac = static_cast<double>(step) / std::max(1, cfg.rl_steps - 1);
        return cfg.lr * (1.0 - 0.9 * frac);
    };

    switch (method) {
        case Method::iql:
        case Method::saiql: {
            auto critics = rl::CriticSet::make(d, cfg.critic_hidden, cfg.critic_depth, false,
                                               cfg.dropout_masks, init_rng, cfg.lr);
            critics.dropout_rate = cfg.dropout_rate;
            critics.polyak = cfg.polyak;
            critics.alpha = cfg.alpha;
            for (int step = 0; step < cfg.rl_steps; ++step) {
                critics.opt_q.lr = critics.opt_v.lr = lr_at(step);
                auto batch = rl::sample_batch(transitions, cfg.rl_batch, rng);
                double lq = rl::q_step(critics, batch, cfg.gamma, rng);
                double lv = method == Method::iql ? rl::iql_v_step(critics, batch, cfg.tau, rng)
                                                  : rl::saiql_v_step(critics, batch, cfg.tau, rng);
                critics.polyak_step();
                record(step, lq, lv);
            }
            out.critics = std::move(critics);
            break;
        }
        case Method::sac:
        case Method::ensq:
        case Method::klc: {
            bool dual = method == Method::sac;
            int masks = dual ? 0 : cfg.dropout_masks;
            auto critics =
                rl::CriticSet::make(d, cfg.critic_hidden, cfg.critic_depth, dual, masks, init_rng, cfg.lr);
            critics.dropout_rate = cfg.dropout_rate;
            critics.polyak = cfg.polyak;
            critics.alpha = cfg.alpha;
            critics.use_target_v = method != Method::klc; // klc bootstraps from the online V
            auto actor = rl::LatentPolicy::from_head(model.primitive().head, cfg.lr);
            rl::SacContext ctx;
            ctx.model = &model;
            ctx.mode = method == Method::klc ? rl::EntropyMode::kl : rl::EntropyMode::shannon;
            ctx.teacher_forcing = cfg.teacher_forcing;
            for (int step = 0; step < cfg.rl_steps; ++step) {
                critics.opt_q.lr = critics.opt_v.lr = actor.opt.lr = lr_at(step);
                auto batch = rl::sample_batch(transitions, cfg.rl_batch, rng);
                double lq = rl::q_step(critics, batch, cfg.gamma, rng);
                rl::sac_v_step(critics, actor, model.primitive().head, ctx, batch, rng);
                double la = rl::sac_actor_step(critics, actor, model.primitive().head, ctx, batch, rng);
                critics.polyak_step();
                record(step, lq, la);
            }
            out.critics = std::move(critics);
            out.actor = std::move(actor);
            break;
        }
        case Method::bandit: {
            auto critics = rl::CriticSet::make(d, cfg.critic_hidden, cfg.critic_depth, false, 0, init_rng,
                                               cfg.lr);
            critics.polyak = cfg.polyak;
            for (int step = 0; step < cfg.rl_steps; ++step) {
                critics.opt_q.lr = lr_at(step);
                auto batch = rl::sample_batch(transitions, cfg.rl_batch, rng);
                double lq = rl::bandit_step(critics, batch, rng); // discount pinned to zero
                critics.polyak_step();
                record(step, lq, 0.0);
            }
            out.critics = std::move(critics);
            break;
        }
        case Method::bc: {
            auto actor = rl::LatentPolicy::from_head(model.primitive().head, cfg.lr);
            for (int step = 0; step < cfg.rl_steps; ++step) {
                actor.opt.lr = lr_at(step);
                auto batch = rl::sample_batch(transitions, cfg.rl_batch, rng);
                double l = rl::bc_step(actor, model, batch, rng);
                record(step, l, 0.0);
            }
            out.actor = std::move(actor);
            break;
        }
        case Method::ftle:
        case Method::moevrl: {
            auto attribution = compute_attribution(model, transitions, cfg.attribution_samples, seed,
                                                   cfg.workers);
            auto mh = rl::MultiHeadCritic::make(d, cfg.critic_hidden, cfg.critic_depth,
                                                model.num_experts(), init_rng, cfg.lr);
            mh.polyak = cfg.polyak;
            std::optional<rl::ExpertValueFn> evf;
            if (method == Method::moevrl) {
                evf = rl::ExpertValueFn::make(d, cfg.critic_hidden, cfg.critic_depth,
                                              model.num_experts(), init_rng, cfg.lr);
                evf->polyak = cfg.polyak;
            }
            for (int step = 0; step < cfg.rl_steps; ++step) {
                mh.opt_q.lr = mh.opt_v.lr = lr_at(step);
                if (evf) evf->opt.lr = lr_at(step);
                std::vector<const LatentTransition*> batch;
                std::vector<int> batch_attr;
                for (int k = 0; k < cfg.rl_batch; ++k) {
                    int idx = rng.uniform_int(static_cast<int>(transitions.size()));
                    batch.push_back(&transitions[static_cast<std::size_t>(idx)]);
                    batch_attr.push_back(attribution[static_cast<std::size_t>(idx)]);
                }
                auto fl = rl::ftle_step(mh, batch, batch_attr, cfg.gamma);
                mh.polyak_step();
                double second = fl.lv;
                if (method == Method::moevrl) {
                    second = rl::moevrl_step(*evf, batch, batch_attr, cfg.gamma);
                    evf->polyak_step();
                }
                record(step, fl.lq, second);
            }
            out.mh = std::move(mh);
            out.evf = std::move(evf);
            break;
        }
    }
    out.steps = cfg.rl_steps;
    return out;
}

// ---------------------------------------------------------------------------
// policies for evaluation

inline std::function<double(const Vec&)> state_value_fn(const MethodArtifacts& art) {
    switch (art.method) {
        case Method::ftle:
            return [mh = &*art.mh](const Vec& z) {
                Vec v = mh->v.forward(z);
                return *std::max_element(v.begin(), v.end());
            };
        case Method::moevrl:
            return [evf = &*art.evf](const Vec& z) {
                Vec v = evf->lambda.forward(z);
                return *std::max_element(v.begin(), v.end());
            };
        case Method::bc:
        case Method::bandit:
            throw contract_error(std::string(method_name(art.method)) +
                                 " has no state value function for model-based scoring");
        default:
            return [c = &*art.critics](const Vec& z) { return c->v_online(z); };
    }
}

inline rl::DMPolicy model_free_policy(const MoeModel& model, const MethodArtifacts& art, double beta,
                                      int attribution_samples = 0) {
    switch (art.method) {
        case Method::ftle: return rl::make_ftle_policy(&model, &*art.mh, beta, attribution_samples);
        case Method::moevrl: return rl::make_moevrl_policy(&model, &*art.evf, &*art.mh, beta);
        case Method::bc: return rl::make_bc_policy(&model, &*art.actor, beta);
        default: return rl::make_q_policy(&model, &*art.critics, beta);
    }
}

inline eval::UserModel train_user_model(const MoeModel& model,
                                        const std::vector<LatentTransition>& transitions,
                                        const ExperimentConfig& cfg, std::uint64_t seed) {
    nk::Rng init = nk::Rng::stream(seed, 0x05e7u);
    auto um = eval::UserModel::make(model.latent_dim(), model.latent_dim(), cfg.critic_hidden,
                                    cfg.critic_depth, init, cfg.lr);
    nk::Rng rng = nk::Rng::stream(seed, 0x05e8u);
    for (int step = 0; step < cfg.user_model_steps; ++step) {
        auto batch = rl::sample_batch(transitions, cfg.rl_batch, rng);
        eval::train_user_model_step(um, batch);
    }
    return um;
}

inline rl::DMPolicy model_based_policy(const MoeModel& model, const MethodArtifacts& art,
                                       const eval::UserModel& um, const ExperimentConfig& cfg) {
    return eval::make_model_based_policy(&model, &um, state_value_fn(art), cfg.gamma, cfg.env.horizon,
                                         cfg.beta);
}

// ---------------------------------------------------------------------------
// checkpoints

inline nlohmann::json adam_to_json(const nk::Adam& a) {
    nlohmann::json m = nlohmann::json::array(), v = nlohmann::json::array();
    for (const auto& x : a.m) m.push_back(pack_doubles(x));
    for (const auto& x : a.v) v.push_back(pack_doubles(x));
    return {{"lr", a.lr}, {"t", a.t}, {"m", m}, {"v", v}};
}

inline nk::Adam adam_from_json(const nlohmann::json& j) {
    nk::Adam a;
    a.lr = j.at("lr").get<double>();
    a.t = j.at("t").get<long long>();
    for (const auto& x : j.at("m")) a.m.push_back(unpack_doubles(x.get<std::string>()));
    for (const auto& x : j.at("v")) a.v.push_back(unpack_doubles(x.get<std::string>()));
    return a;
}

inline nlohmann::json artifacts_to_json(const MethodArtifacts& art, const ExperimentConfig& cfg,
                                        std::uint64_t seed) {
    nlohmann::json j{{"format", "moedm-rl-v1"},
                     {"method", method_name(art.method)},
                     {"config_hash", cfg.hash()},
                     {"revision", kRevision},
                     {"seed", seed},
                     {"steps", art.steps},
                     {"alpha", cfg.alpha},
                     {"beta", cfg.beta},
                     {"tau", cfg.tau},
                     {"wiring", rl::wiring_table_json()}};
    if (art.critics) {
        const auto& c = *art.critics;
        j["critics"] = {{"dual", c.dual},
                        {"dropout_masks", c.dropout_masks},
                        {"dropout_rate", c.dropout_rate},
                        {"use_target_v", c.use_target_v},
                        {"q1", nk::net_to_json(c.q1)},
                        {"q2", c.dual ? nk::net_to_json(c.q2) : nlohmann::json()},
                        {"v", nk::net_to_json(c.v)},
                        {"q1_tar", nk::net_to_json(c.q1_tar)},
                        {"q2_tar", c.dual ? nk::net_to_json(c.q2_tar) : nlohmann::json()},
                        {"v_tar", nk::net_to_json(c.v_tar)},
                        {"opt_q", adam_to_json(c.opt_q)},
                        {"opt_v", adam_to_json(c.opt_v)}};
    }
    if (art.actor) j["actor"] = {{"head", nk::head_to_json(art.actor->head)}, {"opt", adam_to_json(art.actor->opt)}};
    if (art.mh)
        j["multihead"] = {{"heads", art.mh->heads},
                          {"q", nk::net_to_json(art.mh->q)},
                          {"v", nk::net_to_json(art.mh->v)},
                          {"q_tar", nk::net_to_json(art.mh->q_tar)},
                          {"v_tar", nk::net_to_json(art.mh->v_tar)}};
    if (art.evf)
        j["expert_value"] = {{"heads", art.evf->heads},
                             {"lambda", nk::net_to_json(art.evf->lambda)},
                             {"lambda_tar", nk::net_to_json(art.evf->lambda_tar)}};
    return j;
}

inline MethodArtifacts artifacts_from_json(const nlohmann::json& j) {
    MOEDM_REQUIRE(j.at("format") == "moedm-rl-v1", "rl checkpoint: unexpected format tag");
    MethodArtifacts art;
    art.method = method_from_name(j.at("method").get<std::string>());
    art.steps = j.at("steps").get<long>();
    if (j.contains("critics")) {
        rl::CriticSet c;
        const auto& cj = j.at("critics");
        c.dual = cj.at("dual").get<bool>();
        c.dropout_masks = cj.at("dropout_masks").get<int>();
        c.dropout_rate = cj.at("dropout_rate").get<double>();
        c.use_target_v = cj.at("use_target_v").get<bool>();
        c.q1 = nk::net_from_json(cj.at("q1"));
        if (c.dual) c.q2 = nk::net_from_json(cj.at("q2"));
        c.v = nk::net_from_json(cj.at("v"));
        c.q1_tar = nk::net_from_json(cj.at("q1_tar"));
        if (c.dual) c.q2_tar = nk::net_from_json(cj.at("q2_tar"));
        c.v_tar = nk::net_from_json(cj.at("v_tar"));
        c.gq1 = c.q1.make_grads();
        if (c.dual) c.gq2 = c.q2.make_grads();
        c.gv = c.v.make_grads();
        c.opt_q = adam_from_json(cj.at("opt_q"));
        c.opt_v = adam_from_json(cj.at("opt_v"));
        art.critics = std::move(c);
    }
    if (j.contains("actor")) {
        rl::LatentPolicy p;
        p.head = nk::head_from_json(j.at("actor").at("head"));
        p.grads = p.head.make_grads();
        p.opt = adam_from_json(j.at("actor").at("opt"));
        art.actor = std::move(p);
    }
    if (j.contains("multihead")) {
        rl::MultiHeadCritic mh;
        const auto& mj = j.at("multihead");
        mh.heads = mj.at("heads").get<int>();
        mh.q = nk::net_from_json(mj.at("q"));
        mh.v = nk::net_from_json(mj.at("v"));
        mh.q_tar = nk::net_from_json(mj.at("q_tar"));
        mh.v_tar = nk::net_from_json(mj.at("v_tar"));
        mh.gq = mh.q.make_grads();
        mh.gv = mh.v.make_grads();
        art.mh = std::move(mh);
    }
    if (j.contains("expert_value")) {
        rl::ExpertValueFn e;
        const auto& ej = j.at("expert_value");
        e.heads = ej.at("heads").get<int>();
        e.lambda = nk::net_from_json(ej.at("lambda"));
        e.lambda_tar = nk::net_from_json(ej.at("lambda_tar"));
        e.glambda = e.lambda.make_grads();
        art.evf = std::move(e);
    }
    return art;
}

// ---------------------------------------------------------------------------
// run directory layout

struct RunPaths {
    std::filesystem::path root;

    std::filesystem::path models() const { return root / "models"; }
    std::filesystem::path data() const { return root / "data"; }
    std::filesystem::path reports() const { return root / "reports"; }
    std::filesystem::path fixtures() const { return root / "fixtures"; }

    std::filesystem::path corpus() const { return data() / "corpus.jsonl"; }
    std::filesystem::path model() const { return models() / "model.json"; }
    std::filesystem::path dataset(bool augmented) const {
        return data() / (augmented ? "dataset_aug.jsonl" : "dataset.jsonl");
    }
    std::filesystem::path rl(const std::string& algo) const { return models() / ("rl_" + algo + ".json"); }
    std::filesystem::path user_model() const { return models() / "user_model.json"; }
    std::filesystem::path eval_row(const std::string& algo, const std::string& mode) const {
        return reports() / ("eval_" + algo + "_" + mode + ".json");
    }
    std::filesystem::path report_csv() const { return reports() / "report.csv"; }
    std::filesystem::path report_json() const { return reports() / "report.json"; }
    std::filesystem::path curve(const std::string& stage) const { return data() / ("curve_" + stage + ".csv"); }
    std::filesystem::path log() const { return root / "log.txt"; }

    void ensure() const {
        std::filesystem::create_directories(models());
        std::filesystem::create_directories(data());
        std::filesystem::create_directories(reports());
        std::filesystem::create_directories(fixtures());
    }
};

inline void write_curve(const std::filesystem::path& path, const std::vector<CurvePoint>& curve,
                        const std::string& a_name, const std::string& b_name) {
    std::ofstream out(path);
    out << "step," << a_name << "," << b_name << "\n";
    for (const auto& p : curve)
        out << p.step << "," << eval::fmt_double(p.a) << "," << eval::fmt_double(p.b) << "\n";
}

// ---------------------------------------------------------------------------
// oracle verification suite (the `verify` subcommand)

struct VerifyResult {
    int failures = 0;
    std::vector<std::string> lines;

    void check(const std::string& name, bool ok, const std::string& detail = "") {
        lines.push_back(std::string(ok ? "PASS" : "FAIL") + "  " + name +
                        (detail.empty() ? "" : "  (" + detail + ")"));
        if (!ok) ++failures;
    }
};

inline VerifyResult run_verify(const ExperimentConfig& cfg) {
    VerifyResult res;
    const auto& lex = toy::load_lexicon(cfg.lexicon_path);

    // tabular oracle consistency
    env::EnvConfig exact = cfg.env;
    exact.noise = 0.0;
    exact.exact_bands = true;
    auto mdp = oracle::build_tabular(exact);
    auto vi = oracle::value_iteration(mdp);
    auto myopic = oracle::policy_eval(mdp, oracle::myopic_policy(mdp));
    double vstar = vi.v[static_cast<std::size_t>(mdp.s0)];
    double greedy = myopic[static_cast<std::size_t>(mdp.s0)];
    res.check("greedy gap >= 0.5", vstar - greedy >= 0.5,
              "V*=" + eval::fmt_double(vstar) + " greedy=" + eval::fmt_double(greedy));

    // simulate the oracle's greedy plan in the live environment
    {
        nk::Rng rng(3);
        auto [history, state] = env::reset(exact, lex, rng);
        int s = mdp.s0;
        std::vector<double> rewards;
        bool aligned = true;
        while (!state.done(exact)) {
            int a = vi.policy[static_cast<std::size_t>(s)];
            auto sr = env::step(exact, state, toy::intent_probe(toy::intent_from_index(a), lex), lex, rng);
            rewards.push_back(sr.reward);
            state = sr.state;
            s = mdp.P[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)][0].first;
            aligned = aligned && s == oracle::env_state_id(state.turn, env::trust_band(state.trust),
                                                           env::mood_band(state.mood));
        }
        double simulated = env::discounted_return(rewards, exact.gamma);
        res.check("tabular abstraction is exact", aligned && std::fabs(simulated - vstar) < 1e-9,
                  "simulated=" + eval::fmt_double(simulated));
    }

    // expectile routes agree
    {
        nk::Rng rng(5);
        bool ok = true;
        for (int trial = 0; trial < 20 && ok; ++trial) {
            std::vector<double> xs;
            for (int i = 0; i < 40; ++i) xs.push_back(rng.uniform(-2.0, 2.0));
            double tau = rng.uniform(0.1, 0.99);
            double root = oracle::expectile_bisect(xs, tau);
            double residual = 0.0;
            for (double x : xs) residual += std::fabs(tau - (x < root ? 1.0 : 0.0)) * (x - root);
            ok = std::fabs(residual) < 1e-7;
        }
        res.check("expectile bisection root", ok);
        res.check("expectile tau=0.5 is the mean", [&] {
            std::vector<double> xs{0.3, -1.0, 2.2, 0.1};
            double mean = (0.3 - 1.0 + 2.2 + 0.1) / 4.0;
            return std::fabs(oracle::expectile_bisect(xs, 0.5) - mean) < 1e-9;
        }());
    }

    // gradient spot checks on fresh nets
    {
        bool ok = true;
        for (int seedling = 0; seedling < 10 && ok; ++seedling) {
            nk::Rng rng(100 + static_cast<std::uint64_t>(seedling));
            auto net = nk::make_mlp(4, 8, 2, 2, nk::Act::tanh_, rng);
            Vec x{0.1, -0.3, 0.2, 0.5};
            Vec adj{0.7, -0.4};
            auto loss = [&] { return nk::dot(net.forward(x), adj); };
            nk::DenseNet::Cache cache;
            net.forward(x, cache);
            auto grads = net.make_grads();
            net.backward(cache, adj, grads);
            std::vector<nk::ParamRef> refs;
            nk::collect_params(net, grads, "net", refs);
            ok = oracle::grad_check(loss, refs).max_rel_err < 1e-4;
        }
        res.check("finite-difference gradient sweep", ok);
    }

    // histogram analytics
    {
        std::vector<long> uniform(static_cast<std::size_t>(cfg.model.num_experts), 10);
        std::vector<long> onehot(static_cast<std::size_t>(cfg.model.num_experts), 0);
        onehot[0] = 100;
        bool ok = eval::expert_histogram_kl(uniform).kl_uniform < 1e-12 &&
                  std::fabs(eval::expert_histogram_kl(onehot).kl_uniform -
                            std::log(static_cast<double>(cfg.model.num_experts))) < 1e-9;
        res.check("selection histogram analytics", ok);
    }
    return res;
}

} // namespace moedm::pipeline
