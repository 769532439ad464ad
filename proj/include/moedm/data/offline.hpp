#pragma once

#include <fstream>

#include "moedm/env/user_sim.hpp"
#include "moedm/moe/train.hpp"

namespace moedm::data {

using moe::MoeModel;
using nk::Vec;
using toy::ConversationHistory;
using toy::Utterance;

struct RawTurn {
    ConversationHistory context; // state before the agent spoke
    Utterance action;
    Utterance reply;
    double reward = 0.0;
    int behavior_expert = 0;
};

struct RawEpisode {
    std::vector<RawTurn> turns;
    std::vector<double> mixture; // behavior policy weights
    std::uint64_t seed = 0;
};

struct LatentTransition {
    Vec z;      // state
    Vec z_a;    // state with the action appended
    double r = 0.0;
    Vec z_next;
    bool terminal = false;
    Utterance action;            // kept for relabeling
    ConversationHistory context; // kept for candidate re-encoding
    int behavior_expert = 0;
    int episode = 0;
    int turn = 0;
    std::vector<Vec> candidates; // filled by augment(): one latent per expert
};

struct BehaviorSpec {
    std::vector<double> mixture; // empty means uniform over all experts
    double temperature = 1.0;
    // chance of repeating the previous turn's expert instead of redrawing;
    // keeps multi-turn single-intent segments in the data without changing
    // the per-turn marginal
    double persistence = 0.0;
};

// Roll the expert mixture against the user simulator. Episodes are
// independent streams of (seed, episode index), so collection parallelizes
// without changing its output.
inline std::vector<RawEpisode> collect(const MoeModel& model, const BehaviorSpec& spec, int n_episodes,
                                       const env::EnvConfig& cfg, const toy::Lexicon& lex,
                                       std::uint64_t seed, int workers = 1) {
    std::vector<double> mixture = spec.mixture;
    if (mixture.empty()) mixture.assign(static_cast<std::size_t>(model.num_experts()), 1.0);
    MOEDM_REQUIRE(static_cast<int>(mixture.size()) == model.num_experts(),
                  "collect: mixture size must match expert count");
    double total = 0.0;
    for (double w : mixture) total += w;
    MOEDM_REQUIRE(total > 0.0, "collect: mixture weights sum to zero");

    std::vector<RawEpisode> episodes(static_cast<std::size_t>(n_episodes));
    parallel_for(static_cast<std::size_t>(n_episodes), workers, [&](std::size_t ep) {
        nk::Rng rng = nk::Rng::stream(seed, ep);
        RawEpisode out;
        out.mixture = mixture;
        out.seed = seed;
        auto [history, state] = env::reset(cfg, lex, rng);
        int prev_expert = -1;
        while (!state.done(cfg)) {
            RawTurn turn;
            turn.context = history;
            int expert;
            if (prev_expert >= 0 && rng.uniform() < spec.persistence) {
                expert = prev_expert;
            } else {
                double u = rng.uniform() * total;
                expert = 0;
                double acc = 0.0;
                for (std::size_t i = 0; i < mixture.size(); ++i) {
                    acc += mixture[i];
                    if (u <= acc) {
                        expert = static_cast<int>(i);
                        break;
                    }
                }
            }
            prev_expert = expert;
            turn.behavior_expert = expert;
            Vec z = model.encode(history);
            auto latent = nk::reparam_sample(model.experts[static_cast<std::size_t>(expert)](z), rng);
            turn.action = moe::decode_sample(model.decoder, model.encoder.embed, latent.z,
                                             spec.temperature, rng)
                              .utt;
            auto sr = env::step(cfg, state, turn.action, lex, rng);
            turn.reply = sr.reply;
            turn.reward = sr.reward;
            history.push(turn.action);
            history.push(sr.reply);
            history.turn = sr.state.turn;
            state = sr.state;
            out.turns.push_back(std::move(turn));
        }
        episodes[ep] = std::move(out);
    });
    return episodes;
}

// One latent tuple per agent turn, all through the frozen encoder.
inline std::vector<LatentTransition> encode_dataset(const std::vector<RawEpisode>& episodes,
                                                    const MoeModel& model, const toy::Lexicon& lex,
                                                    int horizon) {
    std::vector<LatentTransition> out;
    for (std::size_t ep = 0; ep < episodes.size(); ++ep) {
        for (std::size_t t = 0; t < episodes[ep].turns.size(); ++t) {
            const auto& turn = episodes[ep].turns[t];
            LatentTransition tr;
            tr.context = turn.context;
            tr.action = turn.action;
            tr.behavior_expert = turn.behavior_expert;
            tr.episode = static_cast<int>(ep);
            tr.turn = static_cast<int>(t);
            tr.z = model.encode(turn.context);
            tr.z_a = model.encode(turn.context.with(turn.action));
            auto next = turn.context.with(turn.action).with(turn.reply);
            next.turn = turn.context.turn + 1;
            tr.z_next = model.encode(next);
            tr.r = toy::sent_score(turn.reply, lex);
            MOEDM_REQUIRE(std::fabs(tr.r - turn.reward) < 1e-9, "stored reward drifted from the reply");
            tr.terminal = static_cast<int>(t) + 1 >= horizon;
            out.push_back(std::move(tr));
        }
    }
    return out;
}

// Adds one frozen candidate latent per expert: sample a latent, decode an
// utterance, encode (context + utterance).
inline void augment(std::vector<LatentTransition>& transitions, const MoeModel& model,
                    double temperature, std::uint64_t seed, int workers = 1) {
    parallel_for(transitions.size(), workers, [&](std::size_t i) {
        nk::Rng rng = nk::Rng::stream(seed ^ 0xa06u, i);
        auto& tr = transitions[i];
        tr.candidates.assign(static_cast<std::size_t>(model.num_experts()), {});
        Vec z = model.encode(tr.context);
        for (int e = 0; e < model.num_experts(); ++e) {
            auto latent = nk::reparam_sample(model.experts[static_cast<std::size_t>(e)](z), rng);
            auto decoded = moe::decode_sample(model.decoder, model.encoder.embed, latent.z, temperature, rng);
            tr.candidates[static_cast<std::size_t>(e)] = model.encode(tr.context.with(decoded.utt));
        }
    });
}

inline constexpr const char* kDataFormat = "moedm-data-v1";

inline nlohmann::json transition_to_json(const LatentTransition& t) {
    nlohmann::json ctx = nlohmann::json::array();
    for (const auto& u : t.context.utts) ctx.push_back(u.ids);
    nlohmann::json j{{"z", pack_doubles(t.z)},
                     {"za", pack_doubles(t.z_a)},
                     {"r", t.r},
                     {"zn", pack_doubles(t.z_next)},
                     {"term", t.terminal},
                     {"y", t.action.ids},
                     {"ctx", ctx},
                     {"ctx_turn", t.context.turn},
                     {"bexp", t.behavior_expert},
                     {"ep", t.episode},
                     {"turn", t.turn}};
    if (!t.candidates.empty()) {
        nlohmann::json cands = nlohmann::json::array();
        for (const auto& c : t.candidates) cands.push_back(pack_doubles(c));
        j["cand"] = cands;
    }
    return j;
}

inline LatentTransition transition_from_json(const nlohmann::json& j) {
    LatentTransition t;
    t.z = unpack_doubles(j.at("z").get<std::string>());
    t.z_a = unpack_doubles(j.at("za").get<std::string>());
    t.r = j.at("r").get<double>();
    t.z_next = unpack_doubles(j.at("zn").get<std::string>());
    t.terminal = j.at("term").get<bool>();
    t.action.ids = j.at("y").get<std::vector<int>>();
    for (const auto& u : j.at("ctx")) {
        Utterance utt;
        utt.ids = u.get<std::vector<int>>();
        t.context.utts.push_back(std::move(utt));
    }
    t.context.turn = j.at("ctx_turn").get<int>();
    t.behavior_expert = j.at("bexp").get<int>();
    t.episode = j.at("ep").get<int>();
    t.turn = j.at("turn").get<int>();
    if (j.contains("cand"))
        for (const auto& c : j.at("cand")) t.candidates.push_back(unpack_doubles(c.get<std::string>()));
    return t;
}

struct DatasetHeader {
    int d = 0;
    int m = 0; // experts beyond the primitive
    std::string phi_hash;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string revision;
};

inline void write_dataset(const std::string& path, const DatasetHeader& header,
                          const std::vector<LatentTransition>& transitions) {
    std::ofstream out(path);
    MOEDM_REQUIRE(out.good(), "cannot open dataset file for writing: " + path);
    nlohmann::json h{{"format", kDataFormat}, {"d", header.d},
                     {"m", header.m},         {"phi_hash", header.phi_hash},
                     {"config_hash", header.config_hash}, {"seed", header.seed},
                     {"revision", header.revision}};
    out << h.dump() << "\n";
    for (const auto& t : transitions) out << transition_to_json(t).dump() << "\n";
}

struct Dataset {
    DatasetHeader header;
    std::vector<LatentTransition> transitions;
};

inline Dataset read_dataset(const std::string& path) {
    std::ifstream in(path);
    MOEDM_REQUIRE(in.good(), "dataset file not found: " + path);
    std::string line;
    MOEDM_REQUIRE(static_cast<bool>(std::getline(in, line)), "dataset file is empty");
    auto h = nlohmann::json::parse(line);
    MOEDM_REQUIRE(h.at("format") == kDataFormat, "dataset: unexpected format tag");
    Dataset ds;
    ds.header.d = h.at("d").get<int>();
    ds.header.m = h.at("m").get<int>();
    ds.header.phi_hash = h.at("phi_hash").get<std::string>();
    ds.header.config_hash = h.at("config_hash").get<std::string>();
    ds.header.seed = h.at("seed").get<std::uint64_t>();
    ds.header.revision = h.at("revision").get<std::string>();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ds.transitions.push_back(transition_from_json(nlohmann::json::parse(line)));
    }
    return ds;
}

inline std::uint64_t dataset_hash(const std::vector<LatentTransition>& transitions) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : transitions) h = fnv1a(transition_to_json(t).dump(), h);
    return h;
}

} // namespace moedm::data
