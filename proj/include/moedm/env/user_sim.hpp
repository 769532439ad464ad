#pragma once

#include <functional>
#include <optional>
#include <span>

#include "moedm/numkit/rng.hpp"
#include "moedm/toylang/templates.hpp"

namespace moedm::env {

using toy::ConversationHistory;
using toy::Intent;
using toy::Utterance;

inline constexpr int kMoodBands = 5;  // width 0.4 on [-1, 1]
inline constexpr int kTrustBands = 4; // width 0.25 on [0, 1]

inline int mood_band(double mood) {
    int b = static_cast<int>(std::floor((mood + 1.0) / 0.4));
    return std::clamp(b, 0, kMoodBands - 1);
}

inline int trust_band(double trust) {
    int b = static_cast<int>(std::floor(trust / 0.25));
    return std::clamp(b, 0, kTrustBands - 1);
}

inline double mood_mid(int band) { return -0.8 + 0.4 * band; }
inline double trust_mid(int band) { return 0.125 + 0.25 * band; }

// One row of the user-dynamics table: applies when the pre-update state
// falls inside the bounds. First matching row per intent wins.
struct TransitionRule {
    int intent = 0;
    double mood_min = -2.0, mood_max = 2.0;
    double trust_min = -1.0, trust_max = 2.0;
    double dmood = 0.0, dtrust = 0.0;

    bool matches(int intent_idx, double mood, double trust) const {
        return intent == intent_idx && mood >= mood_min && mood <= mood_max && trust >= trust_min &&
               trust <= trust_max;
    }
};

struct TransitionTable {
    std::vector<TransitionRule> rules;

    const TransitionRule& lookup(Intent intent, double mood, double trust) const {
        for (const auto& r : rules)
            if (r.matches(static_cast<int>(intent), mood, trust)) return r;
        throw contract_error("transition table has no row for intent " +
                             std::string(toy::intent_names()[static_cast<std::size_t>(intent)]));
    }
};

// Built-in dynamics. Trust is the delayed-reward mechanism: empathy and
// questions build it, cheers pay off only once it is high, and a warm user
// (top trust band) adds a flat bonus to the reply sentiment.
inline TransitionTable default_transition_table() {
    TransitionTable t;
    auto row = [&](int intent, double dmood, double dtrust) {
        TransitionRule r;
        r.intent = intent;
        r.dmood = dmood;
        r.dtrust = dtrust;
        return r;
    };
    // primitive: idle chatter
    t.rules.push_back(row(0, 0.0, 0.05));
    // empathy: strong trust gain while the user is low
    {
        auto r = row(1, 0.1, 0.3);
        r.mood_max = -0.3;
        t.rules.push_back(r);
        t.rules.push_back(row(1, -0.05, 0.05));
    }
    // optimism: mild lift for a gloomy user
    {
        auto r = row(2, 0.1, 0.05);
        r.mood_max = -0.2;
        t.rules.push_back(r);
        t.rules.push_back(row(2, 0.05, 0.05));
    }
    // cheerfulness: big lift only after trust is built
    {
        auto r = row(3, 0.5, 0.0);
        r.trust_min = 0.6;
        t.rules.push_back(r);
        t.rules.push_back(row(3, -0.1, 0.0));
    }
    t.rules.push_back(row(4, 0.1, 0.05));   // contentment
    t.rules.push_back(row(5, -0.15, 0.05)); // dejection
    t.rules.push_back(row(6, -0.4, -0.2));  // rage: one band down regardless
    t.rules.push_back(row(7, -0.25, 0.0));  // sorrow
    // questioning: engaging once trusted, intrusive before that
    {
        auto r = row(8, 0.45, 0.2);
        r.trust_min = 0.5;
        t.rules.push_back(r);
        t.rules.push_back(row(8, -0.4, 0.2));
    }
    // exploration: welcome when the user is not too low
    {
        auto r = row(9, 0.05, 0.1);
        r.mood_min = -0.2;
        t.rules.push_back(r);
        t.rules.push_back(row(9, 0.0, 0.1));
    }
    return t;
}

inline nlohmann::json table_to_json(const TransitionTable& t) {
    nlohmann::json rules = nlohmann::json::array();
    for (const auto& r : t.rules)
        rules.push_back({{"intent", r.intent},
                         {"mood_min", r.mood_min},
                         {"mood_max", r.mood_max},
                         {"trust_min", r.trust_min},
                         {"trust_max", r.trust_max},
                         {"dmood", r.dmood},
                         {"dtrust", r.dtrust}});
    return {{"format", "moedm-env-v1"}, {"rules", rules}};
}

inline TransitionTable table_from_json(const nlohmann::json& j) {
    MOEDM_REQUIRE(j.at("format") == "moedm-env-v1", "transition table: unexpected format tag");
    TransitionTable t;
    for (const auto& rj : j.at("rules")) {
        TransitionRule r;
        r.intent = rj.at("intent").get<int>();
        r.mood_min = rj.at("mood_min").get<double>();
        r.mood_max = rj.at("mood_max").get<double>();
        r.trust_min = rj.at("trust_min").get<double>();
        r.trust_max = rj.at("trust_max").get<double>();
        r.dmood = rj.at("dmood").get<double>();
        r.dtrust = rj.at("dtrust").get<double>();
        MOEDM_REQUIRE(std::fabs(r.dmood) <= 1.0 && std::fabs(r.dtrust) <= 1.0,
                      "transition table: magnitude above 1");
        t.rules.push_back(r);
    }
    return t;
}

struct EnvConfig {
    int horizon = 5;
    double gamma = 0.8;
    double noise = 0.05;      // gaussian noise on mood updates
    bool exact_bands = false; // snap state to band midpoints (noise-free oracle mode)
    double init_mood_mean = -0.4;
    double init_mood_sd = 0.15;
    double warmth_threshold = 0.85; // top trust band
    double warmth_bonus = 0.4;
    double reply_cap = 0.8; // user's expressiveness range
    TransitionTable table = default_transition_table();

    bool noise_free() const { return exact_bands && noise == 0.0; }
};

struct UserState {
    double mood = 0.0;
    double trust = 0.0;
    int turn = 0;
    int topic = 0;

    bool done(const EnvConfig& cfg) const { return turn >= cfg.horizon; }
};

// Band-exact one-step dynamics from band midpoints. Both the live environment
// (in exact mode) and the tabular oracle call this, which is what makes the
// abstraction exact rather than approximate.
struct BandStep {
    double mood = 0.0;
    double trust = 0.0;
    double reply_level = 0.0;
};

inline BandStep band_step(const EnvConfig& cfg, double mood, double trust, Intent intent) {
    const auto& rule = cfg.table.lookup(intent, mood, trust);
    BandStep out;
    out.mood = mood_mid(mood_band(std::clamp(mood + rule.dmood, -1.0, 1.0)));
    out.trust = trust_mid(trust_band(std::clamp(trust + rule.dtrust, 0.0, 1.0)));
    double warmth = out.trust >= cfg.warmth_threshold ? cfg.warmth_bonus : 0.0;
    out.reply_level = std::clamp(out.mood + warmth, -cfg.reply_cap, cfg.reply_cap);
    return out;
}

struct ResetResult {
    ConversationHistory history;
    UserState state;
};

inline ResetResult reset(const EnvConfig& cfg, const toy::Lexicon& lex, nk::Rng& rng) {
    ResetResult out;
    out.state.topic = rng.uniform_int(5);
    if (cfg.exact_bands) {
        out.state.mood = mood_mid(mood_band(cfg.init_mood_mean));
        out.state.trust = trust_mid(0);
        out.history.push(toy::exact_reply(std::clamp(out.state.mood, -cfg.reply_cap, cfg.reply_cap), lex));
    } else {
        out.state.mood = std::clamp(cfg.init_mood_mean + cfg.init_mood_sd * rng.normal(), -1.0, 1.0);
        out.state.trust = rng.uniform(0.0, 0.25);
        out.history.push(toy::gen_template(Intent::primitive, out.state.mood, lex, rng));
    }
    out.history.turn = 0;
    return out;
}

struct StepResult {
    Utterance reply;
    double reward = 0.0;
    UserState state;
    bool done = false;
    Intent inferred = Intent::primitive;
};

inline StepResult step(const EnvConfig& cfg, const UserState& s, const Utterance& agent_utt,
                       const toy::Lexicon& lex, nk::Rng& rng) {
    MOEDM_REQUIRE(!s.done(cfg), "env step after the conversation ended");
    StepResult out;
    out.inferred = toy::infer_intent(agent_utt, lex);
    out.state = s;
    if (cfg.exact_bands) {
        auto b = band_step(cfg, s.mood, s.trust, out.inferred);
        out.state.mood = b.mood;
        out.state.trust = b.trust;
        out.reply = toy::exact_reply(b.reply_level, lex);
    } else {
        const auto& rule = cfg.table.lookup(out.inferred, s.mood, s.trust);
        out.state.mood = std::clamp(s.mood + rule.dmood + cfg.noise * rng.normal(), -1.0, 1.0);
        out.state.trust = std::clamp(s.trust + rule.dtrust, 0.0, 1.0);
        double warmth = out.state.trust >= cfg.warmth_threshold ? cfg.warmth_bonus : 0.0;
        double level = std::clamp(out.state.mood + warmth, -cfg.reply_cap, cfg.reply_cap);
        out.reply = toy::gen_template(Intent::primitive, level, lex, rng);
    }
    out.reward = toy::sent_score(out.reply, lex);
    out.state.turn = s.turn + 1;
    out.done = out.state.done(cfg);
    return out;
}

inline double discounted_return(std::span<const double> rewards, double gamma) {
    double j = 0.0, g = 1.0;
    for (double r : rewards) {
        j += g * r;
        g *= gamma;
    }
    return j;
}

struct AgentChoice {
    Utterance utt;
    int expert = -1; // generating expert when known, for selection histograms
};

using Policy = std::function<AgentChoice(const ConversationHistory&, nk::Rng&)>;

struct TurnRecord {
    AgentChoice choice;
    Intent inferred = Intent::primitive;
    Utterance reply;
    double reward = 0.0;
    UserState state_after;
};

struct RolloutResult {
    double ret = 0.0;
    std::vector<TurnRecord> turns;
    std::vector<long> expert_counts;
};

inline RolloutResult rollout(const Policy& policy, const EnvConfig& cfg, const toy::Lexicon& lex,
                             nk::Rng& rng, int num_experts = toy::kNumIntents) {
    RolloutResult out;
    out.expert_counts.assign(static_cast<std::size_t>(num_experts), 0);
    auto [history, state] = reset(cfg, lex, rng);
    std::vector<double> rewards;
    while (!state.done(cfg)) {
        TurnRecord rec;
        rec.choice = policy(history, rng);
        auto sr = step(cfg, state, rec.choice.utt, lex, rng);
        rec.inferred = sr.inferred;
        rec.reply = sr.reply;
        rec.reward = sr.reward;
        rec.state_after = sr.state;
        rewards.push_back(sr.reward);
        if (rec.choice.expert >= 0 && rec.choice.expert < num_experts)
            ++out.expert_counts[static_cast<std::size_t>(rec.choice.expert)];
        history.push(rec.choice.utt);
        history.push(sr.reply);
        history.turn = sr.state.turn;
        state = sr.state;
        out.turns.push_back(std::move(rec));
    }
    out.ret = discounted_return(rewards, cfg.gamma);
    return out;
}

} // namespace moedm::env
