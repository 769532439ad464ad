#pragma once

#include "moedm/numkit/rng.hpp"
#include "moedm/toylang/labels.hpp"

namespace moedm::toy {

// Templated utterance around an intent: at least one marker of the intent,
// graded tokens drawn near the requested sentiment level.
inline Utterance gen_template(Intent intent, double level, const Lexicon& lex, nk::Rng& rng) {
    level = std::clamp(level, -1.0, 1.0);
    auto draw_valence = [&] {
        double noise = std::clamp(0.15 * rng.normal(), -0.5, 0.5);
        return lex.nearest_valence_token(std::clamp(level + noise, -1.0, 1.0));
    };
    const auto& marks = lex.markers[static_cast<std::size_t>(intent)];
    int marker = marks[static_cast<std::size_t>(rng.uniform_int(3))];
    int filler = lex.filler_ids[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(lex.filler_ids.size())))];

    Utterance u;
    if (intent == Intent::questioning) {
        u.ids = {filler, draw_valence(), draw_valence(), marker, kEos};
        return u;
    }
    if (intent == Intent::exploration) {
        int t1 = lex.topic_ids[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(lex.topic_ids.size())))];
        int t2 = lex.topic_ids[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(lex.topic_ids.size())))];
        u.ids = {marker, t1, t2, draw_valence(), kEos};
        return u;
    }
    u.ids.push_back(marker);
    u.ids.push_back(draw_valence());
    if (std::fabs(level) < 0.9) u.ids.push_back(filler); // extremes stay uniformly signed
    u.ids.push_back(draw_valence());
    u.ids.push_back(draw_valence());
    if (rng.uniform() < 0.5) u.ids.push_back(draw_valence());
    u.ids.push_back(kEos);
    return u;
}

inline Utterance gen_template(int intent, double level, const Lexicon& lex, nk::Rng& rng) {
    return gen_template(intent_from_index(intent), level, lex, rng);
}

// Deterministic reply whose mean valence equals `level` exactly. Only levels
// on the 0.4 grid compose this way (one neutral marker plus four tokens at
// level * 5/4), which is what the band-exact environment mode needs.
inline Utterance exact_reply(double level, const Lexicon& lex) {
    MOEDM_REQUIRE(std::fabs(level) <= 0.8 + 1e-12, "exact_reply: level outside [-0.8, 0.8]");
    double scaled = level * 1.25;
    long grid = std::lround(scaled * 10.0);
    MOEDM_REQUIRE(std::fabs(scaled * 10.0 - static_cast<double>(grid)) < 1e-9,
                  "exact_reply: level off the band lattice");
    Utterance u;
    u.ids.push_back(lex.markers[static_cast<std::size_t>(Intent::primitive)][0]);
    int tok = grid == 0 ? lex.filler_ids[0] : lex.nearest_valence_token(scaled);
    if (grid != 0)
        MOEDM_REQUIRE(std::fabs(lex.valence(tok) - scaled) < 1e-9, "exact_reply: no exact token match");
    for (int k = 0; k < 4; ++k) u.ids.push_back(tok);
    u.ids.push_back(kEos);
    return u;
}

// Minimal deterministic utterance that the environment attributes to `intent`.
inline Utterance intent_probe(Intent intent, const Lexicon& lex) {
    const auto& marks = lex.markers[static_cast<std::size_t>(intent)];
    Utterance u;
    u.ids = {marks[0], marks[1], kEos};
    return u;
}

// Intent read off an utterance: most frequent marker family, ties to the
// lowest index, none seen means primitive.
inline Intent infer_intent(const Utterance& u, const Lexicon& lex) {
    std::array<int, kNumIntents> counts{};
    for (int id : u.ids)
        for (int i = 0; i < kNumIntents; ++i)
            if (lex.is_marker_of(id, static_cast<Intent>(i))) ++counts[static_cast<std::size_t>(i)];
    int best = 0;
    for (int i = 1; i < kNumIntents; ++i)
        if (counts[static_cast<std::size_t>(i)] > counts[static_cast<std::size_t>(best)]) best = i;
    if (counts[static_cast<std::size_t>(best)] == 0) return Intent::primitive;
    return static_cast<Intent>(best);
}

} // namespace moedm::toy
