#pragma once

#include <array>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "moedm/util.hpp"

namespace moedm::toy {

using json = nlohmann::json;

inline constexpr int kPad = 0;
inline constexpr int kSos = 1;
inline constexpr int kEos = 2;
inline constexpr int kVocabSize = 64;
inline constexpr int kNumIntents = 10; // primitive + 9
inline constexpr int kMaxUtterance = 8;
inline constexpr int kHistoryLen = 4;

enum class Intent {
    primitive = 0,
    empathy,
    optimism,
    cheerfulness,
    contentment,
    dejection,
    rage,
    sorrow,
    questioning,
    exploration,
};

inline const std::array<const char*, kNumIntents>& intent_names() {
    static const std::array<const char*, kNumIntents> names = {
        "primitive",  "empathy", "optimism", "cheerfulness", "contentment",
        "dejection",  "rage",    "sorrow",   "questioning",  "exploration"};
    return names;
}

inline Intent intent_from_index(int i) {
    MOEDM_REQUIRE(i >= 0 && i < kNumIntents, "intent index out of range");
    return static_cast<Intent>(i);
}

// Sentiment-flavored intents carry a target valence; questioning and
// exploration are scored structurally instead.
inline bool intent_is_sentiment(Intent i) {
    return i != Intent::questioning && i != Intent::exploration;
}

inline double intent_target_valence(Intent i) {
    switch (i) {
        case Intent::primitive: return 0.0;
        case Intent::empathy: return -0.2;
        case Intent::optimism: return 0.5;
        case Intent::cheerfulness: return 0.9;
        case Intent::contentment: return 0.2;
        case Intent::dejection: return -0.5;
        case Intent::rage: return -0.9;
        case Intent::sorrow: return -0.7;
        default: return 0.0;
    }
}

struct TokenInfo {
    std::string text;
    double valence = 0.0;
};

struct Lexicon {
    std::vector<TokenInfo> tokens;                       // size kVocabSize
    std::array<std::array<int, 3>, kNumIntents> markers; // 3 marker ids per intent
    std::vector<int> valence_ids;                        // the 20 graded content tokens
    std::vector<int> filler_ids;                         // neutral glue words
    std::vector<int> topic_ids;                          // novelty pool for exploration

    double valence(int id) const {
        MOEDM_REQUIRE(id >= 0 && id < static_cast<int>(tokens.size()), "token id out of range");
        return tokens[static_cast<std::size_t>(id)].valence;
    }

    bool is_content(int id) const { return id > kEos && id < static_cast<int>(tokens.size()); }

    bool is_marker_of(int id, Intent intent) const {
        const auto& m = markers[static_cast<std::size_t>(intent)];
        return id == m[0] || id == m[1] || id == m[2];
    }

    const std::array<int, 3>& question_markers() const {
        return markers[static_cast<std::size_t>(Intent::questioning)];
    }

    // Closest graded token to a target valence (grid +-0.1 .. +-1.0).
    int nearest_valence_token(double v) const {
        int best = valence_ids.front();
        double bd = 1e9;
        for (int id : valence_ids) {
            double d = std::fabs(tokens[static_cast<std::size_t>(id)].valence - v);
            if (d < bd) {
                bd = d;
                best = id;
            }
        }
        return best;
    }
};

inline json lexicon_to_json(const Lexicon& lex) {
    json toks = json::array();
    for (std::size_t i = 0; i < lex.tokens.size(); ++i)
        toks.push_back({{"id", i}, {"text", lex.tokens[i].text}, {"valence", lex.tokens[i].valence}});
    json marks = json::object();
    for (int i = 0; i < kNumIntents; ++i)
        marks[intent_names()[static_cast<std::size_t>(i)]] = lex.markers[static_cast<std::size_t>(i)];
    return {{"format", "moedm-lexicon-v1"},
            {"tokens", toks},
            {"intent_markers", marks},
            {"valence_ids", lex.valence_ids},
            {"filler_ids", lex.filler_ids},
            {"topic_ids", lex.topic_ids}};
}

inline Lexicon lexicon_from_json(const json& j) {
    MOEDM_REQUIRE(j.at("format") == "moedm-lexicon-v1", "lexicon: unexpected format tag");
    Lexicon lex;
    lex.tokens.resize(j.at("tokens").size());
    for (const auto& t : j.at("tokens")) {
        auto id = t.at("id").get<std::size_t>();
        lex.tokens[id] = {t.at("text").get<std::string>(), t.at("valence").get<double>()};
        MOEDM_REQUIRE(std::fabs(lex.tokens[id].valence) <= 1.0, "lexicon: valence outside [-1,1]");
    }
    for (int i = 0; i < kNumIntents; ++i) {
        auto ids = j.at("intent_markers").at(intent_names()[static_cast<std::size_t>(i)]).get<std::vector<int>>();
        MOEDM_REQUIRE(ids.size() == 3, "lexicon: every intent needs 3 markers");
        std::copy(ids.begin(), ids.end(), lex.markers[static_cast<std::size_t>(i)].begin());
    }
    lex.valence_ids = j.at("valence_ids").get<std::vector<int>>();
    lex.filler_ids = j.at("filler_ids").get<std::vector<int>>();
    lex.topic_ids = j.at("topic_ids").get<std::vector<int>>();
    return lex;
}

// Built-in 64-token lexicon: 3 specials, 20 graded tokens, 10x3 intent
// markers, 6 fillers, 5 topic words. Marker tokens carry their intent's
// target valence so templated utterances land on it.
inline const Lexicon& default_lexicon() {
    static const Lexicon lex = [] {
        Lexicon l;
        l.tokens.resize(kVocabSize);
        l.tokens[kPad] = {"<pad>", 0.0};
        l.tokens[kSos] = {"<sos>", 0.0};
        l.tokens[kEos] = {"<eos>", 0.0};

        const char* graded[20] = {"awful", "terrible", "bleak",     "gloomy",   "sour",
                                  "meh",   "down",     "unsure",    "tired",    "hmm",
                                  "okay",  "fine",     "nice",      "good",     "pleasant",
                                  "happy", "great",    "lovely",    "wonderful", "amazing"};
        for (int k = 0; k < 20; ++k) {
            int id = 3 + k;
            double v = k < 10 ? -1.0 + 0.1 * k : 0.1 * (k - 9);
            l.tokens[static_cast<std::size_t>(id)] = {graded[k], v};
            l.valence_ids.push_back(id);
        }

        const char* marker_words[kNumIntents][3] = {
            {"well", "so", "anyway"},
            {"hear_you", "understand", "with_you"},
            {"hopeful", "brighter", "improving"},
            {"yay", "delight", "sunshine"},
            {"settled", "cozy", "at_ease"},
            {"deflated", "drained", "letdown"},
            {"furious", "outrage", "seething"},
            {"grieving", "heartache", "mourning"},
            {"what_about", "how_so", "tell_me"},
            {"new_topic", "ever_tried", "speaking_of"},
        };
        for (int i = 0; i < kNumIntents; ++i) {
            double v = intent_target_valence(static_cast<Intent>(i));
            if (!intent_is_sentiment(static_cast<Intent>(i))) v = 0.0;
            for (int k = 0; k < 3; ++k) {
                int id = 23 + 3 * i + k;
                l.tokens[static_cast<std::size_t>(id)] = {marker_words[i][k], v};
                l.markers[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] = id;
            }
        }

        const char* fillers[6] = {"the", "a", "and", "to", "of", "it"};
        for (int k = 0; k < 6; ++k) {
            int id = 53 + k;
            l.tokens[static_cast<std::size_t>(id)] = {fillers[k], 0.0};
            l.filler_ids.push_back(id);
        }
        const char* topics[5] = {"astronomy", "recipes", "travel", "music", "chess"};
        for (int k = 0; k < 5; ++k) {
            int id = 59 + k;
            l.tokens[static_cast<std::size_t>(id)] = {topics[k], 0.0};
            l.topic_ids.push_back(id);
        }
        return l;
    }();
    return lex;
}

inline Lexicon load_lexicon(const std::string& path) {
    if (path.empty()) return default_lexicon();
    std::ifstream in(path);
    MOEDM_REQUIRE(in.good(), "lexicon file not found: " + path);
    json j;
    in >> j;
    return lexicon_from_json(j);
}

} // namespace moedm::toy
