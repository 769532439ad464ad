#pragma once

#include <algorithm>
#include <map>
#include <set>

#include "moedm/toylang/text.hpp"

namespace moedm::toy {

// Mean valence of the content tokens, clamped to [-1, 1]. Empty content is
// neutral. Padding never reaches here because content() strips specials.
inline double sent_score(const Utterance& u, const Lexicon& lex) {
    auto content = u.content();
    if (content.empty()) return 0.0;
    double s = 0.0;
    for (int id : content) s += lex.valence(id);
    return std::clamp(s / static_cast<double>(content.size()), -1.0, 1.0);
}

// Fraction of y's content tokens that already appear in the history.
inline double overlap_fraction(const ConversationHistory& x, const Utterance& y, const Lexicon& lex) {
    (void)lex;
    auto content = y.content();
    if (content.empty()) return 0.0;
    auto hist = x.all_content();
    std::set<int> seen(hist.begin(), hist.end());
    int hits = 0;
    for (int id : content)
        if (seen.count(id)) ++hits;
    return static_cast<double>(hits) / static_cast<double>(content.size());
}

inline bool has_marker(const Utterance& y, Intent i, const Lexicon& lex) {
    for (int id : y.ids)
        if (lex.is_marker_of(id, i)) return true;
    return false;
}

// Intent score in [-1, 1]. Sentiment intents blend closeness to the target
// valence with marker presence; questioning is a marker indicator with an
// overlap penalty; exploration rewards token novelty against the history
// (its complement is the coherence-style overlap score).
inline double intent_label(Intent i, const ConversationHistory& x, const Utterance& y, const Lexicon& lex) {
    if (i == Intent::questioning) {
        double present = has_marker(y, Intent::questioning, lex) ? 1.0 : 0.0;
        return std::clamp(present - 0.1 * overlap_fraction(x, y, lex), -1.0, 1.0);
    }
    if (i == Intent::exploration) {
        auto content = y.content();
        if (content.empty()) return -1.0;
        double novelty = 1.0 - overlap_fraction(x, y, lex);
        return std::clamp(2.0 * novelty - 1.0, -1.0, 1.0);
    }
    double target = intent_target_valence(i);
    double closeness = 1.0 - std::fabs(sent_score(y, lex) - target);
    double marker = has_marker(y, i, lex) ? 1.0 : 0.0;
    return std::clamp(0.5 * closeness + 0.5 * marker, -1.0, 1.0);
}

inline double intent_label(int i, const ConversationHistory& x, const Utterance& y, const Lexicon& lex) {
    return intent_label(intent_from_index(i), x, y, lex);
}

// Ratio of distinct n-grams to total n-grams over content tokens.
inline double gram_ratio(int n, const std::vector<Utterance>& utterances) {
    MOEDM_REQUIRE(n >= 1 && n <= 3, "gram_ratio: n must be 1, 2 or 3");
    MOEDM_REQUIRE(!utterances.empty(), "gram_ratio: empty set");
    std::set<std::vector<int>> distinct;
    long total = 0;
    for (const auto& u : utterances) {
        auto content = u.content();
        for (std::size_t s = 0; s + static_cast<std::size_t>(n) <= content.size(); ++s) {
            distinct.insert(std::vector<int>(content.begin() + static_cast<long>(s),
                                             content.begin() + static_cast<long>(s) + n));
            ++total;
        }
    }
    if (total == 0) return 1.0;
    return static_cast<double>(distinct.size()) / static_cast<double>(total);
}

} // namespace moedm::toy
