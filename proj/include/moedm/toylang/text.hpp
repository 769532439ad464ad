#pragma once

#include <vector>

#include "moedm/toylang/lexicon.hpp"

namespace moedm::toy {

// Token-id sequence, at most kMaxUtterance ids including the closing <eos>.
// Padding is implicit: ids hold no <pad>, serializers pad to fixed width.
struct Utterance {
    std::vector<int> ids;

    bool terminated() const { return !ids.empty() && ids.back() == kEos; }

    // Tokens that carry meaning: everything except <pad>/<sos>/<eos>.
    std::vector<int> content() const {
        std::vector<int> out;
        for (int id : ids)
            if (id > kEos) out.push_back(id);
        return out;
    }

    // Fixed-width view with trailing <pad>.
    std::vector<int> padded(int width = kMaxUtterance) const {
        std::vector<int> out(ids.begin(), ids.end());
        MOEDM_REQUIRE(static_cast<int>(out.size()) <= width, "utterance exceeds padded width");
        out.resize(static_cast<std::size_t>(width), kPad);
        return out;
    }

    static Utterance from_padded(const std::vector<int>& p) {
        Utterance u;
        for (int id : p) {
            if (id == kPad) break;
            u.ids.push_back(id);
        }
        return u;
    }

    bool operator==(const Utterance&) const = default;
};

inline void validate(const Utterance& u, const Lexicon& lex) {
    MOEDM_REQUIRE(static_cast<int>(u.ids.size()) <= kMaxUtterance, "utterance too long");
    bool seen_eos = false;
    for (int id : u.ids) {
        MOEDM_REQUIRE(id >= 0 && id < static_cast<int>(lex.tokens.size()), "token id out of range");
        MOEDM_REQUIRE(!seen_eos, "tokens after <eos>");
        MOEDM_REQUIRE(id != kPad, "explicit <pad> inside utterance");
        if (id == kEos) seen_eos = true;
    }
}

// Sliding window of the most recent utterances plus the turn counter the
// dialogue manager has completed.
struct ConversationHistory {
    std::vector<Utterance> utts; // oldest first, at most kHistoryLen
    int turn = 0;

    void push(Utterance u) {
        utts.push_back(std::move(u));
        if (utts.size() > kHistoryLen) utts.erase(utts.begin());
    }

    ConversationHistory with(const Utterance& u) const {
        ConversationHistory h = *this;
        h.push(u);
        return h;
    }

    std::vector<int> all_content() const {
        std::vector<int> out;
        for (const auto& u : utts)
            for (int id : u.content()) out.push_back(id);
        return out;
    }

    bool operator==(const ConversationHistory&) const = default;
};

inline std::string render(const Utterance& u, const Lexicon& lex) {
    std::string out;
    for (int id : u.content()) {
        if (!out.empty()) out += ' ';
        out += lex.tokens[static_cast<std::size_t>(id)].text;
    }
    return out;
}

} // namespace moedm::toy
