#pragma once

#include <map>
#include <string>
#include <vector>

#include "ce/common.hpp"

namespace ce {

// Whitespace tokenizer over a fixed closed vocabulary. Out-of-vocabulary words
// raise UnknownTokenError; nothing is ever silently remapped.
class Vocabulary {
public:
    static constexpr int kBos = 0;
    static constexpr int kEos = 1;
    static constexpr int kPad = 2;
    static constexpr int kNull = 3;
    static constexpr int kRareBase = 4;
    static constexpr int kRareCount = 8;

    // The standard vocabulary: specials, the reserved rare-token pool
    // V1*..V8*, and ~200 caption/template words.
    static const Vocabulary& standard();

    static Vocabulary from_words(std::vector<std::string> words);

    int id(const std::string& word) const {
        auto it = index_.find(word);
        if (it == index_.end()) throw UnknownTokenError(word);
        return it->second;
    }

    bool contains(const std::string& word) const { return index_.count(word) > 0; }
    const std::string& word(int id) const { return words_[static_cast<size_t>(id)]; }
    int size() const { return static_cast<int>(words_.size()); }
    const std::vector<std::string>& words() const { return words_; }

    static bool is_rare_id(int id) { return id >= kRareBase && id < kRareBase + kRareCount; }
    static std::string rare_token(int slot) { return "V" + std::to_string(slot + 1) + "*"; }

private:
    std::vector<std::string> words_;
    std::map<std::string, int> index_;
};

struct TokenSequence {
    static constexpr int kMaxLen = 16;
    std::vector<int> ids;  // always kMaxLen entries, PAD-filled
    int length = 0;        // real tokens including BOS/EOS

    bool operator==(const TokenSequence& o) const = default;
};

TokenSequence tokenize(const std::string& text, const Vocabulary& vocab);

std::vector<std::string> split_words(const std::string& text);

// The canonical unconditional prompt.
inline std::string null_prompt() { return "[NULL]"; }

// Removes every rare token (V1*..V8*) from a prompt. Throws invalid_argument
// if nothing but rare tokens remains.
std::string strip_rare_tokens(const std::string& prompt, const Vocabulary& vocab);

}  // namespace ce
