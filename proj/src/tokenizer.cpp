#include "ce/tokenizer.hpp"

#include <sstream>

namespace ce {

namespace {

std::vector<std::string> standard_words() {
    std::vector<std::string> w = {"[BOS]", "[EOS]", "[PAD]", "[NULL]"};
    for (int i = 0; i < Vocabulary::kRareCount; ++i) w.push_back(Vocabulary::rare_token(i));
    const char* content[] = {
        // template words
        "photo", "rendering", "illustration", "depiction", "rendition", "zoomed", "close", "up",
        "cropped", "in", "of", "a",
        // caption glue
        "on", "the", "an", "background",
        // object classes
        "teapot", "pot", "bird", "cat", "cup", "bowl",
        // style modifiers
        "striped", "dotted", "checkered", "wooden", "plain",
        // shape colors
        "red", "green", "blue", "yellow", "orange", "purple", "teal", "pink",
        // background colors
        "gray", "beige", "navy", "olive", "cream", "charcoal",
        // general caption words
        "small", "large", "big", "tiny", "little", "bright", "dark", "light", "pale", "deep",
        "shiny", "matte", "glossy", "smooth", "rough", "soft", "hard", "round", "square", "tall",
        "short", "wide", "narrow", "thin", "thick", "new", "old", "clean", "simple", "fancy",
        "pretty", "nice", "lovely", "elegant", "modern", "classic", "rustic", "vintage", "painted",
        "glazed", "ceramic", "clay", "metal", "glass", "stone", "paper", "fabric", "single",
        "empty", "full", "open", "closed", "centered", "tilted", "standing", "sitting", "resting",
        "placed", "set", "shown", "seen", "visible", "front", "side", "top", "bottom", "left",
        "right", "middle", "center", "corner", "edge", "view", "closeup", "image", "picture",
        "drawing", "painting", "sketch", "artwork", "design", "style", "pattern", "texture",
        "surface", "shape", "object", "item", "piece", "thing", "scene", "studio", "table", "desk",
        "shelf", "wall", "floor", "counter", "kitchen", "room", "home", "house", "garden",
        "outdoors", "indoors", "day", "night", "morning", "sunlight", "shadow", "spot", "stripe",
        "dot", "check", "grid", "line", "band", "ring", "circle", "oval", "handle", "spout", "lid",
        "rim", "base", "body", "head", "tail", "wing", "beak", "ear", "eye", "paw", "fur",
        "feather", "wood", "grain", "against", "with", "and", "next", "near", "beside", "above",
        "below", "over", "under", "one", "two", "three", "four", "five", "is", "are", "this",
        "that", "it", "its", "very", "quite",
    };
    for (const char* c : content) w.push_back(c);
    return w;
}

}  // namespace

const Vocabulary& Vocabulary::standard() {
    static const Vocabulary v = from_words(standard_words());
    return v;
}

Vocabulary Vocabulary::from_words(std::vector<std::string> words) {
    check_arg(words.size() > static_cast<size_t>(kRareBase + kRareCount),
              "vocabulary must contain specials, rare tokens and content words");
    check_arg(words[0] == "[BOS]" && words[1] == "[EOS]" && words[2] == "[PAD]" &&
                  words[3] == "[NULL]",
              "vocabulary must start with [BOS] [EOS] [PAD] [NULL]");
    for (int i = 0; i < kRareCount; ++i)
        check_arg(words[static_cast<size_t>(kRareBase + i)] == rare_token(i),
                  "vocabulary rare-token block malformed");
    Vocabulary v;
    v.words_ = std::move(words);
    for (size_t i = 0; i < v.words_.size(); ++i) {
        check_arg(!v.words_[i].empty(), "vocabulary word must be non-empty");
        auto [it, inserted] = v.index_.emplace(v.words_[i], static_cast<int>(i));
        (void)it;
        check_arg(inserted, "duplicate vocabulary word: " + v.words_[i]);
    }
    return v;
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream iss(text);
    std::string w;
    while (iss >> w) out.push_back(w);
    return out;
}

TokenSequence tokenize(const std::string& text, const Vocabulary& vocab) {
    std::vector<std::string> words = split_words(text);
    check_arg(!words.empty(), "cannot tokenize empty prompt");
    check_arg(static_cast<int>(words.size()) <= TokenSequence::kMaxLen - 2,
              "prompt too long: " + std::to_string(words.size()) + " words, limit " +
                  std::to_string(TokenSequence::kMaxLen - 2));
    TokenSequence seq;
    seq.ids.reserve(TokenSequence::kMaxLen);
    seq.ids.push_back(Vocabulary::kBos);
    for (const std::string& w : words) seq.ids.push_back(vocab.id(w));
    seq.ids.push_back(Vocabulary::kEos);
    seq.length = static_cast<int>(seq.ids.size());
    while (static_cast<int>(seq.ids.size()) < TokenSequence::kMaxLen)
        seq.ids.push_back(Vocabulary::kPad);
    return seq;
}

std::string strip_rare_tokens(const std::string& prompt, const Vocabulary& vocab) {
    std::string out;
    for (const std::string& w : split_words(prompt)) {
        if (Vocabulary::is_rare_id(vocab.id(w))) continue;
        if (!out.empty()) out += ' ';
        out += w;
    }
    check_arg(!out.empty(), "prompt contains only rare tokens: " + prompt);
    return out;
}

}  // namespace ce
