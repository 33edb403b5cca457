#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ce {

using real = float;

constexpr const char* kToolVersion = "custom_edit 1.0.0";

// Raised by the tokenizer when a word is not in the vocabulary. Never mapped
// to a catch-all id.
class UnknownTokenError : public std::runtime_error {
public:
    explicit UnknownTokenError(const std::string& word)
        : std::runtime_error("unknown token: '" + word + "'"), word_(word) {}
    const std::string& word() const { return word_; }

private:
    std::string word_;
};

// Raised when a numerical routine produces non-finite values.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Raised for missing, unreadable, or malformed files and checkpoints.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void check_arg(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

}  // namespace ce
