#pragma once

// Word-level lowercase tokenizer with single-character punctuation tokens.

#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace emo {

class Tokenizer {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;

    Tokenizer();

    /// Lowercases and splits into words (letters/digits, inner '-' or '\'') and punctuation.
    static std::vector<std::string> split(const std::string& text);

    /// Adds every word of every text; existing ids never change.
    void fit(std::span<const std::string> texts);
    void add_word(const std::string& word);

    std::vector<int> encode(const std::string& text) const;
    /// Joins words with spaces; no space is inserted before punctuation.
    std::string decode(std::span<const int> ids) const;

    int id(const std::string& word) const;
    const std::string& word(int id) const;
    int size() const { return static_cast<int>(words_.size()); }

    void save(const std::filesystem::path& path) const;
    static Tokenizer load(const std::filesystem::path& path);

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> ids_;
};

}  // namespace emo
