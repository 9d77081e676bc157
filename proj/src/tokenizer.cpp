#include "emo/tokenizer.h"

#include "emo/errors.h"

#include <nlohmann/json.hpp>

#include <cctype>
#include <fstream>

namespace emo {

namespace {

bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

bool is_punct(const std::string& w) {
    return w.size() == 1 && !word_char(w[0]);
}

}  // namespace

Tokenizer::Tokenizer() {
    for (const char* s : {"<pad>", "<unk>", "<bos>", "<eos>"}) add_word(s);
}

std::vector<std::string> Tokenizer::split(const std::string& text) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < text.size()) {
        const char c = text[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        if (word_char(c)) {
            std::string w;
            while (i < text.size()) {
                const char d = text[i];
                if (word_char(d)) {
                    w += static_cast<char>(std::tolower(static_cast<unsigned char>(d)));
                    ++i;
                } else if ((d == '-' || d == '\'') && i + 1 < text.size() && word_char(text[i + 1])) {
                    w += d;
                    ++i;
                } else {
                    break;
                }
            }
            out.push_back(std::move(w));
        } else {
            out.emplace_back(1, c);
            ++i;
        }
    }
    return out;
}

void Tokenizer::add_word(const std::string& word) {
    if (ids_.count(word)) return;
    ids_.emplace(word, static_cast<int>(words_.size()));
    words_.push_back(word);
}

void Tokenizer::fit(std::span<const std::string> texts) {
    for (const auto& t : texts)
        for (const auto& w : split(t)) add_word(w);
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
    std::vector<int> out;
    for (const auto& w : split(text)) out.push_back(id(w));
    return out;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
    std::string out;
    for (int i : ids) {
        if (i == kPad || i == kBos || i == kEos) continue;
        const std::string& w = word(i);
        if (!out.empty() && !is_punct(w)) out += ' ';
        out += w;
    }
    return out;
}

int Tokenizer::id(const std::string& w) const {
    auto it = ids_.find(w);
    return it == ids_.end() ? kUnk : it->second;
}

const std::string& Tokenizer::word(int i) const {
    if (i < 0 || i >= size()) throw InputError("token id out of range: " + std::to_string(i));
    return words_[static_cast<size_t>(i)];
}

void Tokenizer::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write tokenizer: " + path.string());
    out << nlohmann::json{{"words", words_}}.dump() << "\n";
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read tokenizer: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed tokenizer file " + path.string() + ": " + e.what());
    }
    Tokenizer t;
    const auto words = j.at("words").get<std::vector<std::string>>();
    if (words.size() < 4 || words[0] != "<pad>" || words[3] != "<eos>") {
        throw InputError("tokenizer file does not start with the special tokens");
    }
    for (const auto& w : words) t.add_word(w);
    return t;
}

}  // namespace emo
