#include "audiobert/textproc.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <stdexcept>

namespace ab::text {

namespace {

const char* kReserved[kReservedCount] = {"[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"};

bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

bool is_mask_at(const std::string& text, size_t i) {
    static const std::string mask = "[mask]";
    if (i + mask.size() > text.size()) return false;
    for (size_t j = 0; j < mask.size(); ++j)
        if (std::tolower(static_cast<unsigned char>(text[i + j])) != mask[j]) return false;
    return true;
}

}  // namespace

std::vector<std::string> word_split(const std::string& text) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < text.size()) {
        const char c = text[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
        } else if (is_mask_at(text, i)) {
            out.emplace_back("[MASK]");
            i += 6;
        } else if (is_word_char(c)) {
            size_t j = i;
            while (j < text.size() && is_word_char(text[j])) ++j;
            std::string w = text.substr(i, j - i);
            for (auto& ch : w) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
            out.push_back(std::move(w));
            i = j;
        } else {
            out.push_back(std::string(1, c));
            ++i;
        }
    }
    return out;
}

void Vocabulary::push(const std::string& tok) {
    ids_.emplace(tok, static_cast<int>(tokens_.size()));
    tokens_.push_back(tok);
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus) {
    std::map<std::string, int64_t> counts;
    for (const auto& line : corpus)
        for (auto& w : word_split(line))
            if (w != "[MASK]") ++counts[w];
    if (counts.empty()) throw std::invalid_argument("Vocabulary::build: empty corpus");

    std::vector<std::pair<std::string, int64_t>> order(counts.begin(), counts.end());
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocabulary v;
    for (const char* r : kReserved) v.push(r);
    for (const auto& [tok, n] : order) {
        (void)n;
        v.push(tok);
    }
    return v;
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("Vocabulary::load: cannot open " + path);
    Vocabulary v;
    for (const char* r : kReserved) v.push(r);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (v.ids_.count(line)) throw std::runtime_error("Vocabulary::load: duplicate token " + line);
        v.push(line);
    }
    return v;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("Vocabulary::save: cannot open " + path);
    for (size_t i = kReservedCount; i < tokens_.size(); ++i) os << tokens_[i] << '\n';
    if (!os) throw std::runtime_error("Vocabulary::save: write failed for " + path);
}

int Vocabulary::id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnkId : it->second;
}

bool Vocabulary::contains(const std::string& token) const { return ids_.count(token) != 0; }

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("Vocabulary::token: id out of range");
    return tokens_[static_cast<size_t>(id)];
}

TokenizedPrompt tokenize(const std::string& text, const Vocabulary& v) {
    if (text.empty()) throw std::invalid_argument("tokenize: empty text");
    TokenizedPrompt p;
    p.text = text;
    p.ids.push_back(kClsId);
    p.tokens.emplace_back("[CLS]");
    p.char_ranges.emplace_back(-1, -1);

    // re-walk the text so each emitted token carries its character range
    size_t i = 0;
    while (i < text.size()) {
        const char c = text[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        size_t begin = i;
        std::string tok;
        if (is_mask_at(text, i)) {
            tok = "[MASK]";
            i += 6;
        } else if (std::isalnum(static_cast<unsigned char>(c))) {
            size_t j = i;
            while (j < text.size() && std::isalnum(static_cast<unsigned char>(text[j]))) ++j;
            tok = text.substr(i, j - i);
            for (auto& ch : tok) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
            i = j;
        } else {
            tok = std::string(1, c);
            ++i;
        }
        if (tok == "[MASK]") {
            if (p.mask_position != -1) throw std::invalid_argument("tokenize: more than one [MASK]");
            p.mask_position = static_cast<int>(p.ids.size());
            p.ids.push_back(kMaskId);
        } else {
            p.ids.push_back(v.id(tok));
        }
        p.tokens.push_back(std::move(tok));
        p.char_ranges.emplace_back(static_cast<int>(begin), static_cast<int>(i));
    }

    p.ids.push_back(kSepId);
    p.tokens.emplace_back("[SEP]");
    p.char_ranges.emplace_back(-1, -1);
    if (p.ids.size() > static_cast<size_t>(kMaxSeqLen))
        throw std::invalid_argument("tokenize: sequence longer than " + std::to_string(kMaxSeqLen) + " tokens");
    return p;
}

std::pair<std::vector<int>, std::vector<int>> mask_answer(const TokenizedPrompt& prompt,
                                                          const std::string& answer,
                                                          const Vocabulary& v) {
    if (prompt.mask_position < 0) throw std::invalid_argument("mask_answer: prompt has no [MASK]");
    if (!v.contains(answer)) throw std::invalid_argument("mask_answer: answer not in vocabulary: " + answer);
    std::vector<int> labels(prompt.ids.size(), -1);
    labels[static_cast<size_t>(prompt.mask_position)] = v.id(answer);
    return {prompt.ids, labels};
}

std::pair<int, int> char_span_to_tokens(const TokenizedPrompt& prompt, int begin, int end) {
    if (begin < 0 || end > static_cast<int>(prompt.text.size()) || begin >= end)
        throw std::invalid_argument("char_span_to_tokens: bad character range");
    int tok_begin = -1, tok_end = -1;
    for (size_t t = 0; t < prompt.char_ranges.size(); ++t) {
        const auto [cb, ce] = prompt.char_ranges[t];
        if (cb < 0) continue;  // special token
        const bool overlaps = cb < end && begin < ce;
        if (!overlaps) continue;
        if (cb < begin || ce > end)
            throw std::invalid_argument("char_span_to_tokens: span cuts through a token");
        if (tok_begin == -1) tok_begin = static_cast<int>(t);
        tok_end = static_cast<int>(t) + 1;
    }
    if (tok_begin == -1) throw std::invalid_argument("char_span_to_tokens: span covers no token");
    return {tok_begin, tok_end};
}

}  // namespace ab::text
