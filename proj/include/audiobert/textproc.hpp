#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace ab::text {

// Reserved token ids; the vocabulary file stores only the open vocabulary,
// so these are stable across save/load by construction.
constexpr int kPadId = 0;
constexpr int kClsId = 1;
constexpr int kSepId = 2;
constexpr int kMaskId = 3;
constexpr int kUnkId = 4;
constexpr int kReservedCount = 5;

constexpr int kMaxSeqLen = 64;

// Lowercased, punctuation-split word pieces of a text. "[MASK]" survives as a
// single token regardless of case.
std::vector<std::string> word_split(const std::string& text);

class Vocabulary {
public:
    // Word-level vocabulary over the corpus; ids assigned by frequency
    // (descending), ties by lexicographic order, after the reserved block.
    static Vocabulary build(const std::vector<std::string>& corpus);

    static Vocabulary load(const std::string& path);
    void save(const std::string& path) const;

    int id(const std::string& token) const;  // kUnkId when absent
    bool contains(const std::string& token) const;
    const std::string& token(int id) const;
    int size() const { return static_cast<int>(tokens_.size()); }

private:
    std::vector<std::string> tokens_;  // index = id, reserved block included
    std::unordered_map<std::string, int> ids_;
    void push(const std::string& tok);
};

struct TokenizedPrompt {
    std::vector<int> ids;          // [CLS] words… [SEP]
    std::vector<std::string> tokens;
    int mask_position = -1;        // index into ids; -1 when no [MASK]
    std::string text;              // original input
    // half-open character range of each token in `text`; (-1,-1) for
    // [CLS]/[SEP], which have no surface form
    std::vector<std::pair<int, int>> char_ranges;
};

// [CLS] … [SEP] framing; unknown words map to [UNK]. Rejects empty text and
// sequences longer than kMaxSeqLen.
TokenizedPrompt tokenize(const std::string& text, const Vocabulary& v);

// MLM targets: labels equal ignore everywhere except the [MASK] position,
// which carries the answer id. Returns (input ids, labels).
std::pair<std::vector<int>, std::vector<int>> mask_answer(const TokenizedPrompt& prompt,
                                                          const std::string& answer,
                                                          const Vocabulary& v);

// Maps a character span of the original text onto the token interval
// [start, end) that exactly covers it; partial token overlap is an error.
std::pair<int, int> char_span_to_tokens(const TokenizedPrompt& prompt, int begin, int end);

}  // namespace ab::text
