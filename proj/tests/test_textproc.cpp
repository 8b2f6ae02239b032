#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cctype>
#include <filesystem>

#include "audiobert/textproc.hpp"

using namespace ab::text;

TEST_CASE("vocabulary assigns ids by frequency then lexicographic order") {
    auto v = Vocabulary::build({"a b", "b c"});
    CHECK(v.size() == kReservedCount + 3);
    CHECK(v.id("b") == kReservedCount);      // frequency 2
    CHECK(v.id("a") == kReservedCount + 1);  // frequency 1, 'a' < 'c'
    CHECK(v.id("c") == kReservedCount + 2);
    CHECK(v.token(kMaskId) == "[MASK]");
    CHECK(v.id("zebra") == kUnkId);
    CHECK_FALSE(v.contains("zebra"));

    auto v2 = Vocabulary::build({"a b", "b c"});
    for (int i = 0; i < v.size(); ++i) CHECK(v.token(i) == v2.token(i));

    CHECK_THROWS(Vocabulary::build({}));
    CHECK_THROWS(Vocabulary::build({"   "}));
}

TEST_CASE("vocabulary save/load keeps ids stable") {
    namespace fs = std::filesystem;
    auto v = Vocabulary::build({"meow is the sound a cat makes", "woof woof dog"});
    const auto path = (fs::temp_directory_path() / "ab_vocab_test.txt").string();
    v.save(path);
    auto w = Vocabulary::load(path);
    CHECK(w.size() == v.size());
    for (int i = 0; i < v.size(); ++i) CHECK(w.token(i) == v.token(i));
    fs::remove(path);
}

TEST_CASE("word_split lowercases, splits punctuation, and keeps [MASK] whole") {
    auto t = word_split("Meow, is the SOUND a [MASK] makes!");
    std::vector<std::string> expect = {"meow", ",", "is", "the", "sound",
                                       "a", "[MASK]", "makes", "!"};
    CHECK(t == expect);
    CHECK(word_split("[mask] [Mask]") == std::vector<std::string>{"[MASK]", "[MASK]"});
}

TEST_CASE("tokenize frames, aligns, and finds the mask") {
    auto v = Vocabulary::build({"meow is the sound a cat makes"});
    auto p = tokenize("meow is the sound a [MASK] makes", v);
    REQUIRE(p.ids.size() == 9);  // CLS + 7 words + SEP
    CHECK(p.ids.front() == kClsId);
    CHECK(p.ids.back() == kSepId);
    CHECK(p.mask_position == 6);
    CHECK(p.ids[static_cast<size_t>(p.mask_position)] == kMaskId);
    CHECK(p.tokens[1] == "meow");
    // alignment reproduces each token's surface slice
    for (size_t t = 0; t < p.tokens.size(); ++t) {
        auto [b, e] = p.char_ranges[t];
        if (b < 0) continue;
        std::string slice = p.text.substr(static_cast<size_t>(b), static_cast<size_t>(e - b));
        for (auto& c : slice) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (p.tokens[t] == "[MASK]")
            CHECK(slice == "[mask]");
        else
            CHECK(slice == p.tokens[t]);
    }
    // unknown word becomes [UNK]
    auto q = tokenize("quack is a [MASK]", v);
    CHECK(q.ids[1] == kUnkId);

    CHECK_THROWS(tokenize("", v));
    std::string longtext;
    for (int i = 0; i < 70; ++i) longtext += "cat ";
    CHECK_THROWS(tokenize(longtext, v));
    CHECK_THROWS(tokenize("[MASK] and [MASK]", v));
}

TEST_CASE("round trip over known-word text") {
    auto v = Vocabulary::build({"the sound of a synthesizer typically has a higher pitch than a bass"});
    const std::string text = "the sound of a synthesizer typically has a [MASK] pitch than a bass";
    auto p = tokenize(text, v);
    std::string rebuilt;
    for (size_t t = 1; t + 1 < p.tokens.size(); ++t) {
        if (t > 1) rebuilt += ' ';
        rebuilt += p.tokens[t] == "[MASK]" ? "[MASK]" : p.tokens[t];
    }
    CHECK(rebuilt == text);
}

TEST_CASE("mask_answer labels exactly one position") {
    auto v = Vocabulary::build({"meow is the sound a cat makes"});
    auto p = tokenize("meow is the sound a [MASK] makes", v);
    auto [inputs, labels] = mask_answer(p, "cat", v);
    CHECK(inputs == p.ids);
    int non_ignored = 0;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != -1) {
            ++non_ignored;
            CHECK(static_cast<int>(i) == p.mask_position);
            CHECK(labels[i] == v.id("cat"));
        }
    }
    CHECK(non_ignored == 1);

    CHECK_THROWS(mask_answer(p, "zebra", v));
    auto nomask = tokenize("meow is a cat", v);
    CHECK_THROWS(mask_answer(nomask, "cat", v));
}

TEST_CASE("character spans map to whole-token intervals") {
    auto v = Vocabulary::build({"the sound of a synthesizer has a higher pitch than an acoustic bass"});
    const std::string text = "the sound of a synthesizer typically has a [MASK] pitch than an acoustic bass";
    auto p = tokenize(text, v);

    const auto syn = text.find("sound of a synthesizer");
    auto [b1, e1] = char_span_to_tokens(p, static_cast<int>(syn),
                                        static_cast<int>(syn + std::string("sound of a synthesizer").size()));
    CHECK(e1 - b1 == 4);
    CHECK(p.tokens[static_cast<size_t>(b1)] == "sound");
    CHECK(p.tokens[static_cast<size_t>(e1 - 1)] == "synthesizer");

    const auto bass = text.find("acoustic bass");
    auto [b2, e2] = char_span_to_tokens(p, static_cast<int>(bass), static_cast<int>(text.size()));
    CHECK(e2 - b2 == 2);
    CHECK(p.tokens[static_cast<size_t>(b2)] == "acoustic");

    // cutting a token in half is rejected
    CHECK_THROWS(char_span_to_tokens(p, static_cast<int>(syn), static_cast<int>(syn + 3)));
    CHECK_THROWS(char_span_to_tokens(p, -1, 4));
}
