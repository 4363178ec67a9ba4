#include <doctest.h>

#include <filesystem>

#include "cacophony/text.hpp"

using namespace cacophony;

TEST_CASE("build_vocab determinism and id layout") {
    Vocab v = build_vocab({"a b", "b c"});
    CHECK(v.size() == 7);
    CHECK(v.id("a") == 4);
    CHECK(v.id("b") == 5);
    CHECK(v.id("c") == 6);
    CHECK(v.id("zebra") == Vocab::UNK);

    Vocab again = build_vocab({"a b", "b c"});
    for (int i = 0; i < v.size(); ++i) CHECK(v.token(i) == again.token(i));

    Vocab empty = build_vocab({""});
    CHECK(empty.size() == 4);

    CHECK_THROWS_AS(build_vocab({}), std::invalid_argument);
}

TEST_CASE("tokenize basics") {
    Vocab v = build_vocab({"a b", "b c"});

    SUBCASE("empty text") {
        TokenSequence seq = tokenize("", v);
        CHECK(seq.ids == std::vector<int>{Vocab::BOS, Vocab::EOS});
    }

    SUBCASE("table lookup") {
        TokenSequence seq = tokenize("a b", v);
        CHECK(seq.ids == std::vector<int>{1, 4, 5, 2});
    }

    SUBCASE("case folding") {
        TokenSequence seq = tokenize("A B", v);
        CHECK(seq.ids == std::vector<int>{1, 4, 5, 2});
    }

    SUBCASE("long text truncates to 77 with EOS last") {
        std::string text;
        for (int i = 0; i < 100; ++i) text += "a ";
        TokenSequence seq = tokenize(text, v);
        CHECK(seq.length() == 77);
        CHECK(seq.ids.front() == Vocab::BOS);
        CHECK(seq.ids.back() == Vocab::EOS);
    }

    SUBCASE("no PAD is ever emitted") {
        TokenSequence seq = tokenize("a b c unknown", v);
        for (int id : seq.ids) CHECK(id != Vocab::PAD);
        for (uint8_t p : seq.pad_mask) CHECK(p == 0);
    }
}

TEST_CASE("detokenize inverts tokenize for in-vocab text") {
    Vocab v = build_vocab({"a low sine tone then white noise"});
    const std::string text = "A low  sine tone";
    CHECK(detokenize(tokenize(text, v), v) == "a low sine tone");
}

TEST_CASE("prompt templates") {
    CHECK(apply_prompt_template("dog bark", "This is a sound of [label]") == "This is a sound of dog bark");
    CHECK(apply_prompt_template("park", "This sound is on [label]") == "This sound is on park");
    CHECK_THROWS_AS(apply_prompt_template("x", "no placeholder here"), std::invalid_argument);
}

TEST_CASE("vocab file round trip") {
    Vocab v = build_vocab({"sine tone then noise"});
    auto dir = std::filesystem::temp_directory_path() / "cacophony_tests";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "vocab.txt").string();
    v.save(path);
    Vocab loaded = Vocab::load(path);
    CHECK(loaded.size() == v.size());
    for (int i = 0; i < v.size(); ++i) CHECK(loaded.token(i) == v.token(i));
}
