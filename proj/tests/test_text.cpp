#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "lsr/text.hpp"

using namespace lsr;

TEST_CASE("build_vocab orders by frequency then lexicographically") {
    Vocabulary v = build_vocab({"a b", "b c"}, 1);
    REQUIRE(v.size() == 7);
    REQUIRE(v.terms[0] == "[PAD]");
    REQUIRE(v.terms[1] == "[UNK]");
    REQUIRE(v.terms[2] == "[CLS]");
    REQUIRE(v.terms[3] == "[SEP]");
    // b has frequency 2; a and c tie at 1 and break lexicographically
    REQUIRE(v.terms[4] == "b");
    REQUIRE(v.terms[5] == "a");
    REQUIRE(v.terms[6] == "c");
    REQUIRE(v.index.at("b") == 4);
}

TEST_CASE("build_vocab honors min_freq") {
    Vocabulary v = build_vocab({"a b", "b c"}, 2);
    REQUIRE(v.size() == 5);
    REQUIRE(v.terms[4] == "b");
    REQUIRE_FALSE(v.contains("a"));
    REQUIRE_FALSE(v.contains("c"));
}

TEST_CASE("build_vocab rejects an empty corpus") {
    REQUIRE_THROWS_AS(build_vocab({}, 1), DataError);
}

TEST_CASE("build_vocab is byte-identical across runs") {
    const std::vector<std::string> corpus = {"the cat sat", "a cat ran", "dogs bark; cats nap!"};
    Vocabulary a = build_vocab(corpus, 1);
    Vocabulary b = build_vocab(corpus, 1);
    REQUIRE(a.terms == b.terms);

    const auto path_a = std::filesystem::temp_directory_path() / "lsr_vocab_a.txt";
    const auto path_b = std::filesystem::temp_directory_path() / "lsr_vocab_b.txt";
    save_vocab(a, path_a.string());
    save_vocab(b, path_b.string());
    std::ifstream fa(path_a, std::ios::binary);
    std::ifstream fb(path_b, std::ios::binary);
    std::string bytes_a((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string bytes_b((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    REQUIRE(bytes_a == bytes_b);
    std::filesystem::remove(path_a);
    std::filesystem::remove(path_b);
}

TEST_CASE("tokenize lowercases, strips punctuation and prepends CLS") {
    Vocabulary v = build_vocab({"weather in jamaica"}, 1);
    TokenSeq seq = tokenize("Weather in Jamaica", v, 16);
    REQUIRE(seq.ids.size() == 4);
    REQUIRE(seq.ids[0] == kClsId);
    REQUIRE(seq.ids[1] == v.index.at("weather"));
    REQUIRE(seq.ids[2] == v.index.at("in"));
    REQUIRE(seq.ids[3] == v.index.at("jamaica"));
}

TEST_CASE("tokenize edge cases") {
    Vocabulary v = build_vocab({"a b"}, 1);
    SECTION("empty text yields CLS only") {
        TokenSeq seq = tokenize("", v, 8);
        REQUIRE(seq.ids == std::vector<uint32_t>{kClsId});
    }
    SECTION("unknown terms map to UNK") {
        TokenSeq seq = tokenize("zzzz", v, 8);
        REQUIRE(seq.ids == std::vector<uint32_t>{kClsId, kUnkId});
    }
    SECTION("truncation includes CLS in the budget") {
        TokenSeq seq = tokenize("a b a b a b", v, 3);
        REQUIRE(seq.ids.size() == 3);
        REQUIRE(seq.ids[0] == kClsId);
    }
    SECTION("max_len below 2 is rejected") {
        REQUIRE_THROWS_AS(tokenize("a", v, 1), UsageError);
    }
}

TEST_CASE("bow deduplicates and drops reserved ids") {
    Vocabulary v = build_vocab({"a b"}, 1);
    const uint32_t a = v.index.at("a");
    const uint32_t b = v.index.at("b");

    TokenSeq seq;
    seq.ids = {kClsId, a, b, a};
    BowVector bag = bow(seq);
    REQUIRE(bag.bits == std::vector<uint32_t>{std::min(a, b), std::max(a, b)});

    seq.ids = {kClsId};
    REQUIRE(bow(seq).bits.empty());

    seq.ids = {kClsId, kUnkId, b};
    REQUIRE(bow(seq).bits == std::vector<uint32_t>{b});
}

TEST_CASE("bow size is bounded by sequence length minus CLS") {
    Vocabulary v = build_vocab({"q w e r t y u i o p"}, 1);
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        std::string text;
        const size_t n = 1 + rng.uniform_int(12);
        for (size_t i = 0; i < n; ++i) {
            text += v.terms[kNumReserved + rng.uniform_int(v.size() - kNumReserved)];
            text.push_back(' ');
        }
        TokenSeq seq = tokenize(text, v, 16);
        REQUIRE(bow(seq).count() <= seq.length() - 1);
    }
}

TEST_CASE("tokenize is idempotent under detokenize for ASCII text") {
    Vocabulary v = build_vocab({"the cat sat on a mat", "dogs chase cats"}, 1);
    Rng rng(5);
    const std::vector<std::string> samples = {
        "The cat SAT!", "dogs, dogs, dogs", "unknownword cat", "on; a. mat?", "",
    };
    for (const auto& text : samples) {
        TokenSeq once = tokenize(text, v, 32);
        TokenSeq twice = tokenize(detokenize(once, v), v, 32);
        REQUIRE(once.ids == twice.ids);
    }
    // random ASCII fuzzing
    for (int trial = 0; trial < 100; ++trial) {
        std::string text;
        const size_t n = rng.uniform_int(40);
        for (size_t i = 0; i < n; ++i) {
            text.push_back(static_cast<char>(32 + rng.uniform_int(95)));
        }
        TokenSeq once = tokenize(text, v, 32);
        TokenSeq twice = tokenize(detokenize(once, v), v, 32);
        REQUIRE(once.ids == twice.ids);
    }
}

TEST_CASE("vocabulary round-trips through its file format") {
    Vocabulary v = build_vocab({"alpha beta gamma", "beta gamma delta"}, 1);
    const auto path = std::filesystem::temp_directory_path() / "lsr_vocab_rt.txt";
    save_vocab(v, path.string());
    Vocabulary loaded = load_vocab(path.string());
    REQUIRE(loaded.terms == v.terms);
    REQUIRE(loaded.index.at("gamma") == v.index.at("gamma"));
    std::filesystem::remove(path);
}

TEST_CASE("corpus TSV loader validates field count") {
    const auto path = std::filesystem::temp_directory_path() / "lsr_corpus.tsv";
    {
        std::ofstream out(path, std::ios::binary);
        out << "d1\tsome text\n\nd2\tmore text\n";
    }
    auto docs = load_corpus_tsv(path.string());
    REQUIRE(docs.size() == 2);
    REQUIRE(docs[0].first == "d1");
    REQUIRE(docs[1].second == "more text");
    {
        std::ofstream out(path, std::ios::binary);
        out << "d1 no tab here\n";
    }
    REQUIRE_THROWS_AS(load_corpus_tsv(path.string()), DataError);
    std::filesystem::remove(path);
}
