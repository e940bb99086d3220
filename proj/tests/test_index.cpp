#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "lsr/index.hpp"

using namespace lsr;
using Catch::Matchers::WithinAbs;

namespace {

SparseVector sv(std::initializer_list<SparseVector::Entry> entries, uint32_t dim = 16) {
    SparseVector v;
    v.entries = entries;
    v.dim = dim;
    return v;
}

std::vector<std::pair<std::string, SparseVector>> two_doc_fixture() {
    return {
        {"A", sv({{0, 1.0}})},
        {"B", sv({{0, 2.0}, {1, 3.0}})},
    };
}

std::vector<std::pair<std::string, SparseVector>> random_docs(size_t n_docs, uint32_t dim,
                                                              Rng& rng) {
    std::vector<std::pair<std::string, SparseVector>> docs;
    docs.reserve(n_docs);
    for (size_t d = 0; d < n_docs; ++d) {
        SparseVector v;
        v.dim = dim;
        const size_t nnz = 1 + rng.uniform_int(24);
        std::vector<uint32_t> terms;
        for (size_t i = 0; i < nnz; ++i) {
            terms.push_back(static_cast<uint32_t>(rng.uniform_int(dim)));
        }
        std::sort(terms.begin(), terms.end());
        terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
        for (uint32_t t : terms) {
            v.entries.push_back({t, 0.05 + rng.uniform() * 4.0});
        }
        docs.emplace_back("doc" + std::to_string(d), v);
    }
    return docs;
}

SparseVector random_query(uint32_t dim, Rng& rng) {
    SparseVector q;
    q.dim = dim;
    const size_t nnz = 1 + rng.uniform_int(8);
    std::vector<uint32_t> terms;
    for (size_t i = 0; i < nnz; ++i) {
        terms.push_back(static_cast<uint32_t>(rng.uniform_int(dim)));
    }
    std::sort(terms.begin(), terms.end());
    terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
    for (uint32_t t : terms) {
        q.entries.push_back({t, 0.05 + rng.uniform() * 2.0});
    }
    return q;
}

}  // namespace

TEST_CASE("build_index produces sorted postings") {
    InvertedIndex idx = build_index(two_doc_fixture(), 16);
    REQUIRE(idx.doc_count() == 2);
    REQUIRE(idx.postings(0).size() == 2);
    REQUIRE(idx.postings(0)[0].doc == 0);
    REQUIRE(idx.postings(0)[0].weight == 1.0f);
    REQUIRE(idx.postings(0)[1].doc == 1);
    REQUIRE(idx.postings(0)[1].weight == 2.0f);
    REQUIRE(idx.postings(1).size() == 1);
    REQUIRE(idx.postings(1)[0].weight == 3.0f);
    REQUIRE(idx.postings(2).empty());
}

TEST_CASE("build_index edge cases") {
    SECTION("empty stream yields a searchable empty index") {
        InvertedIndex idx = build_index({}, 16);
        REQUIRE(idx.doc_count() == 0);
        REQUIRE(search(idx, sv({{0, 1.0}}), 5).empty());
    }
    SECTION("single doc single term") {
        InvertedIndex idx = build_index({{"only", sv({{7, 2.5}})}}, 16);
        REQUIRE(idx.postings(7).size() == 1);
    }
    SECTION("duplicate external ids are rejected by name") {
        InvertedIndex idx(16);
        idx.add_document("dup", sv({{0, 1.0}}));
        REQUIRE_THROWS_WITH(idx.add_document("dup", sv({{1, 1.0}})),
                            Catch::Matchers::ContainsSubstring("dup"));
    }
}

TEST_CASE("search scores by dot product with deterministic tie-break") {
    InvertedIndex idx = build_index(two_doc_fixture(), 16);
    SECTION("hand example") {
        auto hits = search(idx, sv({{0, 1.0}}), 10);
        REQUIRE(hits.size() == 2);
        REQUIRE(hits[0] == ScoredHit{"B", 2.0});
        REQUIRE(hits[1] == ScoredHit{"A", 1.0});
    }
    SECTION("query with no indexed terms returns nothing") {
        REQUIRE(search(idx, sv({{9, 5.0}}), 10).empty());
    }
    SECTION("k larger than the match count returns all matches unpadded") {
        auto hits = search(idx, sv({{1, 1.0}}), 100);
        REQUIRE(hits.size() == 1);
        REQUIRE(hits[0].doc_id == "B");
    }
    SECTION("score ties resolve by insertion order") {
        InvertedIndex tie(8);
        tie.add_document("first", sv({{0, 1.0}}));
        tie.add_document("second", sv({{0, 1.0}}));
        auto hits = search(tie, sv({{0, 2.0}}), 2);
        REQUIRE(hits[0].doc_id == "first");
        REQUIRE(hits[1].doc_id == "second");
    }
}

TEST_CASE("brute_force_search is the oracle and search matches it exactly") {
    SECTION("two-doc fixture self-check") {
        auto docs = two_doc_fixture();
        auto oracle = brute_force_search(docs, sv({{0, 1.0}}), 10);
        auto fast = search(build_index(docs, 16), sv({{0, 1.0}}), 10);
        REQUIRE(oracle == fast);
    }
    SECTION("randomized equivalence, bitwise") {
        Rng rng(101);
        auto docs = random_docs(1000, 64, rng);
        InvertedIndex idx = build_index(docs, 64);
        for (int qi = 0; qi < 100; ++qi) {
            SparseVector q = random_query(64, rng);
            auto oracle = brute_force_search(docs, q, 10);
            auto fast = search(idx, q, 10);
            REQUIRE(oracle.size() == fast.size());
            for (size_t i = 0; i < oracle.size(); ++i) {
                REQUIRE(oracle[i].doc_id == fast[i].doc_id);
                REQUIRE(oracle[i].score == fast[i].score);  // bitwise
            }
        }
    }
    SECTION("empty corpus") {
        REQUIRE(brute_force_search({}, sv({{0, 1.0}}), 3).empty());
    }
}

TEST_CASE("search scores scale linearly with the query") {
    Rng rng(33);
    auto docs = random_docs(200, 32, rng);
    InvertedIndex idx = build_index(docs, 32);
    for (int qi = 0; qi < 10; ++qi) {
        SparseVector q = random_query(32, rng);
        const double alpha = 0.25 + rng.uniform() * 4.0;
        SparseVector scaled = q;
        for (auto& e : scaled.entries) {
            e.weight *= alpha;
        }
        auto base = search(idx, q, 20);
        auto boosted = search(idx, scaled, 20);
        REQUIRE(base.size() == boosted.size());
        for (size_t i = 0; i < base.size(); ++i) {
            REQUIRE(base[i].doc_id == boosted[i].doc_id);  // ranking unchanged
            REQUIRE_THAT(boosted[i].score, WithinAbs(base[i].score * alpha, 1e-9));
        }
    }
}

TEST_CASE("adding a document never lowers existing scores") {
    Rng rng(55);
    auto docs = random_docs(50, 32, rng);
    SparseVector q = random_query(32, rng);

    auto before = brute_force_search(docs, q, 50);
    docs.push_back({"newcomer", sv({{3, 9.0}, {11, 2.0}}, 32)});
    auto after = brute_force_search(docs, q, 51);

    for (const auto& hit : before) {
        double later = 0.0;
        for (const auto& h : after) {
            if (h.doc_id == hit.doc_id) {
                later = h.score;
            }
        }
        REQUIRE(later == hit.score);
    }
}

TEST_CASE("bm25_index counts frequencies and lengths") {
    Vocabulary v = build_vocab({"apple banana cherry"}, 1);
    SECTION("hand-counted frequencies") {
        std::vector<std::pair<std::string, std::string>> corpus = {
            {"d1", "apple banana apple"},
            {"d2", "banana cherry"},
            {"d3", "apple cherry cherry banana"},
        };
        InvertedIndex idx = bm25_index(corpus, v);
        const uint32_t apple = v.index.at("apple");
        const uint32_t cherry = v.index.at("cherry");
        REQUIRE(idx.postings(apple).size() == 2);
        REQUIRE(idx.postings(apple)[0].weight == 2.0f);  // d1: duplicate aggregated
        REQUIRE(idx.postings(apple)[1].weight == 1.0f);
        REQUIRE(idx.postings(cherry)[1].weight == 2.0f);
        REQUIRE(idx.doc_length(0) == 3.0);
        REQUIRE(idx.doc_length(1) == 2.0);
        REQUIRE(idx.doc_length(2) == 4.0);
        REQUIRE_THAT(idx.avg_doc_length(), WithinAbs(3.0, 1e-12));
    }
    SECTION("single-term document records length 1") {
        InvertedIndex idx = bm25_index({{"d", "apple"}}, v);
        REQUIRE(idx.doc_length(0) == 1.0);
    }
    SECTION("empty corpus is rejected") {
        REQUIRE_THROWS_AS(bm25_index({}, v), DataError);
    }
}

TEST_CASE("bm25_search matches the hand-evaluated Robertson formula") {
    Vocabulary v = build_vocab({"apple banana cherry"}, 1);
    std::vector<std::pair<std::string, std::string>> corpus = {
        {"d1", "apple banana apple"},
        {"d2", "banana cherry"},
        {"d3", "apple cherry cherry banana"},
    };
    InvertedIndex idx = bm25_index(corpus, v);
    const double k1 = 1.2;
    const double b = 0.75;

    SECTION("single-doc single-term corpus, full formula by hand") {
        Vocabulary v1 = build_vocab({"word"}, 1);
        InvertedIndex single = bm25_index({{"only", "word"}}, v1);
        auto hits = bm25_search(single, {v1.index.at("word")}, 5, k1, b);
        // N=1, df=1: idf = ln(1 + 0.5/1.5); tf=1, len=avgdl=1:
        // tf_part = 1*(k1+1) / (1 + k1*(1-b+b*1)) = 2.2/2.2 = 1
        const double expect = std::log(1.0 + 0.5 / 1.5);
        REQUIRE(hits.size() == 1);
        REQUIRE_THAT(hits[0].score, WithinAbs(expect, 1e-9));
    }
    SECTION("three-doc corpus, hand-evaluated scores") {
        // query: apple cherry. N=3, avgdl=3.
        // df(apple)=2 -> idf_a = ln(1 + 1.5/2.5); df(cherry)=2 -> same.
        const double idf = std::log(1.0 + (3.0 - 2.0 + 0.5) / (2.0 + 0.5));
        auto tf_part = [&](double tf, double len) {
            return tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / 3.0));
        };
        const double s1 = idf * tf_part(2.0, 3.0);                         // d1: apple tf 2
        const double s2 = idf * tf_part(1.0, 2.0);                         // d2: cherry tf 1
        const double s3 = idf * tf_part(1.0, 4.0) + idf * tf_part(2.0, 4.0);  // d3: both

        auto hits = bm25_search(idx, {v.index.at("apple"), v.index.at("cherry")}, 5, k1, b);
        REQUIRE(hits.size() == 3);
        REQUIRE(hits[0].doc_id == "d3");
        REQUIRE_THAT(hits[0].score, WithinAbs(s3, 1e-9));
        REQUIRE(hits[1].doc_id == "d1");
        REQUIRE_THAT(hits[1].score, WithinAbs(s1, 1e-9));
        REQUIRE(hits[2].doc_id == "d2");
        REQUIRE_THAT(hits[2].score, WithinAbs(s2, 1e-9));
    }
    SECTION("absent query terms contribute zero") {
        auto with = bm25_search(idx, {v.index.at("apple")}, 5, k1, b);
        auto padded = bm25_search(idx, {v.index.at("apple"), kUnkId, 99}, 5, k1, b);
        REQUIRE(with.size() == padded.size());
        for (size_t i = 0; i < with.size(); ++i) {
            REQUIRE(with[i].score == padded[i].score);
        }
    }
    SECTION("b = 0 removes length normalization") {
        // equal tf docs score equally regardless of length
        Vocabulary v2 = build_vocab({"x pad"}, 1);
        InvertedIndex idx2 =
            bm25_index({{"short", "x"}, {"long", "x pad pad pad pad pad"}}, v2);
        auto hits = bm25_search(idx2, {v2.index.at("x")}, 5, k1, 0.0);
        REQUIRE(hits.size() == 2);
        REQUIRE(hits[0].score == hits[1].score);
    }
    SECTION("idf stays positive even for ubiquitous terms") {
        auto hits = bm25_search(idx, {v.index.at("banana")}, 5, k1, b);
        for (const auto& h : hits) {
            REQUIRE(h.score > 0.0);
        }
    }
    SECTION("parameter preconditions") {
        REQUIRE_THROWS_AS(bm25_search(idx, {4}, 0), UsageError);
        REQUIRE_THROWS_AS(bm25_search(idx, {4}, 5, 0.0, 0.5), UsageError);
        REQUIRE_THROWS_AS(bm25_search(idx, {4}, 5, 1.2, 1.5), UsageError);
    }
}

TEST_CASE("u8 weight quantization keeps weights positive on a coarse grid") {
    Rng rng(91);
    auto docs = random_docs(100, 32, rng);
    InvertedIndex idx = build_index(docs, 32);
    idx.quantize_weights_u8();

    std::set<float> levels;
    float max_w = 0.0f;
    for (uint32_t t = 0; t < idx.vocab_size(); ++t) {
        for (const auto& p : idx.postings(t)) {
            REQUIRE(p.weight > 0.0f);
            levels.insert(p.weight);
            max_w = std::max(max_w, p.weight);
        }
    }
    REQUIRE(levels.size() <= 255);
    // every stored weight sits on the level grid
    const float step = max_w / 255.0f;
    for (float w : levels) {
        const float ratio = w / step;
        REQUIRE(std::abs(ratio - std::round(ratio)) < 1e-3);
    }
    // still searchable with sane results
    SparseVector q = random_query(32, rng);
    auto hits = search(idx, q, 5);
    for (const auto& h : hits) {
        REQUIRE(h.score > 0.0);
    }
    // quantizing an empty index is a no-op
    InvertedIndex empty(8);
    empty.quantize_weights_u8();
    REQUIRE(empty.doc_count() == 0);
}

TEST_CASE("index files round-trip bit-exactly") {
    const auto path = (std::filesystem::temp_directory_path() / "lsr_index.spix").string();
    SECTION("fixture round-trip") {
        Rng rng(77);
        auto docs = random_docs(64, 48, rng);
        InvertedIndex idx = build_index(docs, 48);
        save_index(idx, path);
        InvertedIndex loaded = load_index(path);
        REQUIRE(loaded == idx);
        REQUIRE(loaded.doc_count() == idx.doc_count());
        REQUIRE_THAT(loaded.avg_doc_length(), WithinAbs(idx.avg_doc_length(), 1e-9));
        // and the loaded index searches identically
        SparseVector q = random_query(48, rng);
        REQUIRE(search(idx, q, 10) == search(loaded, q, 10));
    }
    SECTION("empty index round-trips") {
        InvertedIndex idx(32);
        save_index(idx, path);
        InvertedIndex loaded = load_index(path);
        REQUIRE(loaded == idx);
    }
    SECTION("corrupt magic is rejected") {
        std::ofstream out(path, std::ios::binary);
        out << "NOPEnot an index";
        out.close();
        REQUIRE_THROWS_WITH(load_index(path), Catch::Matchers::ContainsSubstring("bad index file"));
    }
    SECTION("truncated file is rejected") {
        Rng rng(78);
        InvertedIndex idx = build_index(random_docs(16, 24, rng), 24);
        save_index(idx, path);
        std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
        REQUIRE_THROWS_AS(load_index(path), DataError);
    }
    std::filesystem::remove(path);
}
