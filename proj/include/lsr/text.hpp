#pragma once

// Tokenization, vocabulary construction and bag-of-words vectors: the
// discrete substrate every other module consumes.
//
// The tokenizer is deliberately simple (lowercase, ASCII punctuation
// stripped, whitespace split) so that the vocabulary axis stays
// inspectable term-by-term.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "lsr/common.hpp"

namespace lsr {

// Reserved ids are fixed to 0..3 so serialized vocabularies and indexes
// stay portable across builds.
enum ReservedId : uint32_t {
    kPadId = 0,
    kUnkId = 1,
    kClsId = 2,
    kSepId = 3,
};
inline constexpr uint32_t kNumReserved = 4;
inline constexpr const char* kReservedTerms[kNumReserved] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};

inline bool is_reserved(uint32_t id) {
    return id < kNumReserved;
}

// Bidirectional term <-> id map. Immutable after construction and safe to
// share across threads.
struct Vocabulary {
    std::vector<std::string> terms;                   // id -> term, ids dense in [0, size)
    std::unordered_map<std::string, uint32_t> index;  // term -> id

    uint32_t size() const { return static_cast<uint32_t>(terms.size()); }

    uint32_t id_or_unk(const std::string& term) const {
        auto it = index.find(term);
        return it == index.end() ? kUnkId : it->second;
    }

    bool contains(const std::string& term) const { return index.count(term) != 0; }

    const std::string& term(uint32_t id) const {
        if (id >= terms.size()) {
            throw DataError("term id out of range: " + std::to_string(id));
        }
        return terms[id];
    }
};

// Token-id sequence. ids[0] is always [CLS]; length <= the max_len it was
// tokenized with.
struct TokenSeq {
    std::vector<uint32_t> ids;

    size_t length() const { return ids.size(); }
};

// Binary membership vector over the vocabulary, kept as a sorted id list.
// Reserved ids are never members.
struct BowVector {
    std::vector<uint32_t> bits;  // sorted, unique

    bool contains(uint32_t id) const {
        return std::binary_search(bits.begin(), bits.end(), id);
    }
    size_t count() const { return bits.size(); }
};

// ----------------------------------------------------------------------
// Normalization: ASCII lowercase, ASCII punctuation becomes a separator,
// digits kept, bytes >= 0x80 passed through untouched.
// ----------------------------------------------------------------------
inline std::string normalize_text(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    for (unsigned char c : text) {
        if (c >= 0x80) {
            out.push_back(static_cast<char>(c));
        } else if (std::isalnum(c)) {
            out.push_back(static_cast<char>(std::tolower(c)));
        } else {
            out.push_back(' ');
        }
    }
    return out;
}

inline std::vector<std::string> split_terms(const std::string& normalized) {
    std::vector<std::string> terms;
    size_t i = 0;
    const size_t n = normalized.size();
    while (i < n) {
        while (i < n && normalized[i] == ' ') {
            ++i;
        }
        size_t start = i;
        while (i < n && normalized[i] != ' ') {
            ++i;
        }
        if (i > start) {
            terms.push_back(normalized.substr(start, i - start));
        }
    }
    return terms;
}

// ----------------------------------------------------------------------
// Vocabulary construction. Terms are ordered by frequency (descending),
// ties broken lexicographically, so identical corpus bytes always yield
// identical vocabularies.
// ----------------------------------------------------------------------
inline Vocabulary build_vocab(const std::vector<std::string>& corpus, size_t min_freq = 1) {
    if (corpus.empty()) {
        throw DataError("empty corpus");
    }
    std::map<std::string, size_t> freq;  // ordered: lexicographic tie-break for free
    for (const auto& doc : corpus) {
        for (auto& term : split_terms(normalize_text(doc))) {
            ++freq[term];
        }
    }
    std::vector<std::pair<std::string, size_t>> kept;
    kept.reserve(freq.size());
    for (auto& [term, f] : freq) {
        if (f >= min_freq) {
            kept.emplace_back(term, f);
        }
    }
    if (kept.empty()) {
        throw DataError("no term reaches min_freq");
    }
    std::stable_sort(kept.begin(), kept.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    Vocabulary vocab;
    vocab.terms.reserve(kept.size() + kNumReserved);
    for (uint32_t i = 0; i < kNumReserved; ++i) {
        vocab.terms.emplace_back(kReservedTerms[i]);
    }
    for (auto& [term, f] : kept) {
        vocab.terms.push_back(term);
    }
    for (uint32_t i = 0; i < vocab.terms.size(); ++i) {
        vocab.index.emplace(vocab.terms[i], i);
    }
    return vocab;
}

// ----------------------------------------------------------------------
// Tokenization
// ----------------------------------------------------------------------

// Full-text token ids, no [CLS], no truncation. Used by BM25 and the
// document windowing path.
inline std::vector<uint32_t> tokenize_full(const std::string& text, const Vocabulary& vocab) {
    std::vector<uint32_t> ids;
    for (auto& term : split_terms(normalize_text(text))) {
        ids.push_back(vocab.id_or_unk(term));
    }
    return ids;
}

inline TokenSeq tokenize(const std::string& text, const Vocabulary& vocab, size_t max_len = 64) {
    if (max_len < 2) {
        throw UsageError("max_len must be >= 2");
    }
    TokenSeq seq;
    seq.ids.push_back(kClsId);
    for (auto& term : split_terms(normalize_text(text))) {
        if (seq.ids.size() >= max_len) {
            break;
        }
        seq.ids.push_back(vocab.id_or_unk(term));
    }
    return seq;
}

// Inverse of tokenize up to normalization; reserved ids other than [CLS]
// render as their bracket forms.
inline std::string detokenize(const TokenSeq& seq, const Vocabulary& vocab) {
    std::string out;
    for (uint32_t id : seq.ids) {
        if (id == kClsId) {
            continue;
        }
        if (!out.empty()) {
            out.push_back(' ');
        }
        out += vocab.term(id);
    }
    return out;
}

inline BowVector bow(const TokenSeq& seq) {
    BowVector b;
    b.bits.assign(seq.ids.begin(), seq.ids.end());
    std::sort(b.bits.begin(), b.bits.end());
    b.bits.erase(std::unique(b.bits.begin(), b.bits.end()), b.bits.end());
    b.bits.erase(b.bits.begin(),
                 std::lower_bound(b.bits.begin(), b.bits.end(), kNumReserved));
    return b;
}

// ----------------------------------------------------------------------
// File formats: vocabulary is one term per line (line number = id);
// corpus is TSV `id<TAB>text`, LF line endings.
// ----------------------------------------------------------------------
inline void save_vocab(const Vocabulary& vocab, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write file: " + path);
    }
    for (const auto& term : vocab.terms) {
        out << term << '\n';
    }
}

inline Vocabulary load_vocab(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open file: " + path);
    }
    Vocabulary vocab;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        vocab.terms.push_back(line);
    }
    if (vocab.terms.size() < kNumReserved + 1) {
        throw DataError("vocabulary file too small: " + path);
    }
    for (uint32_t i = 0; i < kNumReserved; ++i) {
        if (vocab.terms[i] != kReservedTerms[i]) {
            throw DataError("vocabulary file missing reserved tokens: " + path);
        }
    }
    for (uint32_t i = 0; i < vocab.terms.size(); ++i) {
        if (!vocab.index.emplace(vocab.terms[i], i).second) {
            throw DataError("duplicate term in vocabulary file: " + vocab.terms[i]);
        }
    }
    return vocab;
}

// Corpus TSV: `id<TAB>text`.
inline std::vector<std::pair<std::string, std::string>> load_corpus_tsv(const std::string& path) {
    std::vector<std::pair<std::string, std::string>> docs;
    for (auto& rec : read_tsv(path, 2)) {
        docs.emplace_back(std::move(rec[0]), std::move(rec[1]));
    }
    return docs;
}

inline void save_corpus_tsv(const std::vector<std::pair<std::string, std::string>>& docs,
                            const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write file: " + path);
    }
    for (const auto& [id, text] : docs) {
        out << id << '\t' << text << '\n';
    }
}

}  // namespace lsr
