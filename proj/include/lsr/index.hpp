#pragma once

// Weighted inverted index over sparse vectors with exact top-k
// dot-product retrieval, a brute-force oracle sharing the same float
// semantics, a BM25 baseline, and binary persistence.
//
// Posting weights are stored as 32-bit floats (matching the file format)
// and promoted to 64-bit during scoring. Accumulation per document runs
// in ascending term order everywhere, so index search and the oracle
// produce bitwise-identical scores.

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_set>
#include <vector>

#include "lsr/common.hpp"
#include "lsr/model.hpp"
#include "lsr/text.hpp"

namespace lsr {

struct ScoredHit {
    std::string doc_id;
    double score;

    bool operator==(const ScoredHit& o) const = default;
};

struct Posting {
    uint32_t doc;
    float weight;
};

class InvertedIndex {
public:
    explicit InvertedIndex(uint32_t vocab_size = 0)
        : vocab_size_(vocab_size), postings_(vocab_size) {}

    uint32_t vocab_size() const { return vocab_size_; }
    size_t doc_count() const { return doc_ids_.size(); }
    const std::string& doc_id(uint32_t internal) const { return doc_ids_[internal]; }
    const std::vector<Posting>& postings(uint32_t term) const { return postings_[term]; }
    double doc_length(uint32_t internal) const { return doc_lengths_[internal]; }
    double avg_doc_length() const { return avgdl_; }

    // Documents arrive in ascending internal id; posting lists stay
    // sorted by construction.
    uint32_t add_document(const std::string& external_id, const SparseVector& vec) {
        if (!seen_ids_.insert(external_id).second) {
            throw DataError("duplicate document id: " + external_id);
        }
        const uint32_t internal = static_cast<uint32_t>(doc_ids_.size());
        doc_ids_.push_back(external_id);
        double length = 0.0;
        for (const auto& e : vec.entries) {
            if (e.term >= vocab_size_) {
                throw DataError("term id out of index range: " + std::to_string(e.term));
            }
            if (!(e.weight > 0.0)) {
                throw DataError("non-positive weight for document: " + external_id);
            }
            const float w = static_cast<float>(e.weight);
            if (w <= 0.0f) {
                continue;  // underflowed in f32 storage; carries no score mass
            }
            postings_[e.term].push_back({internal, w});
            length += static_cast<double>(w);
        }
        doc_lengths_.push_back(length);
        total_length_ += length;
        avgdl_ = total_length_ / static_cast<double>(doc_lengths_.size());
        return internal;
    }

    // Impact-style weight quantization: snap every posting weight to one
    // of 255 levels spanning (0, max]. Non-default; a quantized index no
    // longer matches the full-precision oracle exactly.
    void quantize_weights_u8() {
        float max_w = 0.0f;
        for (const auto& list : postings_) {
            for (const auto& p : list) {
                max_w = std::max(max_w, p.weight);
            }
        }
        if (max_w <= 0.0f) {
            return;
        }
        const float step = max_w / 255.0f;
        std::fill(doc_lengths_.begin(), doc_lengths_.end(), 0.0);
        for (auto& list : postings_) {
            for (auto& p : list) {
                const int level =
                    std::max(1, std::min(255, static_cast<int>(std::ceil(p.weight / step))));
                p.weight = static_cast<float>(level) * step;
                doc_lengths_[p.doc] += static_cast<double>(p.weight);
            }
        }
        recompute_avgdl();
    }

    bool operator==(const InvertedIndex& o) const {
        if (vocab_size_ != o.vocab_size_ || doc_ids_ != o.doc_ids_) {
            return false;
        }
        for (uint32_t t = 0; t < vocab_size_; ++t) {
            const auto& a = postings_[t];
            const auto& b = o.postings_[t];
            if (a.size() != b.size()) {
                return false;
            }
            for (size_t i = 0; i < a.size(); ++i) {
                if (a[i].doc != b[i].doc || a[i].weight != b[i].weight) {
                    return false;
                }
            }
        }
        return true;
    }

private:
    friend InvertedIndex load_index(const std::string& path);

    void recompute_avgdl() {
        total_length_ = 0.0;
        for (double l : doc_lengths_) {
            total_length_ += l;
        }
        avgdl_ = doc_lengths_.empty() ? 0.0
                                      : total_length_ / static_cast<double>(doc_lengths_.size());
    }

    uint32_t vocab_size_;
    std::vector<std::string> doc_ids_;
    std::vector<std::vector<Posting>> postings_;
    std::vector<double> doc_lengths_;  // sum of stored weights; BM25 token counts
    double total_length_ = 0.0;
    double avgdl_ = 0.0;
    std::unordered_set<std::string> seen_ids_;
};

inline InvertedIndex build_index(const std::vector<std::pair<std::string, SparseVector>>& docs,
                                 uint32_t vocab_size) {
    InvertedIndex idx(vocab_size);
    for (const auto& [id, vec] : docs) {
        idx.add_document(id, vec);
    }
    return idx;
}

// ----------------------------------------------------------------------
// Top-k selection. Better = higher score, ties broken by lower internal
// doc id. A size-k heap keeps memory bounded by k.
// ----------------------------------------------------------------------
namespace detail {

struct Candidate {
    double score;
    uint32_t doc;
};

inline bool candidate_better(const Candidate& a, const Candidate& b) {
    if (a.score != b.score) {
        return a.score > b.score;
    }
    return a.doc < b.doc;
}

class TopK {
public:
    explicit TopK(size_t k) : k_(k) {}

    void offer(Candidate c) {
        if (heap_.size() < k_) {
            heap_.push_back(c);
            std::push_heap(heap_.begin(), heap_.end(), worst_on_top_);
            return;
        }
        if (candidate_better(c, heap_.front())) {
            std::pop_heap(heap_.begin(), heap_.end(), worst_on_top_);
            heap_.back() = c;
            std::push_heap(heap_.begin(), heap_.end(), worst_on_top_);
        }
    }

    std::vector<Candidate> sorted() && {
        std::sort(heap_.begin(), heap_.end(), candidate_better);
        return std::move(heap_);
    }

private:
    // comparator for a max-heap whose top is the *worst* candidate
    static bool worst_on_top_(const Candidate& a, const Candidate& b) {
        return candidate_better(a, b);
    }

    size_t k_;
    std::vector<Candidate> heap_;
};

}  // namespace detail

// Exact top-k dot-product retrieval, document-at-a-time over the query
// terms' posting lists. Documents sharing no term with the query are
// never considered.
inline std::vector<ScoredHit> search(const InvertedIndex& idx, const SparseVector& query,
                                     size_t k) {
    if (k < 1) {
        throw UsageError("search: k must be >= 1");
    }
    struct Cursor {
        const Posting* pos;
        const Posting* end;
        double query_weight;
    };
    std::vector<Cursor> cursors;  // ascending term order (query entries are sorted)
    cursors.reserve(query.nnz());
    for (const auto& e : query.entries) {
        if (e.term >= idx.vocab_size()) {
            continue;
        }
        const auto& list = idx.postings(e.term);
        if (!list.empty()) {
            cursors.push_back({list.data(), list.data() + list.size(), e.weight});
        }
    }

    detail::TopK top(k);
    while (!cursors.empty()) {
        uint32_t next_doc = UINT32_MAX;
        for (const auto& c : cursors) {
            next_doc = std::min(next_doc, c.pos->doc);
        }
        double score = 0.0;
        for (auto& c : cursors) {  // ascending term order: matches the oracle
            if (c.pos->doc == next_doc) {
                score += c.query_weight * static_cast<double>(c.pos->weight);
                ++c.pos;
            }
        }
        top.offer({score, next_doc});
        cursors.erase(std::remove_if(cursors.begin(), cursors.end(),
                                     [](const Cursor& c) { return c.pos == c.end; }),
                      cursors.end());
    }

    std::vector<ScoredHit> hits;
    for (const auto& c : std::move(top).sorted()) {
        hits.push_back({idx.doc_id(c.doc), c.score});
    }
    return hits;
}

// Full-scan oracle with the identical ordering contract. Doc weights pass
// through the same f32 storage rounding the index applies.
inline std::vector<ScoredHit> brute_force_search(
    const std::vector<std::pair<std::string, SparseVector>>& docs, const SparseVector& query,
    size_t k) {
    if (k < 1) {
        throw UsageError("brute_force_search: k must be >= 1");
    }
    detail::TopK top(k);
    for (uint32_t d = 0; d < docs.size(); ++d) {
        const SparseVector& doc = docs[d].second;
        double score = 0.0;
        bool matched = false;
        size_t i = 0;
        size_t j = 0;
        while (i < query.entries.size() && j < doc.entries.size()) {
            const uint32_t tq = query.entries[i].term;
            const uint32_t td = doc.entries[j].term;
            if (tq == td) {
                const float stored = static_cast<float>(doc.entries[j].weight);
                if (stored > 0.0f) {  // mirror the index's f32 storage exactly
                    score += query.entries[i].weight * static_cast<double>(stored);
                    matched = true;
                }
                ++i;
                ++j;
            } else if (tq < td) {
                ++i;
            } else {
                ++j;
            }
        }
        if (matched) {
            top.offer({score, d});
        }
    }
    std::vector<ScoredHit> hits;
    for (const auto& c : std::move(top).sorted()) {
        hits.push_back({docs[c.doc].first, c.score});
    }
    return hits;
}

// ----------------------------------------------------------------------
// BM25 baseline. The index stores raw term frequencies as weights; the
// document length is their sum, so persistence needs no extra fields.
// ----------------------------------------------------------------------
inline InvertedIndex bm25_index(const std::vector<std::pair<std::string, std::string>>& corpus,
                                const Vocabulary& vocab) {
    if (corpus.empty()) {
        throw DataError("empty corpus");
    }
    InvertedIndex idx(vocab.size());
    for (const auto& [id, text] : corpus) {
        std::map<uint32_t, double> tf;
        for (uint32_t t : tokenize_full(text, vocab)) {
            if (!is_reserved(t)) {
                tf[t] += 1.0;
            }
        }
        SparseVector vec;
        vec.dim = vocab.size();
        for (const auto& [t, f] : tf) {
            vec.entries.push_back({t, f});
        }
        idx.add_document(id, vec);
    }
    return idx;
}

// Robertson BM25:
//   score(d) = sum_t idf(t) * tf*(k1+1) / (tf + k1*(1-b+b*len/avgdl))
//   idf(t)   = ln(1 + (N-df+0.5)/(df+0.5))
// Query terms are deduplicated; terms absent from the corpus contribute 0.
inline std::vector<ScoredHit> bm25_search(const InvertedIndex& idx,
                                          const std::vector<uint32_t>& query_terms, size_t k,
                                          double k1 = 1.2, double b = 0.75) {
    if (k < 1) {
        throw UsageError("bm25_search: k must be >= 1");
    }
    if (!(k1 > 0.0) || b < 0.0 || b > 1.0) {
        throw UsageError("bm25_search: k1 must be > 0 and b in [0,1]");
    }
    std::vector<uint32_t> terms = query_terms;
    std::sort(terms.begin(), terms.end());
    terms.erase(std::unique(terms.begin(), terms.end()), terms.end());

    const double n_docs = static_cast<double>(idx.doc_count());
    struct Cursor {
        const Posting* pos;
        const Posting* end;
        double idf;
    };
    std::vector<Cursor> cursors;
    for (uint32_t t : terms) {
        if (t >= idx.vocab_size() || is_reserved(t)) {
            continue;
        }
        const auto& list = idx.postings(t);
        if (list.empty()) {
            continue;
        }
        const double df = static_cast<double>(list.size());
        const double idf = std::log(1.0 + (n_docs - df + 0.5) / (df + 0.5));
        cursors.push_back({list.data(), list.data() + list.size(), idf});
    }

    const double avgdl = idx.avg_doc_length();
    detail::TopK top(k);
    while (!cursors.empty()) {
        uint32_t next_doc = UINT32_MAX;
        for (const auto& c : cursors) {
            next_doc = std::min(next_doc, c.pos->doc);
        }
        const double len_norm = avgdl > 0.0 ? idx.doc_length(next_doc) / avgdl : 0.0;
        double score = 0.0;
        for (auto& c : cursors) {
            if (c.pos->doc == next_doc) {
                const double tf = static_cast<double>(c.pos->weight);
                score += c.idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len_norm));
                ++c.pos;
            }
        }
        top.offer({score, next_doc});
        cursors.erase(std::remove_if(cursors.begin(), cursors.end(),
                                     [](const Cursor& c) { return c.pos == c.end; }),
                      cursors.end());
    }

    std::vector<ScoredHit> hits;
    for (const auto& c : std::move(top).sorted()) {
        hits.push_back({idx.doc_id(c.doc), c.score});
    }
    return hits;
}

// ----------------------------------------------------------------------
// Persistence ("SPIX"): magic, version u32, v u64, doc_count u64, doc id
// table (u32 length + bytes each), then per-term posting blocks of
// (term u32, length u32, delta-coded varint doc ids, f32 weights) until
// end of file. load(save(idx)) preserves contents bit-exactly.
// ----------------------------------------------------------------------
inline constexpr char kIndexMagic[4] = {'S', 'P', 'I', 'X'};
inline constexpr uint32_t kIndexVersion = 1;

inline void save_index(const InvertedIndex& idx, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write file: " + path);
    }
    write_bytes(out, kIndexMagic, 4);
    write_u32(out, kIndexVersion);
    write_u64(out, idx.vocab_size());
    write_u64(out, idx.doc_count());
    for (uint32_t d = 0; d < idx.doc_count(); ++d) {
        const std::string& id = idx.doc_id(d);
        write_u32(out, static_cast<uint32_t>(id.size()));
        write_bytes(out, id.data(), id.size());
    }
    for (uint32_t t = 0; t < idx.vocab_size(); ++t) {
        const auto& list = idx.postings(t);
        if (list.empty()) {
            continue;
        }
        write_u32(out, t);
        write_u32(out, static_cast<uint32_t>(list.size()));
        uint32_t prev = 0;
        for (size_t i = 0; i < list.size(); ++i) {
            write_varint(out, i == 0 ? list[i].doc : list[i].doc - prev);
            prev = list[i].doc;
        }
        for (const auto& p : list) {
            write_f32(out, p.weight);
        }
    }
    if (!out) {
        throw DataError("write failed: " + path);
    }
}

inline InvertedIndex load_index(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open file: " + path);
    }
    char magic[4];
    uint32_t version = 0;
    uint64_t vocab_size = 0;
    uint64_t doc_count = 0;
    if (!read_bytes(in, magic, 4) || std::memcmp(magic, kIndexMagic, 4) != 0 ||
        !read_u32(in, version) || version != kIndexVersion || !read_u64(in, vocab_size) ||
        !read_u64(in, doc_count)) {
        throw DataError("bad index file: " + path);
    }
    InvertedIndex idx(static_cast<uint32_t>(vocab_size));
    idx.doc_lengths_.assign(doc_count, 0.0);
    for (uint64_t d = 0; d < doc_count; ++d) {
        uint32_t len = 0;
        if (!read_u32(in, len)) {
            throw DataError("bad index file: " + path);
        }
        std::string id(len, '\0');
        if (!read_bytes(in, id.data(), len)) {
            throw DataError("bad index file: " + path);
        }
        if (!idx.seen_ids_.insert(id).second) {
            throw DataError("bad index file: " + path);
        }
        idx.doc_ids_.push_back(std::move(id));
    }
    while (true) {
        uint32_t term = 0;
        if (!read_u32(in, term)) {
            break;  // clean EOF
        }
        uint32_t length = 0;
        if (term >= vocab_size || !read_u32(in, length) || length > doc_count) {
            throw DataError("bad index file: " + path);
        }
        auto& list = idx.postings_[term];
        if (!list.empty()) {
            throw DataError("bad index file: " + path);
        }
        list.resize(length);
        uint32_t prev = 0;
        for (uint32_t i = 0; i < length; ++i) {
            uint64_t delta = 0;
            if (!read_varint(in, delta)) {
                throw DataError("bad index file: " + path);
            }
            const uint64_t doc = i == 0 ? delta : prev + delta;
            if (doc >= doc_count) {
                throw DataError("bad index file: " + path);
            }
            list[i].doc = static_cast<uint32_t>(doc);
            prev = static_cast<uint32_t>(doc);
        }
        for (uint32_t i = 0; i < length; ++i) {
            if (!read_f32(in, list[i].weight)) {
                throw DataError("bad index file: " + path);
            }
            idx.doc_lengths_[list[i].doc] += static_cast<double>(list[i].weight);
        }
    }
    idx.recompute_avgdl();
    return idx;
}

}  // namespace lsr
