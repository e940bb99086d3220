#pragma once

// Synthetic retrieval corpora and dataset utilities: a generated
// lexical-mismatch benchmark, BM25-pooled dev set sampling, and triple
// construction with BM25 + random negatives.

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "lsr/common.hpp"
#include "lsr/index.hpp"
#include "lsr/text.hpp"
#include "lsr/training.hpp"

namespace lsr {

// ----------------------------------------------------------------------
// Lexical-mismatch corpus. Every query owns exactly one relevant passage.
//
// Each topic passage opens with its "core" word (the passage subject) and
// additionally mentions one or two other topics' core words at later
// positions, with the same term frequency. Frequency-based scoring
// cannot tell the subject apart from the mentions; a contextual weighter
// can read the lead position. For half the queries the passage's subject
// is asked with a paired "syn" word that occurs in no passage at all;
// the parallel pairs teach core -> syn, so only expansion-enhanced
// gating can bridge those queries. Distractors are filler passages with
// non-lead core mentions.
// ----------------------------------------------------------------------
struct SynthSpec {
    size_t n_passages = 2000;
    size_t n_queries = 200;
    size_t n_fillers = 30;
    double mismatch_fraction = 0.5;
    uint64_t seed = 7;
};

struct SynthCorpus {
    std::vector<std::pair<std::string, std::string>> passages;  // id, text
    std::vector<std::pair<std::string, std::string>> queries;   // id, text
    Qrels qrels;
    std::vector<ParallelPair> pairs;
    std::vector<std::string> mismatch_query_ids;
};

inline std::string synth_word(const char* stem, size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%03zu", stem, i);
    return buf;
}

inline SynthCorpus generate_mismatch_corpus(const SynthSpec& spec) {
    if (spec.n_queries == 0 || spec.n_passages < spec.n_queries || spec.n_fillers < 8) {
        throw UsageError("generate_mismatch_corpus: bad spec");
    }
    Rng rng(spec.seed);
    SynthCorpus out;

    std::vector<std::string> fillers;
    for (size_t i = 0; i < spec.n_fillers; ++i) {
        fillers.push_back(synth_word("fill", i));
    }

    auto join = [](const std::vector<std::string>& words) {
        std::string text;
        for (const auto& w : words) {
            if (!text.empty()) {
                text.push_back(' ');
            }
            text += w;
        }
        return text;
    };

    const size_t n_topics = spec.n_queries;
    const size_t n_mismatch =
        static_cast<size_t>(spec.mismatch_fraction * static_cast<double>(n_topics) + 0.5);

    auto sample_fillers = [&](size_t count) {
        std::vector<size_t> pool(spec.n_fillers);
        for (size_t i = 0; i < pool.size(); ++i) {
            pool[i] = i;
        }
        rng.shuffle(pool);
        pool.resize(count);
        return pool;
    };

    std::vector<std::string> passage_texts;
    for (size_t t = 0; t < n_topics; ++t) {
        const bool mismatch = t < n_mismatch;
        const std::string core = synth_word("core", t);
        const std::string syn = synth_word("syn", t);

        const size_t n_fill = 5 + rng.uniform_int(3);  // 5..7 distinct fillers
        const std::vector<size_t> pool = sample_fillers(n_fill);

        // everything after the lead subject is shuffled
        std::vector<std::string> tail;
        if (!mismatch) {
            tail.push_back(syn);
        }
        for (size_t i : pool) {
            tail.push_back(fillers[i]);
        }
        const size_t n_mentions = 1 + rng.uniform_int(2);  // 1..2 other-topic mentions
        for (size_t m = 0; m < n_mentions; ++m) {
            size_t other = rng.uniform_int(n_topics - 1);
            if (other >= t) {
                ++other;
            }
            tail.push_back(synth_word("core", other));
        }
        rng.shuffle(tail);
        std::vector<std::string> words;
        words.push_back(core);  // the subject leads
        words.insert(words.end(), tail.begin(), tail.end());
        passage_texts.push_back(join(words));

        // literal queries ask for the subject term itself; mismatch queries
        // ask with the never-written syn word plus one passage filler, so
        // the relevant passage lacks exactly one query term
        const std::string query_fill = fillers[pool[rng.uniform_int(n_fill)]];
        const std::string qid = synth_word("q", t);
        if (mismatch) {
            out.queries.emplace_back(qid, syn + " " + query_fill);
            out.mismatch_query_ids.push_back(qid);
        } else {
            out.queries.emplace_back(qid, core);
        }

        out.pairs.push_back({passage_texts.back(), syn, "passage2query"});
        out.pairs.push_back({passage_texts.back(), core + " " + syn, "summarization"});
    }

    // distractors: filler passages with non-lead core mentions
    std::vector<std::string> distractor_texts;
    for (size_t d = n_topics; d < spec.n_passages; ++d) {
        const size_t n_fill = 4 + rng.uniform_int(4);  // 4..7
        const std::vector<size_t> pool = sample_fillers(n_fill);
        std::vector<std::string> tail;
        for (size_t i = 1; i < pool.size(); ++i) {
            tail.push_back(fillers[pool[i]]);
        }
        const size_t n_mentions = 1 + rng.uniform_int(2);
        for (size_t m = 0; m < n_mentions; ++m) {
            tail.push_back(synth_word("core", rng.uniform_int(n_topics)));
        }
        rng.shuffle(tail);
        std::vector<std::string> words;
        words.push_back(fillers[pool[0]]);  // a filler leads, never a core
        words.insert(words.end(), tail.begin(), tail.end());
        distractor_texts.push_back(join(words));
    }

    // interleave topic passages and distractors in a shuffled but
    // deterministic order; ids follow the final order
    struct Slot {
        std::string text;
        size_t topic;  // n_topics for distractors
    };
    std::vector<Slot> slots;
    for (size_t t = 0; t < passage_texts.size(); ++t) {
        slots.push_back({passage_texts[t], t});
    }
    for (auto& text : distractor_texts) {
        slots.push_back({std::move(text), n_topics});
    }
    rng.shuffle(slots);
    for (size_t i = 0; i < slots.size(); ++i) {
        const std::string pid = synth_word("p", i);
        out.passages.emplace_back(pid, slots[i].text);
        if (slots[i].topic < n_topics) {
            out.qrels[synth_word("q", slots[i].topic)].insert(pid);
        }
    }
    return out;
}

// ----------------------------------------------------------------------
// Triples: per query, BM25 top non-relevant passages as hard negatives
// plus an equal number of random negatives.
// ----------------------------------------------------------------------
inline std::vector<TrainingTriple> make_triples(
    const std::vector<std::pair<std::string, std::string>>& docs,
    const std::vector<std::pair<std::string, std::string>>& queries, const Qrels& qrels,
    const Vocabulary& vocab, size_t negatives_per_query, uint64_t seed) {
    if (docs.empty()) {
        throw DataError("empty corpus");
    }
    InvertedIndex idx = bm25_index(docs, vocab);
    std::unordered_map<std::string, const std::string*> text_of;
    for (const auto& [id, text] : docs) {
        text_of[id] = &text;
    }

    Rng rng(seed);
    std::vector<TrainingTriple> triples;
    for (const auto& [qid, qtext] : queries) {
        auto rel_it = qrels.find(qid);
        if (rel_it == qrels.end() || rel_it->second.empty()) {
            continue;
        }
        const auto& relevant = rel_it->second;

        std::vector<const std::string*> positives;
        for (const auto& pid : relevant) {
            auto it = text_of.find(pid);
            if (it == text_of.end()) {
                throw DataError("qrels references unknown passage: " + pid);
            }
            positives.push_back(it->second);
        }

        // hard negatives from BM25
        std::vector<const std::string*> negatives;
        const size_t want = negatives_per_query;
        auto hits = bm25_search(idx, tokenize_full(qtext, vocab), want + relevant.size());
        for (const auto& hit : hits) {
            if (negatives.size() >= want) {
                break;
            }
            if (!relevant.count(hit.doc_id)) {
                negatives.push_back(text_of.at(hit.doc_id));
            }
        }
        // random negatives, 1:1 with the BM25 ones (or standalone when
        // BM25 found no candidate at all)
        const size_t n_hard = negatives.size();
        const size_t target = n_hard > 0 ? 2 * n_hard : want;
        size_t guard = 0;
        while (negatives.size() < target && guard++ < 10000) {
            const auto& [pid, text] = docs[rng.uniform_int(docs.size())];
            if (!relevant.count(pid)) {
                negatives.push_back(&text);
            }
        }

        for (const std::string* pos : positives) {
            for (const std::string* neg : negatives) {
                triples.push_back({qtext, *pos, *neg});
            }
        }
    }
    if (triples.empty()) {
        throw DataError("no triples generated: queries and qrels do not overlap");
    }
    return triples;
}

// ----------------------------------------------------------------------
// Dev-set sampling: pick Q queries, pool BM25 top-N per query plus the
// relevant passages plus random fill.
// ----------------------------------------------------------------------
struct DevSet {
    std::vector<std::pair<std::string, std::string>> passages;
    std::vector<std::pair<std::string, std::string>> queries;
    Qrels qrels;
};

inline DevSet make_devset(const std::vector<std::pair<std::string, std::string>>& docs,
                          const std::vector<std::pair<std::string, std::string>>& queries,
                          const Qrels& qrels, const Vocabulary& vocab, size_t n_queries,
                          size_t pool_depth, size_t random_fill, uint64_t seed) {
    if (docs.empty()) {
        throw DataError("empty corpus");
    }
    std::vector<size_t> judged;
    for (size_t i = 0; i < queries.size(); ++i) {
        auto it = qrels.find(queries[i].first);
        if (it != qrels.end() && !it->second.empty()) {
            judged.push_back(i);
        }
    }
    if (judged.empty()) {
        throw DataError("no judged queries");
    }
    Rng rng(seed);
    rng.shuffle(judged);
    judged.resize(std::min(n_queries, judged.size()));
    std::sort(judged.begin(), judged.end());

    InvertedIndex idx = bm25_index(docs, vocab);
    std::set<std::string> pool;
    DevSet out;
    for (size_t qi : judged) {
        const auto& [qid, qtext] = queries[qi];
        out.queries.emplace_back(qid, qtext);
        const auto& relevant = qrels.at(qid);
        out.qrels[qid] = relevant;
        pool.insert(relevant.begin(), relevant.end());
        for (const auto& hit : bm25_search(idx, tokenize_full(qtext, vocab), pool_depth)) {
            pool.insert(hit.doc_id);
        }
    }
    size_t guard = 0;
    const size_t target = std::min(docs.size(), pool.size() + random_fill);
    while (pool.size() < target && guard++ < docs.size() * 20) {
        pool.insert(docs[rng.uniform_int(docs.size())].first);
    }
    for (const auto& [id, text] : docs) {  // original corpus order
        if (pool.count(id)) {
            out.passages.emplace_back(id, text);
        }
    }
    return out;
}

}  // namespace lsr
