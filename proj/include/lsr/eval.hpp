#pragma once

// Retrieval metrics (MRR@k, Recall@k), max-pooled document ranking over
// passage windows, expansion attribution, and the run/qrels file formats.

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lsr/common.hpp"
#include "lsr/index.hpp"
#include "lsr/model.hpp"
#include "lsr/text.hpp"

namespace lsr {

// query id -> relevant doc ids
using Qrels = std::map<std::string, std::set<std::string>>;

// query id -> ranked hits (scores non-increasing)
using Run = std::map<std::string, std::vector<ScoredHit>>;

inline Qrels load_qrels_tsv(const std::string& path) {
    Qrels qrels;
    for (auto& rec : read_tsv(path, 2)) {
        qrels[rec[0]].insert(rec[1]);
    }
    return qrels;
}

inline std::vector<std::pair<std::string, std::string>> load_queries_tsv(const std::string& path) {
    return load_corpus_tsv(path);
}

// Six-column TREC run format: qid Q0 docid rank score tag.
inline void save_trec_run(const Run& run, const std::string& path,
                          const std::string& tag = "lsr") {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write file: " + path);
    }
    out << std::setprecision(17);
    for (const auto& [qid, hits] : run) {
        for (size_t r = 0; r < hits.size(); ++r) {
            out << qid << " Q0 " << hits[r].doc_id << ' ' << r + 1 << ' ' << hits[r].score << ' '
                << tag << '\n';
        }
    }
}

inline Run load_trec_run(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open file: " + path);
    }
    Run run;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::istringstream ss(line);
        std::string qid;
        std::string q0;
        std::string doc;
        size_t rank = 0;
        double score = 0.0;
        std::string tag;
        if (!(ss >> qid >> q0 >> doc >> rank >> score >> tag)) {
            throw DataError(path + ":" + std::to_string(line_no) + ": bad run record");
        }
        auto& hits = run[qid];
        if (rank != hits.size() + 1) {
            throw DataError(path + ":" + std::to_string(line_no) + ": ranks not contiguous");
        }
        if (!hits.empty() && score > hits.back().score) {
            throw DataError(path + ":" + std::to_string(line_no) + ": scores increase");
        }
        hits.push_back({doc, score});
    }
    return run;
}

// ----------------------------------------------------------------------
// Metrics. Averages run over the qrels queries; qrels queries absent from
// the run contribute zero. Run queries without judgments are skipped and
// counted in *skipped.
// ----------------------------------------------------------------------
inline double mrr_at_k(const Run& run, const Qrels& qrels, size_t k, size_t* skipped = nullptr) {
    if (k < 1) {
        throw UsageError("mrr_at_k: k must be >= 1");
    }
    if (skipped != nullptr) {
        *skipped = 0;
        for (const auto& [qid, hits] : run) {
            if (qrels.find(qid) == qrels.end()) {
                ++*skipped;
            }
        }
    }
    if (qrels.empty()) {
        return 0.0;
    }
    double total = 0.0;
    for (const auto& [qid, relevant] : qrels) {
        auto it = run.find(qid);
        if (it == run.end()) {
            continue;
        }
        const auto& hits = it->second;
        for (size_t r = 0; r < hits.size() && r < k; ++r) {
            if (relevant.count(hits[r].doc_id)) {
                total += 1.0 / static_cast<double>(r + 1);
                break;
            }
        }
    }
    return total / static_cast<double>(qrels.size());
}

inline double recall_at_k(const Run& run, const Qrels& qrels, size_t k,
                          size_t* skipped = nullptr) {
    if (k < 1) {
        throw UsageError("recall_at_k: k must be >= 1");
    }
    if (skipped != nullptr) {
        *skipped = 0;
        for (const auto& [qid, hits] : run) {
            if (qrels.find(qid) == qrels.end()) {
                ++*skipped;
            }
        }
    }
    if (qrels.empty()) {
        return 0.0;
    }
    double total = 0.0;
    for (const auto& [qid, relevant] : qrels) {
        if (relevant.empty()) {
            continue;
        }
        auto it = run.find(qid);
        if (it == run.end()) {
            continue;
        }
        const auto& hits = it->second;
        size_t found = 0;
        for (size_t r = 0; r < hits.size() && r < k; ++r) {
            found += relevant.count(hits[r].doc_id);
        }
        total += static_cast<double>(found) / static_cast<double>(relevant.size());
    }
    return total / static_cast<double>(qrels.size());
}

// Paper-table style rendering: value x100 with two decimals.
inline std::string format_metric(double value) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(2) << value * 100.0;
    return ss.str();
}

// ----------------------------------------------------------------------
// Document ranking: split each document into token windows, score every
// window against the query representation, keep the max per document.
// ----------------------------------------------------------------------
inline std::vector<std::vector<uint32_t>> split_windows(const std::vector<uint32_t>& ids,
                                                        size_t window, size_t stride) {
    if (window < stride || stride < 1) {
        throw UsageError("split_windows: need window >= stride >= 1");
    }
    std::vector<std::vector<uint32_t>> windows;
    if (ids.empty()) {
        windows.emplace_back();
        return windows;
    }
    for (size_t start = 0; start < ids.size(); start += stride) {
        const size_t end = std::min(ids.size(), start + window);
        windows.emplace_back(ids.begin() + start, ids.begin() + end);
        if (end == ids.size()) {
            break;
        }
    }
    return windows;
}

inline std::vector<double> window_scores(const std::string& doc_text, const SparseVector& query,
                                         size_t window, size_t stride, const ModelParams& model,
                                         const Vocabulary& vocab) {
    std::vector<double> scores;
    for (const auto& ids : split_windows(tokenize_full(doc_text, vocab), window, stride)) {
        TokenSeq seq;
        seq.ids.push_back(kClsId);
        for (uint32_t id : ids) {
            if (seq.ids.size() >= static_cast<size_t>(model.config.max_len)) {
                break;
            }
            seq.ids.push_back(id);
        }
        scores.push_back(dot(query, represent_passage(seq, model, model.config.mode)));
    }
    return scores;
}

inline std::vector<ScoredHit> passage_retrieval_max(
    const std::vector<std::pair<std::string, std::string>>& doc_corpus,
    const std::string& query_text, size_t window, size_t stride, const ModelParams& model,
    const Vocabulary& vocab, size_t k, int threads = 1) {
    TokenSeq qseq = tokenize(query_text, vocab, model.config.max_len);
    const SparseVector query = represent_query(qseq, model, model.config.strategy);

    std::vector<double> best(doc_corpus.size(), 0.0);
    parallel_for(doc_corpus.size(), threads, [&](size_t begin, size_t end) {
        for (size_t d = begin; d < end; ++d) {
            double score = 0.0;
            for (double s :
                 window_scores(doc_corpus[d].second, query, window, stride, model, vocab)) {
                score = std::max(score, s);
            }
            best[d] = score;
        }
    });

    detail::TopK top(k);
    for (uint32_t d = 0; d < doc_corpus.size(); ++d) {
        if (best[d] > 0.0) {  // documents with no scoring window are not retrieved
            top.offer({best[d], d});
        }
    }
    std::vector<ScoredHit> hits;
    for (const auto& c : std::move(top).sorted()) {
        hits.push_back({doc_corpus[c.doc].first, c.score});
    }
    return hits;
}

// ----------------------------------------------------------------------
// Expansion attribution: which source positions drive an expanded term.
// Contributions are the per-position pre-sum gating logits; ReLU-ing and
// summing them reproduces the term's aggregate logit.
// ----------------------------------------------------------------------
struct AttributionEntry {
    std::string token;
    size_t position;
    double logit;
};

struct AttributionReport {
    std::string term;
    uint32_t term_id = 0;
    double aggregate_logit = 0.0;  // sum of ReLU-ed contributions
    double probability = 0.0;      // logistic of the aggregate
    std::vector<AttributionEntry> contributions;  // sorted by logit, top n
};

inline AttributionReport explain_expansion(const std::string& passage_text, uint32_t term_id,
                                           const ModelParams& model, const Vocabulary& vocab,
                                           size_t top_n = 5) {
    if (term_id >= model.config.vocab_size) {
        throw DataError("term id out of vocabulary range: " + std::to_string(term_id));
    }
    TokenSeq seq = tokenize(passage_text, vocab, model.config.max_len);
    TowerCache cache = tower_forward(model.gating, seq, model.config.sum_special_positions);

    AttributionReport report;
    report.term = vocab.term(term_id);
    report.term_id = term_id;
    for (size_t i = 0; i < seq.length(); ++i) {
        if (!cache.summed[i]) {
            continue;
        }
        const double logit = cache.token_logits(i, term_id);
        report.aggregate_logit += relu(logit);
        report.contributions.push_back({vocab.term(seq.ids[i]), i, logit});
    }
    report.probability = sigmoid(report.aggregate_logit);

    if (report.probability < model.config.threshold || bow(seq).contains(term_id)) {
        throw DataError("term not in expansion set: " + report.term);
    }
    std::stable_sort(report.contributions.begin(), report.contributions.end(),
                     [](const AttributionEntry& a, const AttributionEntry& b) {
                         return a.logit > b.logit;
                     });
    if (report.contributions.size() > top_n) {
        report.contributions.resize(top_n);
    }
    return report;
}

}  // namespace lsr
