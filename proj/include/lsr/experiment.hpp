#pragma once

// End-to-end experiment orchestration: corpus -> vocabulary -> training
// -> representation -> index -> search -> metrics, emitted as a JSON
// report with a config fingerprint. Identical seed and config produce an
// identical report apart from the wall clock.

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "lsr/common.hpp"
#include "lsr/eval.hpp"
#include "lsr/index.hpp"
#include "lsr/model.hpp"
#include "lsr/synth.hpp"
#include "lsr/text.hpp"
#include "lsr/training.hpp"

namespace lsr {

struct ExperimentData {
    std::vector<std::pair<std::string, std::string>> passages;
    std::vector<std::pair<std::string, std::string>> queries;
    Qrels qrels;
    std::vector<ParallelPair> pairs;
    std::vector<TrainingTriple> triples;  // generated when absent
};

inline ExperimentData load_experiment_data(const nlohmann::json& corpus_cfg) {
    ExperimentData data;
    if (corpus_cfg.contains("synthetic")) {
        const auto& s = corpus_cfg.at("synthetic");
        SynthSpec spec;
        spec.n_passages = s.value("passages", spec.n_passages);
        spec.n_queries = s.value("queries", spec.n_queries);
        spec.n_fillers = s.value("fillers", spec.n_fillers);
        spec.mismatch_fraction = s.value("mismatch_fraction", spec.mismatch_fraction);
        spec.seed = s.value("seed", spec.seed);
        SynthCorpus synth = generate_mismatch_corpus(spec);
        data.passages = std::move(synth.passages);
        data.queries = std::move(synth.queries);
        data.qrels = std::move(synth.qrels);
        data.pairs = std::move(synth.pairs);
        return data;
    }
    data.passages = load_corpus_tsv(corpus_cfg.at("passages").get<std::string>());
    data.queries = load_queries_tsv(corpus_cfg.at("queries").get<std::string>());
    data.qrels = load_qrels_tsv(corpus_cfg.at("qrels").get<std::string>());
    if (corpus_cfg.contains("pairs")) {
        data.pairs = load_pairs_tsv(corpus_cfg.at("pairs").get<std::string>());
    }
    if (corpus_cfg.contains("triples")) {
        data.triples = load_triples_tsv(corpus_cfg.at("triples").get<std::string>());
    }
    return data;
}

inline TrainConfig train_config_from_json(const nlohmann::json& cfg, uint64_t seed) {
    TrainConfig tc;
    tc.lr = cfg.value("lr", tc.lr);
    tc.batch = cfg.value("batch", tc.batch);
    tc.phase1_iters = cfg.value("phase1_iters", tc.phase1_iters);
    tc.phase2_iters = cfg.value("phase2_iters", tc.phase2_iters);
    tc.lambda1 = cfg.value("lambda1", tc.lambda1);
    tc.lambda2 = cfg.value("lambda2", tc.lambda2);
    tc.unfreeze_gating = cfg.value("unfreeze_gating", tc.unfreeze_gating);
    tc.seed = seed;
    return tc;
}

inline ModelConfig model_config_from_json(const nlohmann::json& cfg, uint32_t vocab_size) {
    ModelConfig mc;
    mc.dim = cfg.value("d", mc.dim);
    mc.ffn_dim = cfg.value("d_ff", mc.ffn_dim);
    mc.n_layers = cfg.value("n_layers", mc.n_layers);
    mc.max_len = cfg.value("max_len", mc.max_len);
    mc.threshold = cfg.value("threshold", mc.threshold);
    mc.lambda_cap = cfg.value("lambda_cap", mc.lambda_cap);
    mc.sum_special_positions = cfg.value("sum_special_positions", mc.sum_special_positions);
    mc.vocab_size = vocab_size;
    return mc;
}

// Index every passage under a representation function and run all
// queries through it.
inline Run run_search(
    const std::vector<std::pair<std::string, std::string>>& passages,
    const std::vector<std::pair<std::string, std::string>>& queries, uint32_t vocab_size,
    const std::function<SparseVector(const std::string&)>& represent_doc,
    const std::function<SparseVector(const std::string&)>& represent_q, size_t top_k,
    int threads) {
    std::vector<std::pair<std::string, SparseVector>> reps(passages.size());
    parallel_for(passages.size(), threads, [&](size_t begin, size_t end) {
        for (size_t i = begin; i < end; ++i) {
            reps[i] = {passages[i].first, represent_doc(passages[i].second)};
        }
    });
    InvertedIndex idx(vocab_size);
    for (auto& [id, vec] : reps) {
        idx.add_document(id, vec);
    }

    std::vector<std::vector<ScoredHit>> hits(queries.size());
    parallel_for(queries.size(), threads, [&](size_t begin, size_t end) {
        for (size_t i = begin; i < end; ++i) {
            hits[i] = search(idx, represent_q(queries[i].second), top_k);
        }
    });
    Run run;
    for (size_t i = 0; i < queries.size(); ++i) {
        run[queries[i].first] = std::move(hits[i]);
    }
    return run;
}

inline nlohmann::json metrics_json(const Run& run, const Qrels& qrels, size_t mrr_k,
                                   const std::vector<size_t>& recall_ks) {
    nlohmann::json m;
    m["mrr@" + std::to_string(mrr_k)] = mrr_at_k(run, qrels, mrr_k);
    for (size_t k : recall_ks) {
        m["recall@" + std::to_string(k)] = recall_at_k(run, qrels, k);
    }
    return m;
}

// Trains (if needed) and evaluates one configured system; returns its
// metrics block. `trained_out`, when non-null, receives model systems'
// trained parameters keyed by system name.
inline nlohmann::json run_system(const nlohmann::json& system, const ExperimentData& data,
                                 const Vocabulary& vocab, const nlohmann::json& config,
                                 uint64_t seed, int threads,
                                 std::map<std::string, ModelParams>* trained_out) {
    const std::string kind = system.value("kind", "model");
    const auto eval_cfg = config.value("eval", nlohmann::json::object());
    const size_t top_k = eval_cfg.value("top_k", size_t{1000});
    const size_t mrr_k = eval_cfg.value("mrr_k", size_t{10});
    std::vector<size_t> recall_ks =
        eval_cfg.value("recall_ks", std::vector<size_t>{10, 100, 1000});

    if (kind == "bm25") {
        InvertedIndex idx = bm25_index(data.passages, vocab);
        const double k1 = system.value("k1", 1.2);
        const double b = system.value("b", 0.75);
        Run run;
        for (const auto& [qid, qtext] : data.queries) {
            run[qid] = bm25_search(idx, tokenize_full(qtext, vocab), top_k, k1, b);
        }
        return metrics_json(run, data.qrels, mrr_k, recall_ks);
    }

    const auto model_cfg = config.value("model", nlohmann::json::object());
    const int max_len = model_cfg.value("max_len", 64);

    if (kind == "tf") {
        auto tf_rep = [&](const std::string& text) {
            return query_tf_vector(tokenize(text, vocab, max_len), vocab.size());
        };
        Run run = run_search(data.passages, data.queries, vocab.size(), tf_rep, tf_rep, top_k,
                             threads);
        return metrics_json(run, data.qrels, mrr_k, recall_ks);
    }

    if (kind != "model") {
        throw UsageError("unknown system kind: " + kind);
    }

    ModelConfig mc = model_config_from_json(model_cfg, vocab.size());
    mc.mode = parse_gate_mode(system.value("mode", "literal-only"));
    mc.strategy = parse_strategy(system.value("strategy", "symmetric"));

    const std::string name = system.value("name", to_string(mc.mode));
    const uint64_t system_seed = seed ^ fnv1a(name);
    ModelParams model = init_model(mc, system_seed);
    TrainConfig tc = train_config_from_json(config.value("train", nlohmann::json::object()),
                                            system_seed);

    std::vector<TrainingTriple> triples = data.triples;
    if (triples.empty()) {
        const size_t n_neg =
            config.value("train", nlohmann::json::object()).value("negatives_per_query", 4);
        triples = make_triples(data.passages, data.queries, data.qrels, vocab, n_neg,
                               system_seed ^ 0x7472u);
    }

    if (mc.mode == GateMode::expansion_enhanced) {
        if (data.pairs.empty()) {
            throw DataError("expansion-enhanced training needs parallel pairs");
        }
        train_gating(data.pairs, tc, model, vocab);
    }
    train_joint(triples, data.pairs, tc, model, vocab);

    auto doc_rep = [&](const std::string& text) {
        return represent_passage(tokenize(text, vocab, mc.max_len), model, mc.mode);
    };
    auto query_rep = [&](const std::string& text) {
        return represent_query(tokenize(text, vocab, mc.max_len), model, mc.strategy);
    };
    Run run = run_search(data.passages, data.queries, vocab.size(), doc_rep, query_rep, top_k,
                         threads);
    nlohmann::json metrics = metrics_json(run, data.qrels, mrr_k, recall_ks);
    if (trained_out != nullptr) {
        trained_out->emplace(name, std::move(model));
    }
    return metrics;
}

inline nlohmann::json run_experiment(const nlohmann::json& config,
                                     std::map<std::string, ModelParams>* trained_out = nullptr) {
    const auto start = std::chrono::steady_clock::now();
    if (!config.contains("corpus")) {
        throw DataError("experiment config needs a corpus section");
    }
    const uint64_t seed = config.value("seed", uint64_t{42});
    const int threads = config.value("threads", 1);

    ExperimentData data = load_experiment_data(config.at("corpus"));

    // Shared vocabulary over passages and training targets; queries and
    // passages meet in one term space.
    std::vector<std::string> vocab_corpus;
    for (const auto& [id, text] : data.passages) {
        vocab_corpus.push_back(text);
    }
    for (const auto& pair : data.pairs) {
        vocab_corpus.push_back(pair.target);
    }
    const size_t min_freq = config.value("vocab", nlohmann::json::object()).value("min_freq", 1);
    Vocabulary vocab = build_vocab(vocab_corpus, min_freq);

    nlohmann::json systems = config.value("systems", nlohmann::json::array());
    if (systems.empty()) {
        systems = nlohmann::json::array(
            {{{"name", "bm25"}, {"kind", "bm25"}},
             {{"name", "tf"}, {"kind", "tf"}},
             {{"name", "literal-only"}, {"kind", "model"}, {"mode", "literal-only"}},
             {{"name", "expansion-enhanced"}, {"kind", "model"}, {"mode", "expansion-enhanced"}}});
    }

    nlohmann::json report;
    report["seed"] = seed;
    report["config_hash"] = [&] {
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(fnv1a(config.dump())));
        return std::string(buf);
    }();
    report["vocab_size"] = vocab.size();
    report["n_passages"] = data.passages.size();
    report["n_queries"] = data.queries.size();
    report["systems"] = nlohmann::json::object();
    for (const auto& system : systems) {
        const std::string name = system.value("name", system.value("kind", "model"));
        report["systems"][name] =
            run_system(system, data, vocab, config, seed, threads, trained_out);
    }
    report["wall_clock_sec"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

}  // namespace lsr
