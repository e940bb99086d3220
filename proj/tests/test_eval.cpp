#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "lsr/eval.hpp"
#include "lsr/experiment.hpp"
#include "lsr/synth.hpp"

using namespace lsr;
using Catch::Matchers::WithinAbs;

namespace {

Run three_query_run() {
    Run run;
    run["q1"] = {{"d1", 9.0}, {"d2", 8.0}, {"d3", 7.0}};
    run["q2"] = {{"x1", 5.0}, {"x2", 4.0}, {"x3", 3.0}, {"rel2", 2.0}, {"x4", 1.0}};
    Run::mapped_type q3;
    for (int i = 0; i < 10; ++i) {
        q3.push_back({"junk" + std::to_string(i), 20.0 - i});
    }
    q3.push_back({"rel3", 1.0});  // rank 11, outside k=10
    run["q3"] = q3;
    return run;
}

Qrels three_query_qrels() {
    Qrels qrels;
    qrels["q1"] = {"d1"};
    qrels["q2"] = {"rel2", "x2"};
    qrels["q3"] = {"rel3"};
    return qrels;
}

}  // namespace

TEST_CASE("mrr_at_k on the hand fixture") {
    Run run = three_query_run();
    Qrels qrels = three_query_qrels();
    // q1: first hit relevant -> 1; q2: first relevant at rank 2 (x2) -> 0.5;
    // q3: relevant at rank 11 -> 0 at k=10
    REQUIRE_THAT(mrr_at_k(run, qrels, 10), WithinAbs((1.0 + 0.5 + 0.0) / 3.0, 1e-15));
    // at k=11 q3 contributes 1/11
    REQUIRE_THAT(mrr_at_k(run, qrels, 11), WithinAbs((1.0 + 0.5 + 1.0 / 11.0) / 3.0, 1e-15));

    SECTION("single query, first relevant at rank 4") {
        Run r;
        r["q"] = {{"a", 4.0}, {"b", 3.0}, {"c", 2.0}, {"rel", 1.0}};
        Qrels qr;
        qr["q"] = {"rel"};
        REQUIRE_THAT(mrr_at_k(r, qr, 10), WithinAbs(0.25, 1e-15));
    }
    SECTION("every query relevant at the top") {
        Run r;
        r["a"] = {{"ra", 1.0}};
        r["b"] = {{"rb", 1.0}};
        Qrels qr;
        qr["a"] = {"ra"};
        qr["b"] = {"rb"};
        REQUIRE(mrr_at_k(r, qr, 10) == 1.0);
    }
    SECTION("run queries without judgments are skipped and counted") {
        Run r = three_query_run();
        r["unjudged"] = {{"d", 1.0}};
        size_t skipped = 0;
        const double with = mrr_at_k(r, qrels, 10, &skipped);
        REQUIRE(skipped == 1);
        REQUIRE_THAT(with, WithinAbs(mrr_at_k(run, qrels, 10), 1e-15));
    }
}

TEST_CASE("recall_at_k on the hand fixture") {
    Run run = three_query_run();
    Qrels qrels = three_query_qrels();
    // q1: 1/1; q2: 2 of 2 within top 10 -> 1; q3: 0 of 1
    REQUIRE_THAT(recall_at_k(run, qrels, 10), WithinAbs((1.0 + 1.0 + 0.0) / 3.0, 1e-15));
    // k=3: q2 finds only x2 -> 0.5
    REQUIRE_THAT(recall_at_k(run, qrels, 3), WithinAbs((1.0 + 0.5 + 0.0) / 3.0, 1e-15));
    REQUIRE_THAT(recall_at_k(run, qrels, 100), WithinAbs((1.0 + 1.0 + 1.0) / 3.0, 1e-15));

    SECTION("a query absent from the run contributes zero") {
        Run partial;
        partial["q1"] = run["q1"];
        REQUIRE_THAT(recall_at_k(partial, qrels, 10), WithinAbs(1.0 / 3.0, 1e-15));
    }
}

TEST_CASE("metrics are bounded and monotone in k") {
    Rng rng(4);
    Run run;
    Qrels qrels;
    for (int q = 0; q < 12; ++q) {
        const std::string qid = "q" + std::to_string(q);
        for (int d = 0; d < 30; ++d) {
            run[qid].push_back({"d" + std::to_string(d), 30.0 - d});
        }
        qrels[qid] = {"d" + std::to_string(rng.uniform_int(40)),
                      "d" + std::to_string(rng.uniform_int(40))};
    }
    double prev_mrr = 0.0;
    double prev_recall = 0.0;
    for (size_t k = 1; k <= 40; ++k) {
        const double m = mrr_at_k(run, qrels, k);
        const double r = recall_at_k(run, qrels, k);
        REQUIRE(m >= prev_mrr);
        REQUIRE(r >= prev_recall);
        REQUIRE(m >= 0.0);
        REQUIRE(m <= 1.0);
        REQUIRE(r >= 0.0);
        REQUIRE(r <= 1.0);
        prev_mrr = m;
        prev_recall = r;
    }
}

TEST_CASE("TREC run files round-trip and validate") {
    Run run = three_query_run();
    const auto path = (std::filesystem::temp_directory_path() / "lsr_run.trec").string();
    save_trec_run(run, path, "testtag");
    Run loaded = load_trec_run(path);
    REQUIRE(loaded.size() == run.size());
    for (const auto& [qid, hits] : run) {
        REQUIRE(loaded.at(qid).size() == hits.size());
        for (size_t i = 0; i < hits.size(); ++i) {
            REQUIRE(loaded.at(qid)[i].doc_id == hits[i].doc_id);
            REQUIRE(loaded.at(qid)[i].score == hits[i].score);
        }
    }
    SECTION("non-contiguous ranks are rejected") {
        std::ofstream out(path, std::ios::binary);
        out << "q1 Q0 d1 2 5.0 tag\n";
        out.close();
        REQUIRE_THROWS_AS(load_trec_run(path), DataError);
    }
    SECTION("increasing scores are rejected") {
        std::ofstream out(path, std::ios::binary);
        out << "q1 Q0 d1 1 1.0 tag\nq1 Q0 d2 2 2.0 tag\n";
        out.close();
        REQUIRE_THROWS_AS(load_trec_run(path), DataError);
    }
    std::filesystem::remove(path);
}

TEST_CASE("format_metric renders x100 with two decimals") {
    REQUIRE(format_metric(0.2794) == "27.94");
    REQUIRE(format_metric(1.0) == "100.00");
    REQUIRE(format_metric(0.0) == "0.00");
}

TEST_CASE("split_windows covers the sequence with the stated stride") {
    std::vector<uint32_t> ids = {4, 5, 6, 7, 8};
    SECTION("window 2 stride 2") {
        auto w = split_windows(ids, 2, 2);
        REQUIRE(w.size() == 3);
        REQUIRE(w[0] == std::vector<uint32_t>{4, 5});
        REQUIRE(w[2] == std::vector<uint32_t>{8});
    }
    SECTION("overlapping windows") {
        auto w = split_windows(ids, 4, 2);
        REQUIRE(w.size() == 2);
        REQUIRE(w[1] == std::vector<uint32_t>{6, 7, 8});
    }
    SECTION("empty input yields one empty window") {
        auto w = split_windows({}, 4, 2);
        REQUIRE(w.size() == 1);
        REQUIRE(w[0].empty());
    }
    SECTION("stride above window is rejected") {
        REQUIRE_THROWS_AS(split_windows(ids, 2, 3), UsageError);
    }
}

namespace {

// Model whose towers collapse to their head bias: embed = 0 and pos = 0
// make every position's distribution equal the bias row, so window scores
// are (window_length + 1) * relu(bias) over gated terms.
ModelParams planted_eval_model(const Vocabulary& v, const Vec& imp_bias, const Vec& gate_bias) {
    ModelConfig cfg;
    cfg.dim = 4;
    cfg.ffn_dim = 8;
    cfg.n_layers = 1;
    cfg.max_len = 8;
    cfg.vocab_size = v.size();
    cfg.strategy = QueryStrategy::query_tf;
    ModelParams model = init_model(cfg, 1);
    auto plant = [](Tower& tower, const Vec& bias) {
        tower.enc.embed.zero();
        tower.enc.pos.zero();
        std::copy(bias.begin(), bias.end(), tower.head.bias.data.begin());
    };
    plant(model.importance, imp_bias);
    plant(model.gating, gate_bias);
    return model;
}

}  // namespace

TEST_CASE("passage_retrieval_max takes the max over hand-computable windows") {
    Vocabulary v = build_vocab({"x y z"}, 1);
    const uint32_t x = v.index.at("x");
    const uint32_t y = v.index.at("y");
    Vec imp_bias(v.size(), -1.0);
    imp_bias[x] = 1.0;
    imp_bias[y] = 2.0;
    ModelParams model = planted_eval_model(v, imp_bias, Vec(v.size(), -1.0));

    // query-tf on "x y": weights 1 each; window rep weight = (len+1)*bias
    const std::string query = "x y";
    std::vector<std::pair<std::string, std::string>> docs = {
        {"docA", "x x y y x y"},  // windows of 2: {x},{y},{x,y} -> 3, 6, 9
        {"docB", "y"},            // single window {y} -> 4
        {"docC", "z z"},          // no query term -> no score
    };

    TokenSeq qseq = tokenize(query, v, 8);
    SparseVector qrep = represent_query(qseq, model, QueryStrategy::query_tf);

    SECTION("window scores are the hand-traced values") {
        auto scores = window_scores(docs[0].second, qrep, 2, 2, model, v);
        REQUIRE(scores.size() == 3);
        REQUIRE_THAT(scores[0], WithinAbs(3.0, 1e-12));
        REQUIRE_THAT(scores[1], WithinAbs(6.0, 1e-12));
        REQUIRE_THAT(scores[2], WithinAbs(9.0, 1e-12));
    }
    SECTION("document scores are window maxima, ranked") {
        auto hits = passage_retrieval_max(docs, query, 2, 2, model, v, 10);
        REQUIRE(hits.size() == 2);
        REQUIRE(hits[0].doc_id == "docA");
        REQUIRE_THAT(hits[0].score, WithinAbs(9.0, 1e-12));
        REQUIRE(hits[1].doc_id == "docB");
        REQUIRE_THAT(hits[1].score, WithinAbs(4.0, 1e-12));

        // invariant: the reported score equals the max over windows
        for (const auto& hit : hits) {
            for (const auto& [id, text] : docs) {
                if (id != hit.doc_id) {
                    continue;
                }
                double best = 0.0;
                for (double s : window_scores(text, qrep, 2, 2, model, v)) {
                    best = std::max(best, s);
                }
                REQUIRE_THAT(hit.score, WithinAbs(best, 1e-12));
            }
        }
    }
    SECTION("single-window document equals its passage score") {
        auto hits = passage_retrieval_max({{"solo", "x y"}}, query, 8, 4, model, v, 5);
        auto scores = window_scores("x y", qrep, 8, 4, model, v);
        REQUIRE(hits.size() == 1);
        REQUIRE(scores.size() == 1);
        REQUIRE(hits[0].score == scores[0]);
    }
}

TEST_CASE("explain_expansion attributes an expanded term to source positions") {
    Vocabulary v = build_vocab({"pi rho fill1 fill2 tau"}, 1);
    const uint32_t tau = v.index.at("tau");
    ModelConfig cfg;
    cfg.dim = 4;
    cfg.ffn_dim = 8;
    cfg.n_layers = 1;
    cfg.max_len = 8;
    cfg.vocab_size = v.size();
    ModelParams model = init_model(cfg, 42);
    // bias nudges tau's per-position logits positive so it is expanded
    model.gating.head.bias.data[tau] = 2.0;

    const std::string passage = "pi fill1 fill2";
    TokenSeq seq = tokenize(passage, v, 8);

    SECTION("contributions ReLU-sum to the aggregate and rank by logit") {
        AttributionReport report = explain_expansion(passage, tau, model, v, 16);
        REQUIRE(report.term == "tau");
        REQUIRE(report.contributions.size() == seq.length());

        // independent recomputation through the public forward pass
        TowerCache cache = tower_forward(model.gating, seq, true);
        double aggregate = 0.0;
        double best_logit = -1e18;
        std::string best_token;
        for (size_t i = 0; i < seq.length(); ++i) {
            const double logit = cache.token_logits(i, tau);
            aggregate += std::max(0.0, logit);
            if (logit > best_logit) {
                best_logit = logit;
                best_token = v.term(seq.ids[i]);
            }
        }
        REQUIRE_THAT(report.aggregate_logit, WithinAbs(aggregate, 1e-12));
        double relu_sum = 0.0;
        for (const auto& c : report.contributions) {
            relu_sum += std::max(0.0, c.logit);
        }
        REQUIRE_THAT(relu_sum, WithinAbs(aggregate, 1e-12));
        REQUIRE(report.contributions.front().token == best_token);
        for (size_t i = 1; i < report.contributions.size(); ++i) {
            REQUIRE(report.contributions[i - 1].logit >= report.contributions[i].logit);
        }
        REQUIRE(report.probability >= model.config.threshold);
    }
    SECTION("top-n truncation") {
        AttributionReport report = explain_expansion(passage, tau, model, v, 2);
        REQUIRE(report.contributions.size() == 2);
    }
    SECTION("single-position passage gives a single-entry report") {
        AttributionReport report = explain_expansion("", tau, model, v, 5);
        REQUIRE(report.contributions.size() == 1);
        REQUIRE(report.contributions[0].token == "[CLS]");
    }
    SECTION("a term below threshold is not in the expansion set") {
        const uint32_t rho = v.index.at("rho");
        REQUIRE_THROWS_WITH(explain_expansion(passage, rho, model, v, 5),
                            Catch::Matchers::ContainsSubstring("not in expansion set"));
    }
    SECTION("a literal term is not in the expansion set") {
        const uint32_t pi = v.index.at("pi");
        model.gating.head.bias.data[pi] = 3.0;
        REQUIRE_THROWS_WITH(explain_expansion(passage, pi, model, v, 5),
                            Catch::Matchers::ContainsSubstring("not in expansion set"));
    }
}

TEST_CASE("make_triples pairs relevant passages with hard and random negatives") {
    SynthSpec spec;
    spec.n_passages = 60;
    spec.n_queries = 10;
    spec.seed = 3;
    SynthCorpus corpus = generate_mismatch_corpus(spec);
    std::vector<std::string> texts;
    for (const auto& [id, text] : corpus.passages) {
        texts.push_back(text);
    }
    for (const auto& pair : corpus.pairs) {
        texts.push_back(pair.target);
    }
    Vocabulary v = build_vocab(texts, 1);

    auto triples = make_triples(corpus.passages, corpus.queries, corpus.qrels, v, 3, 11);
    REQUIRE(!triples.empty());

    std::map<std::string, std::string> text_by_id(corpus.passages.begin(), corpus.passages.end());
    std::map<std::string, std::string> query_text(corpus.queries.begin(), corpus.queries.end());
    for (const auto& t : triples) {
        REQUIRE(!t.query.empty());
        REQUIRE(t.positive != t.negative);
    }
    // positives are exactly the judged passages of their query
    for (const auto& t : triples) {
        std::string qid;
        for (const auto& [id, text] : corpus.queries) {
            if (text == t.query) {
                qid = id;
            }
        }
        REQUIRE(!qid.empty());
        bool pos_is_relevant = false;
        bool neg_is_relevant = false;
        for (const auto& pid : corpus.qrels.at(qid)) {
            pos_is_relevant |= text_by_id.at(pid) == t.positive;
            neg_is_relevant |= text_by_id.at(pid) == t.negative;
        }
        REQUIRE(pos_is_relevant);
        REQUIRE_FALSE(neg_is_relevant);
    }
    // deterministic given the seed
    auto again = make_triples(corpus.passages, corpus.queries, corpus.qrels, v, 3, 11);
    REQUIRE(again.size() == triples.size());
    for (size_t i = 0; i < triples.size(); ++i) {
        REQUIRE(again[i].query == triples[i].query);
        REQUIRE(again[i].negative == triples[i].negative);
    }
}

TEST_CASE("make_devset pools relevant, BM25 and random passages") {
    SynthSpec spec;
    spec.n_passages = 80;
    spec.n_queries = 12;
    spec.seed = 9;
    SynthCorpus corpus = generate_mismatch_corpus(spec);
    std::vector<std::string> texts;
    for (const auto& [id, text] : corpus.passages) {
        texts.push_back(text);
    }
    Vocabulary v = build_vocab(texts, 1);

    DevSet dev = make_devset(corpus.passages, corpus.queries, corpus.qrels, v, 5, 10, 15, 21);
    REQUIRE(dev.queries.size() == 5);
    REQUIRE(dev.qrels.size() == 5);
    std::set<std::string> pool_ids;
    for (const auto& [id, text] : dev.passages) {
        pool_ids.insert(id);
    }
    for (const auto& [qid, relevant] : dev.qrels) {
        for (const auto& pid : relevant) {
            REQUIRE(pool_ids.count(pid) == 1);  // every judged passage is present
        }
    }
    REQUIRE(dev.passages.size() <= corpus.passages.size());
    REQUIRE(dev.passages.size() >= 5);
}

TEST_CASE("run_experiment produces a deterministic bounded report") {
    nlohmann::json config = {
        {"seed", 1234},
        {"threads", 2},
        {"corpus",
         {{"synthetic",
           {{"passages", 60}, {"queries", 10}, {"fillers", 12}, {"mismatch_fraction", 0.5},
            {"seed", 5}}}}},
        {"model", {{"d", 8}, {"d_ff", 16}, {"n_layers", 1}, {"max_len", 16}}},
        {"train",
         {{"lr", 2e-3}, {"batch", 4}, {"phase1_iters", 30}, {"phase2_iters", 40},
          {"negatives_per_query", 2}}},
        {"systems",
         nlohmann::json::array({{{"name", "bm25"}, {"kind", "bm25"}},
                                {{"name", "tf"}, {"kind", "tf"}},
                                {{"name", "literal"},
                                 {"kind", "model"},
                                 {"mode", "literal-only"},
                                 {"strategy", "symmetric"}}})},
        {"eval", {{"top_k", 50}, {"mrr_k", 10}, {"recall_ks", {10, 50}}}},
    };

    nlohmann::json report = run_experiment(config);
    REQUIRE(report.contains("config_hash"));
    REQUIRE(report["systems"].size() == 3);
    for (const auto& [name, metrics] : report["systems"].items()) {
        const double mrr = metrics.at("mrr@10").get<double>();
        REQUIRE(mrr >= 0.0);
        REQUIRE(mrr <= 1.0);
        const double recall = metrics.at("recall@50").get<double>();
        REQUIRE(recall >= 0.0);
        REQUIRE(recall <= 1.0);
    }

    nlohmann::json again = run_experiment(config);
    again.erase("wall_clock_sec");
    nlohmann::json first = report;
    first.erase("wall_clock_sec");
    REQUIRE(first == again);
}
