// lsr - learned sparse retrieval toolkit.
//
// Subcommands cover the full pipeline: vocabulary construction, two-phase
// training, sparse representation, inverted-index build/search, a BM25
// baseline, TREC-style evaluation, dataset utilities, expansion
// attribution and end-to-end experiments.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lsr/eval.hpp"
#include "lsr/experiment.hpp"
#include "lsr/index.hpp"
#include "lsr/model.hpp"
#include "lsr/synth.hpp"
#include "lsr/text.hpp"
#include "lsr/training.hpp"

namespace {

using nlohmann::json;

struct GlobalOpts {
    uint64_t seed = 42;
    int threads = 1;
    std::string config_path;

    json config() const {
        if (config_path.empty()) {
            return json::object();
        }
        std::ifstream in(config_path, std::ios::binary);
        if (!in) {
            throw lsr::DataError("cannot open file: " + config_path);
        }
        json cfg = json::parse(in, nullptr, /*allow_exceptions=*/false);
        if (cfg.is_discarded()) {
            throw lsr::DataError("bad JSON config: " + config_path);
        }
        return cfg;
    }
};

lsr::ModelConfig model_config(const GlobalOpts& g, uint32_t vocab_size) {
    return lsr::model_config_from_json(g.config().value("model", json::object()), vocab_size);
}

lsr::TrainConfig train_config(const GlobalOpts& g) {
    return lsr::train_config_from_json(g.config().value("train", json::object()), g.seed);
}

// Sparse representation file: TSV `id<TAB>term:weight term:weight ...`
// with terms spelled out, one record per input text.
void save_reps_tsv(const std::vector<std::pair<std::string, lsr::SparseVector>>& reps,
                   const lsr::Vocabulary& vocab, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw lsr::DataError("cannot write file: " + path);
    }
    char buf[64];
    for (const auto& [id, vec] : reps) {
        out << id << '\t';
        bool first = true;
        for (const auto& e : vec.entries) {
            std::snprintf(buf, sizeof(buf), "%.17g", e.weight);
            out << (first ? "" : " ") << vocab.term(e.term) << ':' << buf;
            first = false;
        }
        out << '\n';
    }
}

std::vector<std::pair<std::string, lsr::SparseVector>> load_reps_tsv(
    const std::string& path, const lsr::Vocabulary& vocab) {
    std::vector<std::pair<std::string, lsr::SparseVector>> reps;
    for (auto& rec : lsr::read_tsv(path, 2)) {
        lsr::SparseVector vec;
        vec.dim = vocab.size();
        std::istringstream ss(rec[1]);
        std::string item;
        while (ss >> item) {
            const size_t colon = item.rfind(':');
            if (colon == std::string::npos) {
                throw lsr::DataError(path + ": bad term:weight entry '" + item + "'");
            }
            const std::string term = item.substr(0, colon);
            if (!vocab.contains(term)) {
                throw lsr::DataError(path + ": term not in vocabulary: " + term);
            }
            vec.entries.push_back({vocab.index.at(term), std::stod(item.substr(colon + 1))});
        }
        std::sort(vec.entries.begin(), vec.entries.end(),
                  [](const auto& a, const auto& b) { return a.term < b.term; });
        reps.emplace_back(std::move(rec[0]), std::move(vec));
    }
    return reps;
}

void write_json(const json& payload, const std::string& path) {
    if (path.empty() || path == "-") {
        std::cout << payload.dump(2) << '\n';
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw lsr::DataError("cannot write file: " + path);
    }
    out << payload.dump(2) << '\n';
}

lsr::Run search_to_run(const std::vector<std::pair<std::string, std::string>>& queries,
                       const std::function<std::vector<lsr::ScoredHit>(const std::string&)>& fn,
                       int threads) {
    std::vector<std::vector<lsr::ScoredHit>> hits(queries.size());
    lsr::parallel_for(queries.size(), threads, [&](size_t begin, size_t end) {
        for (size_t i = begin; i < end; ++i) {
            hits[i] = fn(queries[i].second);
        }
    });
    lsr::Run run;
    for (size_t i = 0; i < queries.size(); ++i) {
        run[queries[i].first] = std::move(hits[i]);
    }
    return run;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lsr - learned sparse retrieval toolkit"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--seed", g.seed, "global random seed");
    app.add_option("--threads", g.threads, "worker threads for representation and search");
    app.add_option("--config", g.config_path, "JSON config with model/train sections");

    // ---------------- vocab build ----------------
    auto* vocab_cmd = app.add_subcommand("vocab", "vocabulary commands")->require_subcommand(1);
    auto* vocab_build = vocab_cmd->add_subcommand("build", "build a vocabulary from a corpus");
    struct {
        std::string corpus;
        std::string pairs;
        std::string out;
        size_t min_freq = 1;
    } vb;
    vocab_build->add_option("--corpus", vb.corpus, "corpus TSV (id<TAB>text)")->required();
    vocab_build->add_option("--pairs", vb.pairs,
                            "parallel pairs TSV whose targets join the vocabulary");
    vocab_build->add_option("--out", vb.out, "vocabulary file to write")->required();
    vocab_build->add_option("--min-freq", vb.min_freq, "minimum term frequency");

    // ---------------- train ----------------
    auto* train_cmd = app.add_subcommand("train", "training phases")->require_subcommand(1);
    struct {
        std::string pairs;
        std::string triples;
        std::string vocab;
        std::string model_in;
        std::string out;
        std::string loss_curve;
        std::string mode = "literal-only";
        std::string strategy = "symmetric";
        int iters = -1;
    } tr;
    auto* train_gating_cmd =
        train_cmd->add_subcommand("gating", "fit the gating controller on parallel pairs");
    train_gating_cmd->add_option("--pairs", tr.pairs, "parallel pairs TSV")->required();
    train_gating_cmd->add_option("--vocab", tr.vocab, "vocabulary file")->required();
    train_gating_cmd->add_option("--out", tr.out, "checkpoint to write")->required();
    train_gating_cmd->add_option("--model-in", tr.model_in, "checkpoint to continue from");
    train_gating_cmd->add_option("--loss-curve", tr.loss_curve, "loss curve CSV to write");
    train_gating_cmd->add_option("--iters", tr.iters, "override phase-1 iterations");
    train_gating_cmd->add_option("--strategy", tr.strategy, "query strategy recorded in the model");

    auto* train_joint_cmd =
        train_cmd->add_subcommand("joint", "fit ranking jointly with frozen gating");
    train_joint_cmd->add_option("--triples", tr.triples, "training triples TSV")->required();
    train_joint_cmd->add_option("--pairs", tr.pairs, "parallel pairs TSV (expansion mode)");
    train_joint_cmd->add_option("--vocab", tr.vocab, "vocabulary file")->required();
    train_joint_cmd->add_option("--model-in", tr.model_in, "checkpoint to continue from");
    train_joint_cmd->add_option("--out", tr.out, "checkpoint to write")->required();
    train_joint_cmd->add_option("--loss-curve", tr.loss_curve, "loss curve CSV to write");
    train_joint_cmd->add_option("--iters", tr.iters, "override phase-2 iterations");
    train_joint_cmd->add_option("--mode", tr.mode, "literal-only | expansion-enhanced");
    train_joint_cmd->add_option("--strategy", tr.strategy,
                                "query-tf | symmetric | asymmetric");

    // ---------------- represent ----------------
    auto* represent_cmd = app.add_subcommand("represent", "map texts to sparse vectors");
    struct {
        std::string model;
        std::string vocab;
        std::string input;
        std::string out;
        std::string as = "passage";
        std::string mode;
        std::string strategy;
    } rp;
    represent_cmd->add_option("--model", rp.model, "model checkpoint")->required();
    represent_cmd->add_option("--vocab", rp.vocab, "vocabulary file")->required();
    represent_cmd->add_option("--input", rp.input, "TSV id<TAB>text")->required();
    represent_cmd->add_option("--out", rp.out, "sparse representation TSV")->required();
    represent_cmd->add_option("--as", rp.as, "passage | query");
    represent_cmd->add_option("--mode", rp.mode, "override gating mode");
    represent_cmd->add_option("--strategy", rp.strategy, "override query strategy");

    // ---------------- index ----------------
    auto* index_cmd = app.add_subcommand("index", "inverted index commands")->require_subcommand(1);
    struct {
        std::string reps;
        std::string vocab;
        std::string index;
        std::string queries;
        std::string out;
        std::string tag = "lsr";
        size_t k = 10;
    } ix;
    auto* index_build = index_cmd->add_subcommand("build", "build an index from representations");
    bool quantize_u8 = false;
    index_build->add_option("--reps", ix.reps, "sparse representation TSV")->required();
    index_build->add_option("--vocab", ix.vocab, "vocabulary file")->required();
    index_build->add_option("--out", ix.out, "index file to write")->required();
    index_build->add_flag("--quantize-u8", quantize_u8,
                          "snap posting weights to 255 impact levels (lossy)");
    auto* index_search = index_cmd->add_subcommand("search", "top-k search with query vectors");
    index_search->add_option("--index", ix.index, "index file")->required();
    index_search->add_option("--queries", ix.queries, "query representation TSV")->required();
    index_search->add_option("--vocab", ix.vocab, "vocabulary file")->required();
    index_search->add_option("--k", ix.k, "results per query");
    index_search->add_option("--out", ix.out, "TREC run file to write")->required();
    index_search->add_option("--tag", ix.tag, "run tag");

    // ---------------- bm25 ----------------
    auto* bm25_cmd = app.add_subcommand("bm25", "BM25 baseline")->require_subcommand(1);
    struct {
        std::string corpus;
        std::string vocab;
        std::string index;
        std::string queries;
        std::string out;
        std::string tag = "bm25";
        size_t k = 10;
        double k1 = 1.2;
        double b = 0.75;
    } bm;
    auto* bm25_build = bm25_cmd->add_subcommand("index", "build a frequency index");
    bm25_build->add_option("--corpus", bm.corpus, "corpus TSV")->required();
    bm25_build->add_option("--vocab", bm.vocab, "vocabulary file")->required();
    bm25_build->add_option("--out", bm.out, "index file to write")->required();
    auto* bm25_search_cmd = bm25_cmd->add_subcommand("search", "rank with BM25");
    bm25_search_cmd->add_option("--index", bm.index, "index file")->required();
    bm25_search_cmd->add_option("--queries", bm.queries, "queries TSV (qid<TAB>text)")->required();
    bm25_search_cmd->add_option("--vocab", bm.vocab, "vocabulary file")->required();
    bm25_search_cmd->add_option("--k", bm.k, "results per query");
    bm25_search_cmd->add_option("--k1", bm.k1, "BM25 k1");
    bm25_search_cmd->add_option("--b", bm.b, "BM25 b");
    bm25_search_cmd->add_option("--out", bm.out, "TREC run file to write")->required();
    bm25_search_cmd->add_option("--tag", bm.tag, "run tag");

    // ---------------- eval run ----------------
    auto* eval_cmd = app.add_subcommand("eval", "evaluation")->require_subcommand(1);
    auto* eval_run = eval_cmd->add_subcommand("run", "score a TREC run against qrels");
    struct {
        std::string run;
        std::string qrels;
        std::vector<size_t> ks = {10, 100, 1000};
        size_t mrr_k = 10;
        std::string out;
    } ev;
    eval_run->add_option("--run", ev.run, "TREC run file")->required();
    eval_run->add_option("--qrels", ev.qrels, "qrels TSV (qid<TAB>pid)")->required();
    eval_run->add_option("--k", ev.ks, "recall cutoffs");
    eval_run->add_option("--mrr-k", ev.mrr_k, "MRR cutoff");
    eval_run->add_option("--out", ev.out, "write metrics JSON here instead of stdout");

    // ---------------- make-devset ----------------
    auto* devset_cmd = app.add_subcommand("make-devset", "sample a BM25-pooled dev set");
    struct {
        std::string corpus;
        std::string queries;
        std::string qrels;
        std::string vocab;
        std::string out_prefix;
        size_t num_queries = 100;
        size_t pool_depth = 100;
        size_t fill = 1000;
    } ds;
    devset_cmd->add_option("--corpus", ds.corpus, "corpus TSV")->required();
    devset_cmd->add_option("--queries", ds.queries, "queries TSV")->required();
    devset_cmd->add_option("--qrels", ds.qrels, "qrels TSV")->required();
    devset_cmd->add_option("--vocab", ds.vocab, "vocabulary file")->required();
    devset_cmd->add_option("--num-queries", ds.num_queries, "queries to sample");
    devset_cmd->add_option("--pool-depth", ds.pool_depth, "BM25 pool depth per query");
    devset_cmd->add_option("--fill", ds.fill, "random passages to add");
    devset_cmd->add_option("--out-prefix", ds.out_prefix, "writes <prefix>.{passages,queries,qrels}.tsv")
        ->required();

    // ---------------- make-triples ----------------
    auto* triples_cmd = app.add_subcommand("make-triples", "build training triples");
    struct {
        std::string corpus;
        std::string queries;
        std::string qrels;
        std::string vocab;
        std::string out;
        size_t negatives = 4;
    } mt;
    triples_cmd->add_option("--corpus", mt.corpus, "corpus TSV")->required();
    triples_cmd->add_option("--queries", mt.queries, "queries TSV")->required();
    triples_cmd->add_option("--qrels", mt.qrels, "qrels TSV")->required();
    triples_cmd->add_option("--vocab", mt.vocab, "vocabulary file")->required();
    triples_cmd->add_option("--negatives", mt.negatives, "BM25 negatives per query");
    triples_cmd->add_option("--out", mt.out, "triples TSV to write")->required();

    // ---------------- explain ----------------
    auto* explain_cmd = app.add_subcommand("explain", "attribute an expanded term");
    struct {
        std::string model;
        std::string vocab;
        std::string passage;
        std::string term;
        size_t top = 5;
    } ex;
    explain_cmd->add_option("--model", ex.model, "model checkpoint")->required();
    explain_cmd->add_option("--vocab", ex.vocab, "vocabulary file")->required();
    explain_cmd->add_option("--passage", ex.passage, "passage text")->required();
    explain_cmd->add_option("--term", ex.term, "expanded term to explain")->required();
    explain_cmd->add_option("--top", ex.top, "contributors to show");

    // ---------------- experiment ----------------
    auto* experiment_cmd = app.add_subcommand("experiment", "run an end-to-end experiment");
    struct {
        std::string config;
        std::string out;
    } xp;
    experiment_cmd->add_option("--config", xp.config, "experiment JSON config")->required();
    experiment_cmd->add_option("--out", xp.out, "report JSON path (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*vocab_build) {
            auto docs = lsr::load_corpus_tsv(vb.corpus);
            std::vector<std::string> texts;
            texts.reserve(docs.size());
            for (auto& [id, text] : docs) {
                texts.push_back(std::move(text));
            }
            if (!vb.pairs.empty()) {
                for (auto& pair : lsr::load_pairs_tsv(vb.pairs)) {
                    texts.push_back(std::move(pair.target));
                }
            }
            lsr::Vocabulary vocab = lsr::build_vocab(texts, vb.min_freq);
            lsr::save_vocab(vocab, vb.out);
            std::cout << "vocabulary: " << vocab.size() << " terms -> " << vb.out << '\n';
        } else if (*train_gating_cmd) {
            lsr::Vocabulary vocab = lsr::load_vocab(tr.vocab);
            lsr::TrainConfig tc = train_config(g);
            if (tr.iters >= 0) {
                tc.phase1_iters = tr.iters;
            }
            lsr::ModelParams model = tr.model_in.empty()
                                         ? [&] {
                                               lsr::ModelConfig mc = model_config(g, vocab.size());
                                               mc.mode = lsr::GateMode::expansion_enhanced;
                                               mc.strategy = lsr::parse_strategy(tr.strategy);
                                               return lsr::init_model(mc, g.seed);
                                           }()
                                         : lsr::load_model(tr.model_in);
            auto pairs = lsr::load_pairs_tsv(tr.pairs);
            lsr::LossCurve curve = lsr::train_gating(pairs, tc, model, vocab);
            lsr::save_model(model, tr.out);
            if (!tr.loss_curve.empty()) {
                curve.save_csv(tr.loss_curve);
            }
            std::cout << "gating trained on " << pairs.size() << " pairs, " << tc.phase1_iters
                      << " iterations -> " << tr.out << '\n';
        } else if (*train_joint_cmd) {
            lsr::Vocabulary vocab = lsr::load_vocab(tr.vocab);
            lsr::TrainConfig tc = train_config(g);
            if (tr.iters >= 0) {
                tc.phase2_iters = tr.iters;
            }
            lsr::ModelParams model = tr.model_in.empty()
                                         ? [&] {
                                               lsr::ModelConfig mc = model_config(g, vocab.size());
                                               return lsr::init_model(mc, g.seed);
                                           }()
                                         : lsr::load_model(tr.model_in);
            model.config.mode = lsr::parse_gate_mode(tr.mode);
            model.config.strategy = lsr::parse_strategy(tr.strategy);
            if (model.config.strategy == lsr::QueryStrategy::asymmetric && !model.query_tower) {
                lsr::Rng rng(g.seed + 17);
                model.query_tower =
                    lsr::init_tower(model.config.dim, model.config.ffn_dim, model.config.n_layers,
                                    model.config.max_len, model.config.vocab_size, rng);
            }
            auto triples = lsr::load_triples_tsv(tr.triples);
            std::vector<lsr::ParallelPair> pairs;
            if (!tr.pairs.empty()) {
                pairs = lsr::load_pairs_tsv(tr.pairs);
            }
            lsr::LossCurve curve = lsr::train_joint(triples, pairs, tc, model, vocab);
            lsr::save_model(model, tr.out);
            if (!tr.loss_curve.empty()) {
                curve.save_csv(tr.loss_curve);
            }
            std::cout << "joint training on " << triples.size() << " triples, " << tc.phase2_iters
                      << " iterations -> " << tr.out << '\n';
        } else if (*represent_cmd) {
            lsr::Vocabulary vocab = lsr::load_vocab(rp.vocab);
            lsr::ModelParams model = lsr::load_model(rp.model);
            if (!rp.mode.empty()) {
                model.config.mode = lsr::parse_gate_mode(rp.mode);
            }
            if (!rp.strategy.empty()) {
                model.config.strategy = lsr::parse_strategy(rp.strategy);
            }
            if (rp.as != "passage" && rp.as != "query") {
                throw lsr::UsageError("--as must be passage or query");
            }
            auto inputs = lsr::load_corpus_tsv(rp.input);
            std::vector<std::pair<std::string, lsr::SparseVector>> reps(inputs.size());
            lsr::parallel_for(inputs.size(), g.threads, [&](size_t begin, size_t end) {
                for (size_t i = begin; i < end; ++i) {
                    lsr::TokenSeq seq =
                        lsr::tokenize(inputs[i].second, vocab, model.config.max_len);
                    reps[i] = {inputs[i].first,
                               rp.as == "passage"
                                   ? lsr::represent_passage(seq, model, model.config.mode)
                                   : lsr::represent_query(seq, model, model.config.strategy)};
                }
            });
            save_reps_tsv(reps, vocab, rp.out);
            std::cout << "represented " << reps.size() << " texts -> " << rp.out << '\n';
        } else if (*index_build) {
            lsr::Vocabulary vocab = lsr::load_vocab(ix.vocab);
            auto reps = load_reps_tsv(ix.reps, vocab);
            lsr::InvertedIndex idx = lsr::build_index(reps, vocab.size());
            if (quantize_u8) {
                idx.quantize_weights_u8();
            }
            lsr::save_index(idx, ix.out);
            std::cout << "indexed " << idx.doc_count() << " documents -> " << ix.out << '\n';
        } else if (*index_search) {
            lsr::Vocabulary vocab = lsr::load_vocab(ix.vocab);
            lsr::InvertedIndex idx = lsr::load_index(ix.index);
            auto qreps = load_reps_tsv(ix.queries, vocab);
            lsr::Run run;
            for (const auto& [qid, vec] : qreps) {
                run[qid] = lsr::search(idx, vec, ix.k);
            }
            lsr::save_trec_run(run, ix.out, ix.tag);
            std::cout << "searched " << qreps.size() << " queries -> " << ix.out << '\n';
        } else if (*bm25_build) {
            lsr::Vocabulary vocab = lsr::load_vocab(bm.vocab);
            auto corpus = lsr::load_corpus_tsv(bm.corpus);
            lsr::InvertedIndex idx = lsr::bm25_index(corpus, vocab);
            lsr::save_index(idx, bm.out);
            std::cout << "indexed " << idx.doc_count() << " documents -> " << bm.out << '\n';
        } else if (*bm25_search_cmd) {
            lsr::Vocabulary vocab = lsr::load_vocab(bm.vocab);
            lsr::InvertedIndex idx = lsr::load_index(bm.index);
            auto queries = lsr::load_queries_tsv(bm.queries);
            lsr::Run run = search_to_run(
                queries,
                [&](const std::string& text) {
                    return lsr::bm25_search(idx, lsr::tokenize_full(text, vocab), bm.k, bm.k1,
                                            bm.b);
                },
                g.threads);
            lsr::save_trec_run(run, bm.out, bm.tag);
            std::cout << "searched " << queries.size() << " queries -> " << bm.out << '\n';
        } else if (*eval_run) {
            lsr::Run run = lsr::load_trec_run(ev.run);
            lsr::Qrels qrels = lsr::load_qrels_tsv(ev.qrels);
            size_t skipped = 0;
            json metrics;
            metrics["mrr@" + std::to_string(ev.mrr_k)] =
                lsr::mrr_at_k(run, qrels, ev.mrr_k, &skipped);
            for (size_t k : ev.ks) {
                metrics["recall@" + std::to_string(k)] = lsr::recall_at_k(run, qrels, k);
            }
            if (skipped > 0) {
                std::cerr << "warning: " << skipped << " run queries without judgments\n";
            }
            for (auto& [name, value] : metrics.items()) {
                std::cout << name << "  " << lsr::format_metric(value.get<double>()) << '\n';
            }
            if (!ev.out.empty()) {
                write_json(metrics, ev.out);
            }
        } else if (*devset_cmd) {
            lsr::Vocabulary vocab = lsr::load_vocab(ds.vocab);
            lsr::DevSet dev = lsr::make_devset(
                lsr::load_corpus_tsv(ds.corpus), lsr::load_queries_tsv(ds.queries),
                lsr::load_qrels_tsv(ds.qrels), vocab, ds.num_queries, ds.pool_depth, ds.fill,
                g.seed);
            lsr::save_corpus_tsv(dev.passages, ds.out_prefix + ".passages.tsv");
            lsr::save_corpus_tsv(dev.queries, ds.out_prefix + ".queries.tsv");
            std::ofstream qr(ds.out_prefix + ".qrels.tsv", std::ios::binary);
            for (const auto& [qid, rel] : dev.qrels) {
                for (const auto& pid : rel) {
                    qr << qid << '\t' << pid << '\n';
                }
            }
            std::cout << "devset: " << dev.passages.size() << " passages, " << dev.queries.size()
                      << " queries -> " << ds.out_prefix << ".*\n";
        } else if (*triples_cmd) {
            lsr::Vocabulary vocab = lsr::load_vocab(mt.vocab);
            auto triples = lsr::make_triples(lsr::load_corpus_tsv(mt.corpus),
                                             lsr::load_queries_tsv(mt.queries),
                                             lsr::load_qrels_tsv(mt.qrels), vocab, mt.negatives,
                                             g.seed);
            lsr::save_triples_tsv(triples, mt.out);
            std::cout << "wrote " << triples.size() << " triples -> " << mt.out << '\n';
        } else if (*explain_cmd) {
            lsr::Vocabulary vocab = lsr::load_vocab(ex.vocab);
            lsr::ModelParams model = lsr::load_model(ex.model);
            if (!vocab.contains(ex.term)) {
                throw lsr::DataError("term not in vocabulary: " + ex.term);
            }
            lsr::AttributionReport report = lsr::explain_expansion(
                ex.passage, vocab.index.at(ex.term), model, vocab, ex.top);
            std::printf("term '%s' expanded with probability %.4f (aggregate logit %.4f)\n",
                        report.term.c_str(), report.probability, report.aggregate_logit);
            for (const auto& c : report.contributions) {
                std::printf("  %-16s pos %-3zu logit %+.4f\n", c.token.c_str(), c.position,
                            c.logit);
            }
        } else if (*experiment_cmd) {
            std::ifstream in(xp.config, std::ios::binary);
            if (!in) {
                throw lsr::DataError("cannot open file: " + xp.config);
            }
            json config = json::parse(in, nullptr, /*allow_exceptions=*/false);
            if (config.is_discarded()) {
                throw lsr::DataError("bad JSON config: " + xp.config);
            }
            if (!config.contains("seed")) {
                config["seed"] = g.seed;
            }
            if (!config.contains("threads")) {
                config["threads"] = g.threads;
            }
            json report = lsr::run_experiment(config);
            write_json(report, xp.out);
            if (!xp.out.empty()) {
                for (const auto& [name, metrics] : report["systems"].items()) {
                    std::cout << name << ":";
                    for (const auto& [metric, value] : metrics.items()) {
                        std::cout << "  " << metric << "="
                                  << lsr::format_metric(value.get<double>());
                    }
                    std::cout << '\n';
                }
            }
        }
    } catch (const lsr::UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const lsr::NumericError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const lsr::DataError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
