#pragma once

// Losses and the two-phase training schedule: the gating controller is
// fit first on parallel pairs (binary cross-entropy over the vocabulary),
// then frozen while the importance tower trains on ranking triples.

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "lsr/common.hpp"
#include "lsr/model.hpp"
#include "lsr/numerics.hpp"
#include "lsr/text.hpp"

namespace lsr {

// ----------------------------------------------------------------------
// Data types and loaders
// ----------------------------------------------------------------------
struct TrainingTriple {
    std::string query;
    std::string positive;
    std::string negative;
};

struct ParallelPair {
    std::string passage;
    std::string target;
    std::string kind;  // passage2query | summarization
};

inline std::vector<TrainingTriple> load_triples_tsv(const std::string& path) {
    std::vector<TrainingTriple> triples;
    for (auto& rec : read_tsv(path, 3)) {
        triples.push_back({std::move(rec[0]), std::move(rec[1]), std::move(rec[2])});
    }
    return triples;
}

inline void save_triples_tsv(const std::vector<TrainingTriple>& triples, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write file: " + path);
    }
    for (const auto& t : triples) {
        out << t.query << '\t' << t.positive << '\t' << t.negative << '\n';
    }
}

inline std::vector<ParallelPair> load_pairs_tsv(const std::string& path) {
    std::vector<ParallelPair> pairs;
    for (auto& rec : read_tsv(path, 3)) {
        if (rec[2] != "passage2query" && rec[2] != "summarization") {
            throw DataError("unknown pair kind: " + rec[2]);
        }
        pairs.push_back({std::move(rec[0]), std::move(rec[1]), std::move(rec[2])});
    }
    return pairs;
}

inline void save_pairs_tsv(const std::vector<ParallelPair>& pairs, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write file: " + path);
    }
    for (const auto& p : pairs) {
        out << p.passage << '\t' << p.target << '\t' << p.kind << '\n';
    }
}

struct TrainConfig {
    double lr = 2e-3;          // the downsized encoder wants a larger step than BERT scale
    int batch = 8;
    int phase1_iters = 2000;   // gating controller, BCE
    int phase2_iters = 5000;   // joint, ranking
    double lambda1 = 1e-3;     // BCE weight for terms outside the target
    double lambda2 = 1.0;      // BCE weight for target terms
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    uint64_t seed = 0;
    bool unfreeze_gating = false;  // off-schedule: let ranking reach the gating tower
};

struct LossCurve {
    std::vector<std::pair<int, double>> points;  // (iteration, batch-mean loss)

    void save_csv(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) {
            throw DataError("cannot write file: " + path);
        }
        out << "iter,loss\n";
        for (const auto& [it, loss] : points) {
            out << it << ',' << loss << '\n';
        }
    }
};

// ----------------------------------------------------------------------
// Ranking loss: negative log likelihood of the positive passage under a
// two-way softmax over dot-product similarities. Gradients are reported
// w.r.t. the dense pre-mask importance of each representation, i.e. as
// (term, grad) pairs over each support (zero elsewhere).
// ----------------------------------------------------------------------
using SparseGrad = std::vector<std::pair<uint32_t, double>>;

struct RankLossResult {
    double loss = 0.0;
    double score_pos = 0.0;
    double score_neg = 0.0;
    SparseGrad dquery;
    SparseGrad dpos;
    SparseGrad dneg;
};

inline double sparse_weight_at(const SparseVector& v, uint32_t term) {
    auto it = std::lower_bound(v.entries.begin(), v.entries.end(), term,
                               [](const SparseVector::Entry& e, uint32_t t) { return e.term < t; });
    return (it != v.entries.end() && it->term == term) ? it->weight : 0.0;
}

inline RankLossResult rank_loss(const SparseVector& query, const SparseVector& pos,
                                const SparseVector& neg) {
    RankLossResult r;
    r.score_pos = dot(query, pos);
    r.score_neg = dot(query, neg);
    const double margin = r.score_neg - r.score_pos;
    r.loss = softplus(margin);          // -log softmax, stabilized
    const double coeff = sigmoid(margin);  // dL/d(score_neg) = -dL/d(score_pos)

    r.dquery.reserve(query.nnz());
    for (const auto& e : query.entries) {
        const double g = -coeff * sparse_weight_at(pos, e.term) + coeff * sparse_weight_at(neg, e.term);
        r.dquery.emplace_back(e.term, g);
    }
    r.dpos.reserve(pos.nnz());
    for (const auto& e : pos.entries) {
        r.dpos.emplace_back(e.term, -coeff * sparse_weight_at(query, e.term));
    }
    r.dneg.reserve(neg.nnz());
    for (const auto& e : neg.entries) {
        r.dneg.emplace_back(e.term, coeff * sparse_weight_at(query, e.term));
    }
    return r;
}

// ----------------------------------------------------------------------
// Expansion loss: weighted binary cross-entropy of the dense gating
// probabilities against the target bag of words. Probabilities touching
// {0,1} are clamped to [eps, 1-eps]; clamped coordinates get zero
// gradient (the clamp is flat).
// ----------------------------------------------------------------------
struct ExpansionLossResult {
    double loss = 0.0;
    Vec dprobs;  // dL/dG, dense over the vocabulary
};

inline ExpansionLossResult expansion_loss(const Vec& gate_probs, const BowVector& target,
                                          double lambda1, double lambda2) {
    constexpr double kEps = 1e-12;
    ExpansionLossResult r;
    r.dprobs.assign(gate_probs.size(), 0.0);
    for (uint32_t t = 0; t < gate_probs.size(); ++t) {
        const double raw = gate_probs[t];
        const double g = std::min(1.0 - kEps, std::max(kEps, raw));
        const bool clamped = g != raw;
        if (target.contains(t)) {
            r.loss -= lambda2 * std::log(g);
            if (!clamped) {
                r.dprobs[t] = -lambda2 / g;
            }
        } else {
            r.loss -= lambda1 * std::log1p(-g);
            if (!clamped) {
                r.dprobs[t] = lambda1 / (1.0 - g);
            }
        }
    }
    return r;
}

inline double joint_loss(double rank, double expansion) {
    return rank + expansion;
}

// ----------------------------------------------------------------------
// Optimizer wiring: flat views over a model's trainable tensors.
// ----------------------------------------------------------------------
struct TensorSet {
    std::vector<Matrix*> tensors;
    size_t total = 0;

    void add(Matrix& m) {
        tensors.push_back(&m);
        total += m.size();
    }
};

template <typename Params>
TensorSet collect_tensors(Params& p) {
    TensorSet set;
    p.for_each_tensor("", [&](const std::string&, Matrix& m) { set.add(m); });
    return set;
}

inline Vec flatten(const TensorSet& set) {
    Vec flat;
    flat.reserve(set.total);
    for (const Matrix* m : set.tensors) {
        flat.insert(flat.end(), m->data.begin(), m->data.end());
    }
    return flat;
}

inline void unflatten(const Vec& flat, TensorSet& set) {
    size_t offset = 0;
    for (Matrix* m : set.tensors) {
        std::copy(flat.begin() + offset, flat.begin() + offset + m->size(), m->data.begin());
        offset += m->size();
    }
}

// One Adam step over a paired (params, grads) tensor list.
inline void adam_step_tensors(TensorSet& params, const TensorSet& grads, AdamState& state,
                              const TrainConfig& cfg) {
    if (params.total != grads.total || params.total != state.m.size()) {
        throw UsageError("adam_step_tensors: shape mismatch");
    }
    // validate up front so a mid-step failure cannot leave params half-updated
    for (const Matrix* g : grads.tensors) {
        for (double x : g->data) {
            if (!std::isfinite(x)) {
                throw NumericError("gradient overflow");
            }
        }
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    size_t offset = 0;
    for (size_t ti = 0; ti < params.tensors.size(); ++ti) {
        Matrix& p = *params.tensors[ti];
        const Matrix& g = *grads.tensors[ti];
        for (size_t i = 0; i < p.size(); ++i) {
            double& m = state.m[offset + i];
            double& v = state.v[offset + i];
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g.data[i];
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.data[i] * g.data[i];
            p.data[i] -= cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.adam_eps);
        }
        offset += p.size();
    }
}

inline void zero_tensors(TensorSet& set) {
    for (Matrix* m : set.tensors) {
        m->zero();
    }
}

// ----------------------------------------------------------------------
// Phase 1: train the gating controller on parallel pairs.
// ----------------------------------------------------------------------
inline LossCurve train_gating(const std::vector<ParallelPair>& pairs, const TrainConfig& cfg,
                              ModelParams& model, const Vocabulary& vocab) {
    if (pairs.empty()) {
        throw DataError("empty parallel pair stream");
    }
    Tower grads = make_tower_like(model.gating);
    TensorSet param_set = collect_tensors(model.gating);
    TensorSet grad_set = collect_tensors(grads);
    AdamState state(param_set.total);

    Rng order_rng = Rng(cfg.seed).fork(0x67617465);  // independent shuffle stream
    std::vector<size_t> order(pairs.size());
    for (size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    size_t cursor = order.size();  // forces a shuffle before the first batch

    LossCurve curve;
    for (int iter = 0; iter < cfg.phase1_iters; ++iter) {
        zero_tensors(grad_set);
        double batch_loss = 0.0;
        const double inv_batch = 1.0 / cfg.batch;
        for (int b = 0; b < cfg.batch; ++b) {
            if (cursor >= order.size()) {
                order_rng.shuffle(order);
                cursor = 0;
            }
            const ParallelPair& pair = pairs[order[cursor++]];
            TokenSeq seq = tokenize(pair.passage, vocab, model.config.max_len);
            TokenSeq target_seq = tokenize(pair.target, vocab, model.config.max_len);
            const BowVector target = bow(target_seq);

            TowerCache cache =
                tower_forward(model.gating, seq, model.config.sum_special_positions);
            Vec agg = aggregate_importance(cache);
            Vec probs = gate_probabilities(agg);
            ExpansionLossResult l = expansion_loss(probs, target, cfg.lambda1, cfg.lambda2);
            batch_loss += l.loss * inv_batch;

            // chain through the logistic, then the tower
            Vec dagg(agg.size());
            for (size_t t = 0; t < agg.size(); ++t) {
                dagg[t] = l.dprobs[t] * probs[t] * (1.0 - probs[t]) * inv_batch;
            }
            tower_backward_dense(model.gating, cache, dagg, grads);
        }
        if (!std::isfinite(batch_loss)) {
            throw NumericError("training diverged: non-finite loss");
        }
        adam_step_tensors(param_set, grad_set, state, cfg);
        curve.points.emplace_back(iter, batch_loss);
    }
    return curve;
}

// ----------------------------------------------------------------------
// Phase 2: joint training. Gating is frozen (its gates become constants)
// unless cfg.unfreeze_gating re-enables the BCE path end-to-end.
// ----------------------------------------------------------------------
namespace detail {

// The tensors phase 2 actually optimizes: the importance tower, the query
// tower under the asymmetric strategy, and the gating tower only when
// explicitly unfrozen. Used for parameters and gradients alike so both
// enumerate in lockstep.
struct JointTrainable {
    Tower* importance = nullptr;
    Tower* query = nullptr;
    Tower* gating = nullptr;

    template <typename F>
    void for_each_tensor(const std::string&, F&& f) {
        importance->for_each_tensor("", f);
        if (query != nullptr) {
            query->for_each_tensor("q.", f);
        }
        if (gating != nullptr) {
            gating->for_each_tensor("g.", f);
        }
    }
};

// Forward pass of one text through a tower with literal or precomputed
// gating, keeping everything the backward pass needs.
struct RepForward {
    TokenSeq seq;
    TowerCache cache;
    SparseVector rep;
};

inline RepForward represent_for_training(const std::string& text, const Tower& tower,
                                         const ModelParams& model, const GateVector* gate_override,
                                         const Vocabulary& vocab) {
    RepForward f;
    f.seq = tokenize(text, vocab, model.config.max_len);
    f.cache = tower_forward(tower, f.seq, model.config.sum_special_positions);
    Vec importance = aggregate_importance(f.cache);
    const BowVector b = bow(f.seq);
    GateVector gate = gate_override ? *gate_override : literal_gate(b, model.config.vocab_size);
    f.rep = sparse_rep(importance, gate, effective_lambda_cap(model.config, b));
    return f;
}

}  // namespace detail

inline LossCurve train_joint(const std::vector<TrainingTriple>& triples,
                             const std::vector<ParallelPair>& pairs, const TrainConfig& cfg,
                             ModelParams& model, const Vocabulary& vocab) {
    if (triples.empty()) {
        throw DataError("empty triple stream");
    }
    const bool expansion = model.config.mode == GateMode::expansion_enhanced;
    if (expansion && pairs.empty() && cfg.unfreeze_gating) {
        throw DataError("unfrozen expansion training needs parallel pairs");
    }

    const bool train_query_tower =
        model.query_tower && model.config.strategy == QueryStrategy::asymmetric;

    Tower imp_grads = make_tower_like(model.importance);
    Tower query_grads = make_tower_like(model.importance);
    Tower gate_grads = make_tower_like(model.gating);

    detail::JointTrainable trainable{&model.importance,
                                     train_query_tower ? &*model.query_tower : nullptr,
                                     cfg.unfreeze_gating ? &model.gating : nullptr};
    detail::JointTrainable trainable_grads{&imp_grads,
                                           train_query_tower ? &query_grads : nullptr,
                                           cfg.unfreeze_gating ? &gate_grads : nullptr};

    TensorSet param_set = collect_tensors(trainable);
    TensorSet grad_set = collect_tensors(trainable_grads);
    AdamState state(param_set.total);

    // Frozen gates are constants: compute each distinct passage's gate once.
    std::unordered_map<std::string, GateVector> gate_memo;
    auto passage_gate = [&](const std::string& text) -> const GateVector* {
        if (!expansion) {
            return nullptr;
        }
        auto it = gate_memo.find(text);
        if (it == gate_memo.end()) {
            TokenSeq seq = tokenize(text, vocab, model.config.max_len);
            GateVector g = expansion_gate(gate_distribution(seq, model), bow(seq),
                                          model.config.threshold);
            it = gate_memo.emplace(text, std::move(g)).first;
        }
        return &it->second;
    };

    Rng order_rng = Rng(cfg.seed).fork(0x6a6f696e);
    std::vector<size_t> order(triples.size());
    for (size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    size_t cursor = order.size();

    Rng pair_rng = Rng(cfg.seed).fork(0x70616972);
    std::vector<size_t> pair_order(pairs.size());
    for (size_t i = 0; i < pair_order.size(); ++i) {
        pair_order[i] = i;
    }
    size_t pair_cursor = pair_order.size();

    const Tower& query_tower = train_query_tower ? *model.query_tower : model.importance;
    Tower& query_grad_sink = train_query_tower ? query_grads : imp_grads;

    LossCurve curve;
    for (int iter = 0; iter < cfg.phase2_iters; ++iter) {
        zero_tensors(grad_set);
        if (cfg.unfreeze_gating) {
            // gate memo would go stale once the gating tower moves
            gate_memo.clear();
        }
        double batch_loss = 0.0;
        const double inv_batch = 1.0 / cfg.batch;

        for (int b = 0; b < cfg.batch; ++b) {
            if (cursor >= order.size()) {
                order_rng.shuffle(order);
                cursor = 0;
            }
            const TrainingTriple& triple = triples[order[cursor++]];

            detail::RepForward pos = detail::represent_for_training(
                triple.positive, model.importance, model, passage_gate(triple.positive), vocab);
            detail::RepForward neg = detail::represent_for_training(
                triple.negative, model.importance, model, passage_gate(triple.negative), vocab);

            SparseVector query_rep;
            detail::RepForward query_fwd;
            const bool neural_query = model.config.strategy != QueryStrategy::query_tf;
            if (neural_query) {
                query_fwd = detail::represent_for_training(triple.query, query_tower, model,
                                                           nullptr, vocab);
                query_rep = query_fwd.rep;
            } else {
                TokenSeq qseq = tokenize(triple.query, vocab, model.config.max_len);
                query_rep = query_tf_vector(qseq, model.config.vocab_size);
            }

            RankLossResult l = rank_loss(query_rep, pos.rep, neg.rep);
            batch_loss += l.loss * inv_batch;

            auto scaled = [&](SparseGrad& g) {
                for (auto& [t, v] : g) {
                    v *= inv_batch;
                }
            };
            scaled(l.dpos);
            scaled(l.dneg);
            tower_backward(model.importance, pos.cache, l.dpos, imp_grads);
            tower_backward(model.importance, neg.cache, l.dneg, imp_grads);
            if (neural_query) {
                scaled(l.dquery);
                tower_backward(query_tower, query_fwd.cache, l.dquery, query_grad_sink);
            }
        }

        // Expansion term of the joint objective. With the gating tower
        // frozen this contributes a value but no gradient.
        if (expansion && !pairs.empty()) {
            for (int b = 0; b < cfg.batch; ++b) {
                if (pair_cursor >= pair_order.size()) {
                    pair_rng.shuffle(pair_order);
                    pair_cursor = 0;
                }
                const ParallelPair& pair = pairs[pair_order[pair_cursor++]];
                TokenSeq seq = tokenize(pair.passage, vocab, model.config.max_len);
                const BowVector target = bow(tokenize(pair.target, vocab, model.config.max_len));
                TowerCache cache =
                    tower_forward(model.gating, seq, model.config.sum_special_positions);
                Vec agg = aggregate_importance(cache);
                Vec probs = gate_probabilities(agg);
                ExpansionLossResult l = expansion_loss(probs, target, cfg.lambda1, cfg.lambda2);
                batch_loss += l.loss * inv_batch;
                if (cfg.unfreeze_gating) {
                    Vec dagg(agg.size());
                    for (size_t t = 0; t < agg.size(); ++t) {
                        dagg[t] = l.dprobs[t] * probs[t] * (1.0 - probs[t]) * inv_batch;
                    }
                    tower_backward_dense(model.gating, cache, dagg, gate_grads);
                }
            }
        }

        if (!std::isfinite(batch_loss)) {
            throw NumericError("training diverged: non-finite loss");
        }
        adam_step_tensors(param_set, grad_set, state, cfg);
        curve.points.emplace_back(iter, batch_loss);
    }
    return curve;
}

}  // namespace lsr
