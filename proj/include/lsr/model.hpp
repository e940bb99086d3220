#pragma once

// The sparse representation model: an importance tower scoring every
// vocabulary term for a passage, a gating tower deciding which terms may
// participate, and their composition into a sparse vector. Includes the
// three query representation strategies.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lsr/checkpoint.hpp"
#include "lsr/common.hpp"
#include "lsr/encoder.hpp"
#include "lsr/numerics.hpp"
#include "lsr/text.hpp"

namespace lsr {

// ----------------------------------------------------------------------
// Sparse domain types
// ----------------------------------------------------------------------
struct SparseVector {
    struct Entry {
        uint32_t term;
        double weight;
        bool operator==(const Entry& o) const = default;
    };
    std::vector<Entry> entries;  // strictly increasing term ids, weights > 0
    uint32_t dim = 0;

    size_t nnz() const { return entries.size(); }
    bool operator==(const SparseVector& o) const = default;
};

inline double dot(const SparseVector& a, const SparseVector& b) {
    double acc = 0.0;
    size_t i = 0;
    size_t j = 0;
    while (i < a.entries.size() && j < b.entries.size()) {
        const uint32_t ta = a.entries[i].term;
        const uint32_t tb = b.entries[j].term;
        if (ta == tb) {
            acc += a.entries[i].weight * b.entries[j].weight;
            ++i;
            ++j;
        } else if (ta < tb) {
            ++i;
        } else {
            ++j;
        }
    }
    return acc;
}

// Binary activation mask over the vocabulary, kept as a sorted id list.
struct GateVector {
    std::vector<uint32_t> active;  // sorted, unique
    uint32_t dim = 0;

    bool contains(uint32_t id) const {
        return std::binary_search(active.begin(), active.end(), id);
    }
};

// ----------------------------------------------------------------------
// Importance head: h -> layer_norm(gelu(W h + b)) E^T + bias. The output
// projection reuses the encoder embedding matrix E (one source of truth).
// ----------------------------------------------------------------------
struct ImportanceHead {
    Matrix transform_w;  // d x d
    Matrix transform_b;  // 1 x d
    Matrix ln_gamma;     // 1 x d
    Matrix ln_beta;      // 1 x d
    Matrix bias;         // 1 x v

    template <typename F>
    void for_each_tensor(const std::string& prefix, F&& f) {
        f(prefix + "transform_w", transform_w);
        f(prefix + "transform_b", transform_b);
        f(prefix + "ln_gamma", ln_gamma);
        f(prefix + "ln_beta", ln_beta);
        f(prefix + "bias", bias);
    }
};

inline ImportanceHead make_head_like(const ImportanceHead& h) {
    ImportanceHead g;
    g.transform_w = Matrix(h.transform_w.rows, h.transform_w.cols);
    g.transform_b = Matrix(1, h.transform_b.cols);
    g.ln_gamma = Matrix(1, h.ln_gamma.cols);
    g.ln_beta = Matrix(1, h.ln_beta.cols);
    g.bias = Matrix(1, h.bias.cols);
    return g;
}

inline ImportanceHead init_head(int dim, uint32_t vocab_size, Rng& rng, double init_std = 0.02) {
    ImportanceHead h;
    const size_t d = static_cast<size_t>(dim);
    h.transform_w = Matrix(d, d);
    for (double& x : h.transform_w.data) {
        x = rng.normal(0.0, init_std);
    }
    h.transform_b = Matrix(1, d);
    h.ln_gamma = Matrix(1, d);
    std::fill(h.ln_gamma.data.begin(), h.ln_gamma.data.end(), 1.0);
    h.ln_beta = Matrix(1, d);
    h.bias = Matrix(1, vocab_size);
    return h;
}

struct HeadCache {
    Matrix z;        // L x d pre-GELU
    Matrix normed;   // L x d after layer norm (input to the E^T projection)
    LayerNormCache ln;
};

// Token-wise importance distributions for all positions: L x v.
inline Matrix head_forward(const Matrix& h, const ImportanceHead& head, const Matrix& embed,
                           HeadCache& cache) {
    matmul_nt(h, head.transform_w, cache.z);
    add_bias_rows(cache.z, head.transform_b);
    Matrix a = cache.z;
    for (double& x : a.data) {
        x = gelu(x);
    }
    layer_norm_rows(a, head.ln_gamma, head.ln_beta, cache.ln);
    cache.normed = std::move(a);
    Matrix logits;
    matmul_nt(cache.normed, embed, logits);
    add_bias_rows(logits, head.bias);
    return logits;
}

// Single-token importance distribution (the per-position primitive).
inline Vec token_importance(std::span<const double> h_i, const ImportanceHead& head,
                            const Matrix& embed) {
    Vec z = linear(h_i, head.transform_w, std::span<const double>(head.transform_b.data));
    for (double& x : z) {
        x = gelu(x);
    }
    Vec n = layer_norm(z, std::span<const double>(head.ln_gamma.data),
                       std::span<const double>(head.ln_beta.data));
    Vec out(embed.rows);
    for (size_t t = 0; t < embed.rows; ++t) {
        const double* e = embed.row(t);
        double acc = head.bias.data[t];
        for (size_t c = 0; c < embed.cols; ++c) {
            acc += n[c] * e[c];
        }
        out[t] = acc;
    }
    return out;
}

inline void head_backward(const Matrix& dlogits, const Matrix& h_in, const HeadCache& cache,
                          const ImportanceHead& head, const Matrix& embed,
                          ImportanceHead& head_grads, Matrix& embed_grads, Matrix& dh) {
    // logits = normed * E^T + bias
    Matrix dnormed;
    matmul_nn(dlogits, embed, dnormed);
    matmul_tn(dlogits, cache.normed, embed_grads, /*accumulate=*/true);
    add_col_sums(dlogits, head_grads.bias);

    Matrix da;
    layer_norm_rows_backward(dnormed, cache.ln, head.ln_gamma, da, head_grads.ln_gamma,
                             head_grads.ln_beta);
    for (size_t i = 0; i < da.size(); ++i) {
        da.data[i] *= gelu_grad(cache.z.data[i]);
    }
    // z = h * W^T + b
    matmul_nn(da, head.transform_w, dh);
    matmul_tn(da, h_in, head_grads.transform_w, /*accumulate=*/true);
    add_col_sums(da, head_grads.transform_b);
}

// ----------------------------------------------------------------------
// Towers and aggregation
// ----------------------------------------------------------------------
struct Tower {
    EncoderParams enc;
    ImportanceHead head;

    template <typename F>
    void for_each_tensor(const std::string& prefix, F&& f) {
        enc.for_each_tensor(prefix + "enc.", f);
        head.for_each_tensor(prefix + "imp.", f);
    }
};

inline Tower make_tower_like(const Tower& t) {
    return Tower{make_encoder_like(t.enc), make_head_like(t.head)};
}

inline Tower init_tower(int dim, int ffn_dim, int n_layers, int max_len, uint32_t vocab_size,
                        Rng& rng, double init_std = 0.02) {
    Tower t;
    t.enc = init_encoder(dim, ffn_dim, n_layers, max_len, vocab_size, rng, init_std);
    t.head = init_head(dim, vocab_size, rng, init_std);
    return t;
}

struct TowerCache {
    EncoderCache enc;
    HeadCache head;
    Matrix token_logits;          // L x v, pre-ReLU per-position distributions
    std::vector<char> summed;     // per position: contributes to the aggregate?
};

inline TowerCache tower_forward(const Tower& tower, const TokenSeq& seq,
                                bool sum_special_positions = true) {
    TowerCache cache;
    cache.enc = encode(seq, tower.enc);
    cache.token_logits = head_forward(cache.enc.h, tower.head, tower.enc.embed, cache.head);
    cache.summed.resize(seq.length());
    for (size_t i = 0; i < seq.length(); ++i) {
        cache.summed[i] = sum_special_positions || !is_reserved(seq.ids[i]);
    }
    return cache;
}

// Sum of ReLU-ed token distributions over the contributing positions;
// elementwise >= 0. This is the passage-level aggregation both towers use.
inline Vec aggregate_importance(const TowerCache& cache) {
    const Matrix& logits = cache.token_logits;
    Vec agg(logits.cols, 0.0);
    for (size_t i = 0; i < logits.rows; ++i) {
        if (!cache.summed[i]) {
            continue;
        }
        const double* row = logits.row(i);
        for (size_t t = 0; t < logits.cols; ++t) {
            if (row[t] > 0.0) {
                agg[t] += row[t];
            }
        }
    }
    return agg;
}

// Standalone form of the aggregation (ReLU then sum over positions).
inline Vec passage_importance(const std::vector<Vec>& token_distributions) {
    if (token_distributions.empty()) {
        throw UsageError("passage_importance: empty token list");
    }
    Vec agg(token_distributions[0].size(), 0.0);
    for (const auto& dist : token_distributions) {
        if (dist.size() != agg.size()) {
            throw UsageError("passage_importance: length mismatch");
        }
        for (size_t t = 0; t < dist.size(); ++t) {
            agg[t] += relu(dist[t]);
        }
    }
    return agg;
}

// Backward through aggregation + head + encoder. `dagg` is the gradient
// w.r.t. the aggregated v-vector, given sparsely as (term, grad) pairs.
inline void tower_backward(const Tower& tower, const TowerCache& cache,
                           std::span<const std::pair<uint32_t, double>> dagg, Tower& grads) {
    const Matrix& logits = cache.token_logits;
    Matrix dlogits(logits.rows, logits.cols);
    for (size_t i = 0; i < logits.rows; ++i) {
        if (!cache.summed[i]) {
            continue;
        }
        const double* row = logits.row(i);
        double* drow = dlogits.row(i);
        for (const auto& [t, g] : dagg) {
            if (row[t] > 0.0) {
                drow[t] = g;
            }
        }
    }
    Matrix dh;
    head_backward(dlogits, cache.enc.h, cache.head, tower.head, tower.enc.embed, grads.head,
                  grads.enc.embed, dh);
    encoder_backward(tower.enc, cache.enc, dh, grads.enc);
}

inline void tower_backward_dense(const Tower& tower, const TowerCache& cache, const Vec& dagg,
                                 Tower& grads) {
    const Matrix& logits = cache.token_logits;
    Matrix dlogits(logits.rows, logits.cols);
    for (size_t i = 0; i < logits.rows; ++i) {
        if (!cache.summed[i]) {
            continue;
        }
        const double* row = logits.row(i);
        double* drow = dlogits.row(i);
        for (size_t t = 0; t < logits.cols; ++t) {
            if (row[t] > 0.0) {
                drow[t] = dagg[t];
            }
        }
    }
    Matrix dh;
    head_backward(dlogits, cache.enc.h, cache.head, tower.head, tower.enc.embed, grads.head,
                  grads.enc.embed, dh);
    encoder_backward(tower.enc, cache.enc, dh, grads.enc);
}

// ----------------------------------------------------------------------
// Gating
// ----------------------------------------------------------------------

// Literal-only gating: exactly the bag of words.
inline GateVector literal_gate(const BowVector& b, uint32_t dim) {
    return GateVector{b.bits, dim};
}

// Dense gating probabilities: tower aggregate squashed through a
// logistic, so each entry is the probability of the term participating.
inline Vec gate_probabilities(const Vec& gate_aggregate) {
    Vec g(gate_aggregate.size());
    for (size_t t = 0; t < g.size(); ++t) {
        g[t] = sigmoid(gate_aggregate[t]);
    }
    return g;
}

// Binarize the gating distribution, mask out literal terms (expansion is
// orthogonal to the bag of words by construction), then re-add the bag.
inline GateVector expansion_gate(const Vec& gate_probs, const BowVector& b, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw UsageError("expansion_gate: threshold must be in (0,1)");
    }
    GateVector out;
    out.dim = static_cast<uint32_t>(gate_probs.size());
    for (uint32_t t = 0; t < gate_probs.size(); ++t) {
        if (gate_probs[t] >= threshold && !b.contains(t)) {
            out.active.push_back(t);  // expansion terms, orthogonal to the bag
        }
    }
    // union with the literal gate; both inputs sorted
    std::vector<uint32_t> merged;
    merged.reserve(out.active.size() + b.bits.size());
    std::merge(out.active.begin(), out.active.end(), b.bits.begin(), b.bits.end(),
               std::back_inserter(merged));
    out.active = std::move(merged);
    return out;
}

// Expansion-only part of a gate (the gate minus the bag of words).
inline std::vector<uint32_t> expansion_terms(const GateVector& gate, const BowVector& b) {
    std::vector<uint32_t> out;
    std::set_difference(gate.active.begin(), gate.active.end(), b.bits.begin(), b.bits.end(),
                        std::back_inserter(out));
    return out;
}

// ----------------------------------------------------------------------
// Composition: keep gated terms with positive importance, truncate to the
// lambda_cap largest weights (ties keep the lower term id).
// ----------------------------------------------------------------------
inline SparseVector sparse_rep(const Vec& importance, const GateVector& gate, size_t lambda_cap) {
    if (lambda_cap < 1) {
        throw UsageError("sparse_rep: lambda_cap must be >= 1");
    }
    SparseVector out;
    out.dim = static_cast<uint32_t>(importance.size());
    for (uint32_t t : gate.active) {
        if (t < importance.size() && importance[t] > 0.0) {
            out.entries.push_back({t, importance[t]});
        }
    }
    if (out.entries.size() > lambda_cap) {
        std::stable_sort(out.entries.begin(), out.entries.end(),
                         [](const auto& a, const auto& b) { return a.weight > b.weight; });
        out.entries.resize(lambda_cap);
        std::sort(out.entries.begin(), out.entries.end(),
                  [](const auto& a, const auto& b) { return a.term < b.term; });
    }
    return out;
}

// ----------------------------------------------------------------------
// Model configuration and full parameter set
// ----------------------------------------------------------------------
enum class GateMode { literal_only, expansion_enhanced };
enum class QueryStrategy { query_tf, symmetric, asymmetric };

inline std::string to_string(GateMode m) {
    return m == GateMode::literal_only ? "literal-only" : "expansion-enhanced";
}

inline std::string to_string(QueryStrategy s) {
    switch (s) {
        case QueryStrategy::query_tf: return "query-tf";
        case QueryStrategy::symmetric: return "symmetric";
        case QueryStrategy::asymmetric: return "asymmetric";
    }
    return "symmetric";
}

inline GateMode parse_gate_mode(const std::string& s) {
    if (s == "literal-only") {
        return GateMode::literal_only;
    }
    if (s == "expansion-enhanced") {
        return GateMode::expansion_enhanced;
    }
    throw UsageError("unknown gate mode: " + s);
}

inline QueryStrategy parse_strategy(const std::string& s) {
    if (s == "query-tf") {
        return QueryStrategy::query_tf;
    }
    if (s == "symmetric") {
        return QueryStrategy::symmetric;
    }
    if (s == "asymmetric") {
        return QueryStrategy::asymmetric;
    }
    throw UsageError("unknown strategy: " + s);
}

struct ModelConfig {
    int dim = 32;
    int ffn_dim = 64;
    int n_layers = 2;
    int max_len = 64;
    uint32_t vocab_size = 0;
    double threshold = 0.7;     // binarizer cut for expansion gating
    size_t lambda_cap = 0;      // 0 = auto: max(64, 4 * |bow|)
    GateMode mode = GateMode::literal_only;
    QueryStrategy strategy = QueryStrategy::symmetric;
    bool sum_special_positions = true;  // include [CLS] in the aggregation
};

inline size_t effective_lambda_cap(const ModelConfig& cfg, const BowVector& b) {
    if (cfg.lambda_cap > 0) {
        return cfg.lambda_cap;
    }
    return std::max<size_t>(64, 4 * b.count());
}

// Importance and gating towers never share storage; the optional query
// tower exists only under the asymmetric strategy.
struct ModelParams {
    ModelConfig config;
    Tower importance;
    Tower gating;
    std::optional<Tower> query_tower;

    template <typename F>
    void for_each_tensor(F&& f) {
        importance.for_each_tensor("", f);
        gating.for_each_tensor("gate.", f);
        if (query_tower) {
            query_tower->for_each_tensor("qenc.", f);
        }
    }
};

inline ModelParams init_model(const ModelConfig& cfg, uint64_t seed) {
    if (cfg.vocab_size < kNumReserved + 1) {
        throw UsageError("init_model: vocab_size too small");
    }
    Rng rng(seed);
    ModelParams p;
    p.config = cfg;
    Rng imp_rng = rng.fork(1);
    Rng gate_rng = rng.fork(2);
    p.importance = init_tower(cfg.dim, cfg.ffn_dim, cfg.n_layers, cfg.max_len, cfg.vocab_size,
                              imp_rng);
    p.gating = init_tower(cfg.dim, cfg.ffn_dim, cfg.n_layers, cfg.max_len, cfg.vocab_size,
                          gate_rng);
    if (cfg.strategy == QueryStrategy::asymmetric) {
        Rng q_rng = rng.fork(3);
        p.query_tower = init_tower(cfg.dim, cfg.ffn_dim, cfg.n_layers, cfg.max_len, cfg.vocab_size,
                                   q_rng);
    }
    return p;
}

// ----------------------------------------------------------------------
// Inference-level representation
// ----------------------------------------------------------------------
inline Vec gate_distribution(const TokenSeq& seq, const ModelParams& model) {
    TowerCache cache = tower_forward(model.gating, seq, model.config.sum_special_positions);
    return gate_probabilities(aggregate_importance(cache));
}

inline SparseVector represent_passage(const TokenSeq& seq, const ModelParams& model,
                                      GateMode mode, size_t lambda_cap = 0) {
    TowerCache cache = tower_forward(model.importance, seq, model.config.sum_special_positions);
    Vec importance = aggregate_importance(cache);
    const BowVector b = bow(seq);
    GateVector gate;
    if (mode == GateMode::literal_only) {
        gate = literal_gate(b, model.config.vocab_size);
    } else {
        gate = expansion_gate(gate_distribution(seq, model), b, model.config.threshold);
    }
    const size_t cap = lambda_cap > 0 ? lambda_cap : effective_lambda_cap(model.config, b);
    return sparse_rep(importance, gate, cap);
}

// tf-based query vector: weight = term frequency over non-reserved tokens.
inline SparseVector query_tf_vector(const TokenSeq& seq, uint32_t dim) {
    std::map<uint32_t, double> counts;
    for (uint32_t id : seq.ids) {
        if (!is_reserved(id)) {
            counts[id] += 1.0;
        }
    }
    SparseVector out;
    out.dim = dim;
    for (const auto& [t, c] : counts) {
        out.entries.push_back({t, c});
    }
    return out;
}

inline SparseVector represent_query(const TokenSeq& seq, const ModelParams& model,
                                    QueryStrategy strategy, size_t lambda_cap = 0) {
    switch (strategy) {
        case QueryStrategy::query_tf:
            return query_tf_vector(seq, model.config.vocab_size);
        case QueryStrategy::symmetric: {
            // shared passage tower, literal-only gating
            TowerCache cache =
                tower_forward(model.importance, seq, model.config.sum_special_positions);
            Vec importance = aggregate_importance(cache);
            const BowVector b = bow(seq);
            const size_t cap = lambda_cap > 0 ? lambda_cap : effective_lambda_cap(model.config, b);
            return sparse_rep(importance, literal_gate(b, model.config.vocab_size), cap);
        }
        case QueryStrategy::asymmetric: {
            if (!model.query_tower) {
                throw UsageError("asymmetric strategy requires a query tower");
            }
            TowerCache cache =
                tower_forward(*model.query_tower, seq, model.config.sum_special_positions);
            Vec importance = aggregate_importance(cache);
            const BowVector b = bow(seq);
            const size_t cap = lambda_cap > 0 ? lambda_cap : effective_lambda_cap(model.config, b);
            return sparse_rep(importance, literal_gate(b, model.config.vocab_size), cap);
        }
    }
    throw UsageError("unknown strategy");
}

// ----------------------------------------------------------------------
// Persistence: checkpoint tensors plus a JSON sidecar (<path>.json) with
// the architecture and composition settings.
// ----------------------------------------------------------------------
inline void save_model(ModelParams& model, const std::string& path) {
    NamedTensorRefs tensors;
    model.for_each_tensor([&](const std::string& name, Matrix& m) {
        tensors.emplace_back(name, &m);
    });
    save_tensors(tensors, path);

    nlohmann::json sidecar;
    sidecar["d"] = model.config.dim;
    sidecar["n_layers"] = model.config.n_layers;
    sidecar["d_ff"] = model.config.ffn_dim;
    sidecar["max_len"] = model.config.max_len;
    sidecar["v"] = model.config.vocab_size;
    sidecar["threshold"] = model.config.threshold;
    sidecar["lambda_cap"] = model.config.lambda_cap;
    sidecar["strategy"] = to_string(model.config.strategy);
    sidecar["mode"] = to_string(model.config.mode);
    sidecar["sum_special_positions"] = model.config.sum_special_positions;
    std::ofstream out(path + ".json", std::ios::binary);
    if (!out) {
        throw DataError("cannot write file: " + path + ".json");
    }
    out << sidecar.dump(2) << '\n';
}

inline ModelParams load_model(const std::string& path) {
    std::ifstream side(path + ".json", std::ios::binary);
    if (!side) {
        throw DataError("cannot open file: " + path + ".json");
    }
    nlohmann::json sidecar = nlohmann::json::parse(side, nullptr, /*allow_exceptions=*/false);
    if (sidecar.is_discarded()) {
        throw DataError("bad model sidecar: " + path + ".json");
    }
    ModelConfig cfg;
    cfg.dim = sidecar.at("d").get<int>();
    cfg.n_layers = sidecar.at("n_layers").get<int>();
    cfg.ffn_dim = sidecar.at("d_ff").get<int>();
    cfg.max_len = sidecar.at("max_len").get<int>();
    cfg.vocab_size = sidecar.at("v").get<uint32_t>();
    cfg.threshold = sidecar.at("threshold").get<double>();
    cfg.lambda_cap = sidecar.at("lambda_cap").get<size_t>();
    cfg.strategy = parse_strategy(sidecar.at("strategy").get<std::string>());
    cfg.mode = parse_gate_mode(sidecar.at("mode").get<std::string>());
    if (sidecar.contains("sum_special_positions")) {
        cfg.sum_special_positions = sidecar.at("sum_special_positions").get<bool>();
    }

    ModelParams model = init_model(cfg, /*seed=*/0);
    std::map<std::string, Matrix*> slots;
    model.for_each_tensor([&](const std::string& name, Matrix& m) { slots[name] = &m; });
    size_t loaded = 0;
    for (auto& [name, tensor] : load_tensors(path)) {
        auto it = slots.find(name);
        if (it == slots.end()) {
            throw DataError("unexpected tensor in checkpoint: " + name);
        }
        if (!it->second->same_shape(tensor)) {
            throw DataError("tensor shape mismatch in checkpoint: " + name);
        }
        *it->second = std::move(tensor);
        ++loaded;
    }
    if (loaded != slots.size()) {
        throw DataError("checkpoint missing tensors: " + path);
    }
    return model;
}

}  // namespace lsr
