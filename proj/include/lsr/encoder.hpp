#pragma once

// A small single-head transformer encoder with hand-derived backward
// passes. Layout per layer: self-attention + residual + layer norm, then
// a GELU feed-forward + residual + layer norm. Input is token embedding
// plus learned positional embedding.

#include <cstdint>
#include <string>
#include <vector>

#include "lsr/common.hpp"
#include "lsr/numerics.hpp"
#include "lsr/text.hpp"

namespace lsr {

struct EncoderLayerParams {
    Matrix wq, wk, wv, wo;      // d x d
    Matrix bq, bk, bv, bo;      // 1 x d
    Matrix ln1_gamma, ln1_beta; // 1 x d
    Matrix w1;                  // d_ff x d
    Matrix b1;                  // 1 x d_ff
    Matrix w2;                  // d x d_ff
    Matrix b2;                  // 1 x d
    Matrix ln2_gamma, ln2_beta; // 1 x d

    template <typename F>
    void for_each_tensor(const std::string& prefix, F&& f) {
        f(prefix + "wq", wq);
        f(prefix + "wk", wk);
        f(prefix + "wv", wv);
        f(prefix + "wo", wo);
        f(prefix + "bq", bq);
        f(prefix + "bk", bk);
        f(prefix + "bv", bv);
        f(prefix + "bo", bo);
        f(prefix + "ln1_gamma", ln1_gamma);
        f(prefix + "ln1_beta", ln1_beta);
        f(prefix + "w1", w1);
        f(prefix + "b1", b1);
        f(prefix + "w2", w2);
        f(prefix + "b2", b2);
        f(prefix + "ln2_gamma", ln2_gamma);
        f(prefix + "ln2_beta", ln2_beta);
    }
};

struct EncoderParams {
    int dim = 32;
    int ffn_dim = 64;
    int n_layers = 2;
    int max_len = 64;

    Matrix embed;  // v x d, shared with the importance head projection
    Matrix pos;    // max_len x d
    std::vector<EncoderLayerParams> layers;

    template <typename F>
    void for_each_tensor(const std::string& prefix, F&& f) {
        f(prefix + "embed", embed);
        f(prefix + "pos", pos);
        for (size_t i = 0; i < layers.size(); ++i) {
            layers[i].for_each_tensor(prefix + "l" + std::to_string(i) + ".", f);
        }
    }
};

// Zero-valued parameter set with the same shapes; doubles as the gradient
// accumulator.
inline EncoderParams make_encoder_like(const EncoderParams& p) {
    EncoderParams g;
    g.dim = p.dim;
    g.ffn_dim = p.ffn_dim;
    g.n_layers = p.n_layers;
    g.max_len = p.max_len;
    g.embed = Matrix(p.embed.rows, p.embed.cols);
    g.pos = Matrix(p.pos.rows, p.pos.cols);
    g.layers.resize(p.layers.size());
    for (size_t i = 0; i < p.layers.size(); ++i) {
        const auto& src = p.layers[i];
        auto& dst = g.layers[i];
        auto alloc = [](const Matrix& m) { return Matrix(m.rows, m.cols); };
        dst.wq = alloc(src.wq);
        dst.wk = alloc(src.wk);
        dst.wv = alloc(src.wv);
        dst.wo = alloc(src.wo);
        dst.bq = alloc(src.bq);
        dst.bk = alloc(src.bk);
        dst.bv = alloc(src.bv);
        dst.bo = alloc(src.bo);
        dst.ln1_gamma = alloc(src.ln1_gamma);
        dst.ln1_beta = alloc(src.ln1_beta);
        dst.w1 = alloc(src.w1);
        dst.b1 = alloc(src.b1);
        dst.w2 = alloc(src.w2);
        dst.b2 = alloc(src.b2);
        dst.ln2_gamma = alloc(src.ln2_gamma);
        dst.ln2_beta = alloc(src.ln2_beta);
    }
    return g;
}

inline EncoderParams init_encoder(int dim, int ffn_dim, int n_layers, int max_len,
                                  uint32_t vocab_size, Rng& rng, double init_std = 0.02) {
    EncoderParams p;
    p.dim = dim;
    p.ffn_dim = ffn_dim;
    p.n_layers = n_layers;
    p.max_len = max_len;
    auto gauss = [&](size_t r, size_t c) {
        Matrix m(r, c);
        for (double& x : m.data) {
            x = rng.normal(0.0, init_std);
        }
        return m;
    };
    auto ones = [](size_t n) {
        Matrix m(1, n);
        std::fill(m.data.begin(), m.data.end(), 1.0);
        return m;
    };
    const size_t d = static_cast<size_t>(dim);
    const size_t f = static_cast<size_t>(ffn_dim);
    p.embed = gauss(vocab_size, d);
    p.pos = gauss(static_cast<size_t>(max_len), d);
    p.layers.resize(static_cast<size_t>(n_layers));
    for (auto& l : p.layers) {
        l.wq = gauss(d, d);
        l.wk = gauss(d, d);
        l.wv = gauss(d, d);
        l.wo = gauss(d, d);
        l.bq = Matrix(1, d);
        l.bk = Matrix(1, d);
        l.bv = Matrix(1, d);
        l.bo = Matrix(1, d);
        l.ln1_gamma = ones(d);
        l.ln1_beta = Matrix(1, d);
        l.w1 = gauss(f, d);
        l.b1 = Matrix(1, f);
        l.w2 = gauss(d, f);
        l.b2 = Matrix(1, d);
        l.ln2_gamma = ones(d);
        l.ln2_beta = Matrix(1, d);
    }
    return p;
}

// ----------------------------------------------------------------------
// Forward
// ----------------------------------------------------------------------
struct EncoderLayerCache {
    Matrix x_in;           // L x d, layer input
    Matrix q, k, v;        // L x d
    Matrix probs;          // L x L attention rows
    Matrix ctx;            // L x d, probs * v
    LayerNormCache ln1;
    Matrix x_mid;          // L x d, after first layer norm
    Matrix ffn_z;          // L x d_ff, pre-GELU
    Matrix ffn_a;          // L x d_ff, post-GELU
    LayerNormCache ln2;
};

struct EncoderCache {
    std::vector<uint32_t> ids;
    std::vector<EncoderLayerCache> layers;
    Matrix h;  // L x d contextual embeddings
};

inline EncoderCache encode(const TokenSeq& seq, const EncoderParams& p) {
    const size_t len = seq.length();
    if (len == 0 || len > static_cast<size_t>(p.max_len)) {
        throw UsageError("encode: sequence length out of range");
    }
    const size_t d = static_cast<size_t>(p.dim);
    EncoderCache cache;
    cache.ids = seq.ids;

    Matrix x(len, d);
    for (size_t i = 0; i < len; ++i) {
        const uint32_t id = seq.ids[i];
        if (id >= p.embed.rows) {
            throw DataError("token id out of vocabulary range: " + std::to_string(id));
        }
        const double* e = p.embed.row(id);
        const double* ps = p.pos.row(i);
        double* xr = x.row(i);
        for (size_t c = 0; c < d; ++c) {
            xr[c] = e[c] + ps[c];
        }
    }

    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    cache.layers.resize(p.layers.size());
    for (size_t li = 0; li < p.layers.size(); ++li) {
        const auto& lp = p.layers[li];
        auto& lc = cache.layers[li];
        lc.x_in = x;

        matmul_nt(x, lp.wq, lc.q);
        add_bias_rows(lc.q, lp.bq);
        matmul_nt(x, lp.wk, lc.k);
        add_bias_rows(lc.k, lp.bk);
        matmul_nt(x, lp.wv, lc.v);
        add_bias_rows(lc.v, lp.bv);

        matmul_nt(lc.q, lc.k, lc.probs);
        for (double& s : lc.probs.data) {
            s *= scale;
        }
        softmax_rows(lc.probs);
        matmul_nn(lc.probs, lc.v, lc.ctx);

        Matrix attn;
        matmul_nt(lc.ctx, lp.wo, attn);
        add_bias_rows(attn, lp.bo);

        // residual + layer norm
        for (size_t i = 0; i < x.size(); ++i) {
            attn.data[i] += x.data[i];
        }
        layer_norm_rows(attn, lp.ln1_gamma, lp.ln1_beta, lc.ln1);
        lc.x_mid = attn;

        matmul_nt(lc.x_mid, lp.w1, lc.ffn_z);
        add_bias_rows(lc.ffn_z, lp.b1);
        lc.ffn_a = lc.ffn_z;
        for (double& a : lc.ffn_a.data) {
            a = gelu(a);
        }
        Matrix ffn_out;
        matmul_nt(lc.ffn_a, lp.w2, ffn_out);
        add_bias_rows(ffn_out, lp.b2);

        for (size_t i = 0; i < ffn_out.size(); ++i) {
            ffn_out.data[i] += lc.x_mid.data[i];
        }
        layer_norm_rows(ffn_out, lp.ln2_gamma, lp.ln2_beta, lc.ln2);
        x = ffn_out;
    }
    cache.h = x;
    return cache;
}

// ----------------------------------------------------------------------
// Backward. Accumulates into `grads` (same shapes as the parameters).
// ----------------------------------------------------------------------
inline void encoder_backward(const EncoderParams& p, const EncoderCache& cache, const Matrix& dh,
                             EncoderParams& grads) {
    const size_t d = static_cast<size_t>(p.dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    Matrix dx = dh;
    for (size_t li = p.layers.size(); li-- > 0;) {
        const auto& lp = p.layers[li];
        const auto& lc = cache.layers[li];
        auto& lg = grads.layers[li];

        // layer norm 2
        Matrix d_res2;
        layer_norm_rows_backward(dx, lc.ln2, lp.ln2_gamma, d_res2, lg.ln2_gamma, lg.ln2_beta);

        // residual split: d_res2 flows to both x_mid and the ffn branch
        Matrix d_ffn_out = d_res2;

        // ffn second linear: out = a * w2^T + b2
        Matrix da;
        matmul_nn(d_ffn_out, lp.w2, da);
        matmul_tn(d_ffn_out, lc.ffn_a, lg.w2, /*accumulate=*/true);
        add_col_sums(d_ffn_out, lg.b2);

        // GELU
        for (size_t i = 0; i < da.size(); ++i) {
            da.data[i] *= gelu_grad(lc.ffn_z.data[i]);
        }

        // ffn first linear: z = x_mid * w1^T + b1
        Matrix dx_mid;
        matmul_nn(da, lp.w1, dx_mid);
        matmul_tn(da, lc.x_mid, lg.w1, /*accumulate=*/true);
        add_col_sums(da, lg.b1);

        for (size_t i = 0; i < dx_mid.size(); ++i) {
            dx_mid.data[i] += d_res2.data[i];
        }

        // layer norm 1
        Matrix d_res1;
        layer_norm_rows_backward(dx_mid, lc.ln1, lp.ln1_gamma, d_res1, lg.ln1_gamma, lg.ln1_beta);

        // residual split: d_res1 flows to both x_in and the attention branch
        Matrix d_attn = d_res1;

        // output projection: attn = ctx * wo^T + bo
        Matrix dctx;
        matmul_nn(d_attn, lp.wo, dctx);
        matmul_tn(d_attn, lc.ctx, lg.wo, /*accumulate=*/true);
        add_col_sums(d_attn, lg.bo);

        // ctx = probs * v
        Matrix dprobs;
        matmul_nt(dctx, lc.v, dprobs);
        Matrix dv;
        matmul_tn(lc.probs, dctx, dv);

        // softmax rows
        Matrix dscores(dprobs.rows, dprobs.cols);
        for (size_t r = 0; r < dprobs.rows; ++r) {
            const double* dp = dprobs.row(r);
            const double* pr = lc.probs.row(r);
            double dot = 0.0;
            for (size_t c = 0; c < dprobs.cols; ++c) {
                dot += dp[c] * pr[c];
            }
            double* ds = dscores.row(r);
            for (size_t c = 0; c < dprobs.cols; ++c) {
                ds[c] = (dp[c] - dot) * pr[c] * scale;
            }
        }

        // scores = q * k^T (pre-scale handled above)
        Matrix dq;
        matmul_nn(dscores, lc.k, dq);
        Matrix dk;
        matmul_tn(dscores, lc.q, dk);

        // projections from x_in
        Matrix dx_in = d_res1;
        matmul_nn(dq, lp.wq, dx_in, /*accumulate=*/true);
        matmul_nn(dk, lp.wk, dx_in, /*accumulate=*/true);
        matmul_nn(dv, lp.wv, dx_in, /*accumulate=*/true);
        matmul_tn(dq, lc.x_in, lg.wq, /*accumulate=*/true);
        matmul_tn(dk, lc.x_in, lg.wk, /*accumulate=*/true);
        matmul_tn(dv, lc.x_in, lg.wv, /*accumulate=*/true);
        add_col_sums(dq, lg.bq);
        add_col_sums(dk, lg.bk);
        add_col_sums(dv, lg.bv);

        dx = std::move(dx_in);
    }

    // embedding + positional gradients
    for (size_t i = 0; i < cache.ids.size(); ++i) {
        const double* dxr = dx.row(i);
        double* de = grads.embed.row(cache.ids[i]);
        double* dp = grads.pos.row(i);
        for (size_t c = 0; c < d; ++c) {
            de[c] += dxr[c];
            dp[c] += dxr[c];
        }
    }
}

}  // namespace lsr
