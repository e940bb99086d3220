#pragma once

// Dense kernels, activations, layer normalization, Adam and the central
// finite-difference gradient oracle. Everything is 64-bit: the scale of
// this project makes 32-bit performance irrelevant and the gradient
// checks need the precision.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lsr/common.hpp"

namespace lsr {

using Vec = std::vector<double>;

// Row-major dense matrix. Vectors (biases etc.) are stored as 1 x n.
struct Matrix {
    size_t rows = 0;
    size_t cols = 0;
    Vec data;

    Matrix() = default;
    Matrix(size_t r, size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(size_t r, size_t c) { return data[r * cols + c]; }
    double operator()(size_t r, size_t c) const { return data[r * cols + c]; }

    double* row(size_t r) { return data.data() + r * cols; }
    const double* row(size_t r) const { return data.data() + r * cols; }

    size_t size() const { return data.size(); }
    void zero() { std::fill(data.begin(), data.end(), 0.0); }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

// ----------------------------------------------------------------------
// Activations
// ----------------------------------------------------------------------

// Exact erf-based GELU: x * Phi(x).
inline double gelu(double x) {
    return x * 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
}

inline double gelu_grad(double x) {
    const double phi_cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
    const double phi_pdf = 0.3989422804014326779 * std::exp(-0.5 * x * x);
    return phi_cdf + x * phi_pdf;
}

inline double relu(double x) {
    return x > 0.0 ? x : 0.0;
}

inline double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// log(1 + e^x) without overflow.
inline double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// ----------------------------------------------------------------------
// Layer normalization (population variance)
// ----------------------------------------------------------------------
inline Vec layer_norm(std::span<const double> v, std::span<const double> gamma,
                      std::span<const double> beta, double eps = 1e-12) {
    if (v.size() != gamma.size() || v.size() != beta.size()) {
        throw UsageError("layer_norm: length mismatch");
    }
    const size_t n = v.size();
    double mean = 0.0;
    for (double x : v) {
        mean += x;
    }
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double x : v) {
        var += (x - mean) * (x - mean);
    }
    var /= static_cast<double>(n);
    const double inv_std = 1.0 / std::sqrt(var + eps);
    Vec out(n);
    for (size_t i = 0; i < n; ++i) {
        out[i] = (v[i] - mean) * inv_std * gamma[i] + beta[i];
    }
    return out;
}

// In-place row-wise layer norm over a matrix, caching what the backward
// pass needs (normalized rows and 1/std per row).
struct LayerNormCache {
    Matrix xhat;   // normalized input, same shape as the activation
    Vec inv_std;   // one per row
};

inline void layer_norm_rows(Matrix& x, const Matrix& gamma, const Matrix& beta,
                            LayerNormCache& cache, double eps = 1e-12) {
    const size_t n = x.cols;
    cache.xhat = Matrix(x.rows, n);
    cache.inv_std.assign(x.rows, 0.0);
    for (size_t r = 0; r < x.rows; ++r) {
        double* row = x.row(r);
        double mean = 0.0;
        for (size_t i = 0; i < n; ++i) {
            mean += row[i];
        }
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (size_t i = 0; i < n; ++i) {
            var += (row[i] - mean) * (row[i] - mean);
        }
        var /= static_cast<double>(n);
        const double inv_std = 1.0 / std::sqrt(var + eps);
        cache.inv_std[r] = inv_std;
        double* xh = cache.xhat.row(r);
        for (size_t i = 0; i < n; ++i) {
            xh[i] = (row[i] - mean) * inv_std;
            row[i] = xh[i] * gamma.data[i] + beta.data[i];
        }
    }
}

// dy -> dx; accumulates parameter gradients into dgamma/dbeta.
inline void layer_norm_rows_backward(const Matrix& dy, const LayerNormCache& cache,
                                     const Matrix& gamma, Matrix& dx, Matrix& dgamma,
                                     Matrix& dbeta) {
    const size_t n = dy.cols;
    dx = Matrix(dy.rows, n);
    for (size_t r = 0; r < dy.rows; ++r) {
        const double* dyr = dy.row(r);
        const double* xh = cache.xhat.row(r);
        double* dxr = dx.row(r);
        double mean_dxhat = 0.0;
        double mean_dxhat_xhat = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const double dxhat = dyr[i] * gamma.data[i];
            dxr[i] = dxhat;  // stash dxhat
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xh[i];
            dgamma.data[i] += dyr[i] * xh[i];
            dbeta.data[i] += dyr[i];
        }
        mean_dxhat /= static_cast<double>(n);
        mean_dxhat_xhat /= static_cast<double>(n);
        const double inv_std = cache.inv_std[r];
        for (size_t i = 0; i < n; ++i) {
            dxr[i] = inv_std * (dxr[i] - mean_dxhat - xh[i] * mean_dxhat_xhat);
        }
    }
}

// ----------------------------------------------------------------------
// Linear maps. Weight matrices are (out x in); x W^T + b.
// ----------------------------------------------------------------------
inline Vec linear(std::span<const double> x, const Matrix& w, std::span<const double> b) {
    if (x.size() != w.cols || b.size() != w.rows) {
        throw UsageError("linear: shape mismatch");
    }
    Vec out(w.rows);
    for (size_t r = 0; r < w.rows; ++r) {
        const double* wr = w.row(r);
        double acc = b[r];
        for (size_t c = 0; c < w.cols; ++c) {
            acc += x[c] * wr[c];
        }
        out[r] = acc;
    }
    return out;
}

// out = a (m x k) * b^T (n x k) -> (m x n)
inline void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false) {
    if (!accumulate) {
        out = Matrix(a.rows, b.rows);
    }
    for (size_t i = 0; i < a.rows; ++i) {
        const double* ar = a.row(i);
        double* orow = out.row(i);
        for (size_t j = 0; j < b.rows; ++j) {
            const double* br = b.row(j);
            double acc = 0.0;
            for (size_t k = 0; k < a.cols; ++k) {
                acc += ar[k] * br[k];
            }
            orow[j] += acc;
        }
    }
}

// out = a (m x k) * b (k x n) -> (m x n)
inline void matmul_nn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false) {
    if (!accumulate) {
        out = Matrix(a.rows, b.cols);
    }
    for (size_t i = 0; i < a.rows; ++i) {
        const double* ar = a.row(i);
        double* orow = out.row(i);
        for (size_t k = 0; k < a.cols; ++k) {
            const double aik = ar[k];
            if (aik == 0.0) {
                continue;
            }
            const double* br = b.row(k);
            for (size_t j = 0; j < b.cols; ++j) {
                orow[j] += aik * br[j];
            }
        }
    }
}

// out = a^T (k x m) * b (k x n) -> (m x n); used for weight gradients.
inline void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false) {
    if (!accumulate) {
        out = Matrix(a.cols, b.cols);
    }
    for (size_t k = 0; k < a.rows; ++k) {
        const double* ar = a.row(k);
        const double* br = b.row(k);
        for (size_t i = 0; i < a.cols; ++i) {
            const double aki = ar[i];
            if (aki == 0.0) {
                continue;
            }
            double* orow = out.row(i);
            for (size_t j = 0; j < b.cols; ++j) {
                orow[j] += aki * br[j];
            }
        }
    }
}

inline void add_bias_rows(Matrix& x, const Matrix& b) {
    for (size_t r = 0; r < x.rows; ++r) {
        double* row = x.row(r);
        for (size_t c = 0; c < x.cols; ++c) {
            row[c] += b.data[c];
        }
    }
}

inline void add_col_sums(const Matrix& x, Matrix& acc) {
    for (size_t r = 0; r < x.rows; ++r) {
        const double* row = x.row(r);
        for (size_t c = 0; c < x.cols; ++c) {
            acc.data[c] += row[c];
        }
    }
}

inline void softmax_rows(Matrix& x) {
    for (size_t r = 0; r < x.rows; ++r) {
        double* row = x.row(r);
        double mx = row[0];
        for (size_t c = 1; c < x.cols; ++c) {
            mx = std::max(mx, row[c]);
        }
        double sum = 0.0;
        for (size_t c = 0; c < x.cols; ++c) {
            row[c] = std::exp(row[c] - mx);
            sum += row[c];
        }
        const double inv = 1.0 / sum;
        for (size_t c = 0; c < x.cols; ++c) {
            row[c] *= inv;
        }
    }
}

// ----------------------------------------------------------------------
// Adam
// ----------------------------------------------------------------------
struct AdamState {
    Vec m;
    Vec v;
    uint64_t t = 0;

    explicit AdamState(size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                      double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    if (params.size() != grads.size() || params.size() != state.m.size() ||
        params.size() != state.v.size()) {
        throw UsageError("adam_step: shape mismatch");
    }
    for (double g : grads) {
        if (!std::isfinite(g)) {
            throw NumericError("gradient overflow");
        }
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (size_t i = 0; i < params.size(); ++i) {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grads[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

// ----------------------------------------------------------------------
// Central finite differences: the verification oracle for every analytic
// gradient in the project.
// ----------------------------------------------------------------------
inline Vec finite_diff_grad(const std::function<double(const Vec&)>& f, const Vec& params,
                            double h = 1e-5) {
    Vec grad(params.size(), 0.0);
    Vec p = params;
    for (size_t i = 0; i < p.size(); ++i) {
        const double saved = p[i];
        p[i] = saved + h;
        const double fp = f(p);
        p[i] = saved - h;
        const double fm = f(p);
        p[i] = saved;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

inline double rel_error(const Vec& a, const Vec& b) {
    double num = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double denom = std::max(std::sqrt(na), std::sqrt(nb));
    return denom == 0.0 ? std::sqrt(num) : std::sqrt(num) / denom;
}

}  // namespace lsr
