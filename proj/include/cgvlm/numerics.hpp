#pragma once

// Shared numeric kernels: dense row-major matrices, a seeded RNG, row
// softmax, population variance, KL divergence and nucleus sampling.
// Everything is double precision; no BLAS, no SIMD, desk-scale sizes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace cgvlm {

struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;  // row-major, rows*cols

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c) {
        if (r < 0 || c < 0) throw std::invalid_argument("Matrix: negative shape");
        data.assign(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0);
    }

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    std::span<double> row(int r) {
        return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
    }
    std::span<const double> row(int r) const {
        return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
    }

    bool all_finite() const {
        return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
    }
    bool all_zero() const {
        return std::all_of(data.begin(), data.end(), [](double v) { return v == 0.0; });
    }

    bool operator==(const Matrix& o) const {
        return rows == o.rows && cols == o.cols && data == o.data;
    }
};

// y += W * x, W shaped (out, in).
inline void matvec_add(const Matrix& w, std::span<const double> x, std::span<double> y) {
    if (w.cols != static_cast<int>(x.size()) || w.rows != static_cast<int>(y.size()))
        throw std::invalid_argument("matvec_add: shape mismatch");
    for (int r = 0; r < w.rows; ++r) {
        const double* wr = w.data.data() + static_cast<size_t>(r) * w.cols;
        double acc = 0.0;
        for (int c = 0; c < w.cols; ++c) acc += wr[c] * x[c];
        y[r] += acc;
    }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

// Deterministic 64-bit generator: identical seed => identical draw sequence,
// independent of platform libm or distribution internals.
struct Rng {
    explicit Rng(uint64_t seed) : gen(seed) {}
    uint64_t next() { return gen(); }
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }  // [0,1)
    std::mt19937_64 gen;
};

// Numerically stable softmax with max-subtraction; strictly positive output.
inline std::vector<double> softmax_row(std::span<const double> scores) {
    if (scores.empty()) throw std::invalid_argument("softmax_row: empty input");
    double mx = scores[0];
    for (double v : scores) {
        if (!std::isfinite(v)) throw std::domain_error("softmax_row: non-finite input");
        mx = std::max(mx, v);
    }
    std::vector<double> out(scores.size());
    double sum = 0.0;
    for (size_t i = 0; i < scores.size(); ++i) {
        out[i] = std::exp(scores[i] - mx);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

// Population variance (divide by k).
inline double variance(std::span<const double> values) {
    if (values.size() < 2) throw std::invalid_argument("variance: need at least 2 values");
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double acc = 0.0;
    for (double v : values) acc += (v - mean) * (v - mean);
    return acc / static_cast<double>(values.size());
}

// Natural-log KL(p || q). q entries must stay above a 1e-12 floor; p entries
// at exactly zero contribute zero.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw std::domain_error("kl_divergence: length mismatch");
    if (p.empty()) throw std::domain_error("kl_divergence: empty input");
    double sp = 0.0, sq = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (q[i] < 1e-12) throw std::domain_error("kl_divergence: q entry below floor");
        sp += p[i];
        sq += q[i];
    }
    if (std::abs(sp - 1.0) > 1e-6 || std::abs(sq - 1.0) > 1e-6)
        throw std::domain_error("kl_divergence: inputs must sum to 1");
    double acc = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) acc += p[i] * std::log(p[i] / q[i]);
    }
    return acc;
}

// Shannon entropy in nats; zero entries contribute zero.
inline double entropy(std::span<const double> probs) {
    double acc = 0.0;
    for (double v : probs) {
        if (v > 0.0) acc -= v * std::log(v);
    }
    return acc;
}

inline int argmax_index(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("argmax_index: empty input");
    int best = 0;
    for (int i = 1; i < static_cast<int>(values.size()); ++i) {
        if (values[i] > values[best]) best = i;  // ties keep the lowest index
    }
    return best;
}

// Nucleus sampling. Temperature reshapes the distribution as p^(1/T) before
// the top-p cut; the nucleus is the smallest prefix (sorted by descending
// probability, ties by ascending index) whose mass reaches top_p. With
// temperature 1 and top_p 1 this is plain categorical sampling.
inline int sample_categorical(std::span<const double> probs, Rng& rng, double top_p = 1.0,
                              double temperature = 1.0) {
    if (probs.empty()) throw std::invalid_argument("sample_categorical: empty distribution");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw std::invalid_argument("sample_categorical: top_p out of (0,1]");
    if (!(temperature > 0.0)) throw std::invalid_argument("sample_categorical: temperature must be > 0");

    std::vector<double> w(probs.begin(), probs.end());
    if (temperature != 1.0) {
        double sum = 0.0;
        for (double& v : w) {
            v = v > 0.0 ? std::pow(v, 1.0 / temperature) : 0.0;
            sum += v;
        }
        if (sum <= 0.0) throw std::domain_error("sample_categorical: degenerate distribution");
        for (double& v : w) v /= sum;
    }

    std::vector<int> order(w.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (w[a] != w[b]) return w[a] > w[b];
        return a < b;
    });

    size_t keep = 0;
    double mass = 0.0;
    for (; keep < order.size(); ++keep) {
        mass += w[order[keep]];
        if (mass >= top_p) {
            ++keep;
            break;
        }
    }
    if (keep == 0) keep = 1;  // highest-probability token is always included
    if (keep > order.size()) keep = order.size();

    double u = rng.uniform() * mass;
    double cum = 0.0;
    for (size_t i = 0; i < keep; ++i) {
        cum += w[order[i]];
        if (u < cum) return order[i];
    }
    return order[keep - 1];
}

}  // namespace cgvlm
