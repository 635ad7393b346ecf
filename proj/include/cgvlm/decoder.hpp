#pragma once

// Minimal decoder-only transformer with a partitioned KV cache (visual slots
// first, then text slots), incremental single-position forwards, full
// attention capture for the newest query row, and an optional pre-softmax
// intervention hook on a configurable layer band.
//
// Blocks are pre-norm (RMS norm) with single-head-splitting attention and a
// 4x feed-forward expansion. There is no positional encoding; the only
// position-dependent term is a drift bias -lambda*t subtracted from visual
// columns as the decoding step t grows.

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cgvlm/intervention.hpp"
#include "cgvlm/numerics.hpp"

namespace cgvlm {

struct DecoderConfig {
    int n_layers = 12;
    int n_heads = 4;
    int d_model = 32;
    int vocab_size = 0;
    int n_visual_slots = 32;
    int max_seq = 256;
    int band_lo = 4;  // inclusive FCI layer band
    int band_hi = 8;
    int pad_token = 0;

    int d_head() const { return d_model / n_heads; }

    void validate() const {
        if (n_layers < 1 || n_heads < 1 || d_model < 1 || vocab_size < 1)
            throw std::invalid_argument("DecoderConfig: sizes must be positive");
        if (d_model % n_heads != 0)
            throw std::invalid_argument("DecoderConfig: d_model must be divisible by n_heads");
        if (band_lo > band_hi || band_lo < 0 || band_hi >= n_layers)
            throw std::invalid_argument("DecoderConfig: layer band out of range");
        if (n_visual_slots < 1) throw std::invalid_argument("DecoderConfig: need at least one visual slot");
        if (pad_token < 0 || pad_token >= vocab_size)
            throw std::invalid_argument("DecoderConfig: pad token outside vocabulary");
        if (max_seq < n_visual_slots + 1)
            throw std::invalid_argument("DecoderConfig: max_seq too small for visual slots");
    }
};

struct LayerWeights {
    Matrix wq, wk, wv, wo;  // d_model x d_model
    Matrix ff1;             // 4*d_model x d_model
    Matrix ff2;             // d_model x 4*d_model
};

struct DecoderWeights {
    Matrix embedding;  // vocab x d_model
    Matrix vis_proj;   // d_model x d_model, bias-free so zero features map to zero
    std::vector<LayerWeights> layers;
    Matrix unembed;    // vocab x d_model
    double drift_lambda = 0.0;

    void validate(const DecoderConfig& cfg) const {
        auto expect = [](const Matrix& m, int r, int c, const char* name) {
            if (m.rows != r || m.cols != c)
                throw std::invalid_argument(std::string("DecoderWeights: bad shape for ") + name);
            if (!m.all_finite())
                throw std::invalid_argument(std::string("DecoderWeights: non-finite values in ") + name);
        };
        expect(embedding, cfg.vocab_size, cfg.d_model, "embedding");
        expect(vis_proj, cfg.d_model, cfg.d_model, "vis_proj");
        expect(unembed, cfg.vocab_size, cfg.d_model, "unembed");
        if (static_cast<int>(layers.size()) != cfg.n_layers)
            throw std::invalid_argument("DecoderWeights: layer count mismatch");
        for (const auto& l : layers) {
            expect(l.wq, cfg.d_model, cfg.d_model, "wq");
            expect(l.wk, cfg.d_model, cfg.d_model, "wk");
            expect(l.wv, cfg.d_model, cfg.d_model, "wv");
            expect(l.wo, cfg.d_model, cfg.d_model, "wo");
            expect(l.ff1, 4 * cfg.d_model, cfg.d_model, "ff1");
            expect(l.ff2, cfg.d_model, 4 * cfg.d_model, "ff2");
        }
        if (!std::isfinite(drift_lambda) || drift_lambda < 0.0)
            throw std::invalid_argument("DecoderWeights: drift_lambda must be finite and >= 0");
    }

    // Seeded uniform weights in [-0.1, 0.1]; keeps softmax away from saturation.
    static DecoderWeights random(const DecoderConfig& cfg, uint64_t seed) {
        Rng rng(seed);
        auto fill = [&rng](Matrix& m) {
            for (double& v : m.data) v = rng.uniform() * 0.2 - 0.1;
        };
        DecoderWeights w;
        w.embedding = Matrix(cfg.vocab_size, cfg.d_model);
        w.vis_proj = Matrix(cfg.d_model, cfg.d_model);
        w.unembed = Matrix(cfg.vocab_size, cfg.d_model);
        fill(w.embedding);
        fill(w.vis_proj);
        fill(w.unembed);
        w.layers.resize(cfg.n_layers);
        for (auto& l : w.layers) {
            l.wq = Matrix(cfg.d_model, cfg.d_model);
            l.wk = Matrix(cfg.d_model, cfg.d_model);
            l.wv = Matrix(cfg.d_model, cfg.d_model);
            l.wo = Matrix(cfg.d_model, cfg.d_model);
            l.ff1 = Matrix(4 * cfg.d_model, cfg.d_model);
            l.ff2 = Matrix(cfg.d_model, 4 * cfg.d_model);
            fill(l.wq);
            fill(l.wk);
            fill(l.wv);
            fill(l.wo);
            fill(l.ff1);
            fill(l.ff2);
        }
        return w;
    }
};

// Visual positions occupy the cache prefix [0, n_visual); everything later is text.
struct ModalityPartition {
    int n_visual = 0;

    bool is_visual(int pos) const { return pos >= 0 && pos < n_visual; }

    std::vector<int> visual_cols() const {
        std::vector<int> v(static_cast<size_t>(n_visual));
        for (int i = 0; i < n_visual; ++i) v[i] = i;
        return v;
    }
};

// Append-only per-layer key/value store for committed positions.
struct KvCache {
    int len = 0;
    std::vector<Matrix> k, v;  // per layer: max_seq x d_model

    KvCache() = default;
    KvCache(const DecoderConfig& cfg) : len(0) {
        k.assign(cfg.n_layers, Matrix(cfg.max_seq, cfg.d_model));
        v.assign(cfg.n_layers, Matrix(cfg.max_seq, cfg.d_model));
    }

    int capacity() const { return k.empty() ? 0 : k[0].rows; }
};

// Per-layer key/value vectors of a single not-yet-committed position.
struct NewKv {
    std::vector<std::vector<double>> k, v;  // n_layers x d_model
};

struct ForwardResult {
    std::vector<double> logits;
    // captured only for the newest query row; one H x n_pos matrix per layer
    std::vector<Matrix> scores;     // final pre-softmax (drift and boost included)
    std::vector<Matrix> attention;  // post-softmax
    std::vector<std::vector<double>> hidden;  // newest-position residual after each block
    NewKv kv;
    bool captured = false;
};

inline void rmsnorm(std::span<const double> x, std::span<double> out) {
    double ms = 0.0;
    for (double v : x) ms += v * v;
    ms /= static_cast<double>(x.size());
    double inv = 1.0 / std::sqrt(ms + 1e-6);
    for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv;
}

class Decoder {
  public:
    Decoder(const DecoderConfig& cfg, const DecoderWeights& weights)
        : cfg_(cfg), w_(weights) {
        cfg.validate();
        weights.validate(cfg);
        attn_zero_.resize(cfg.n_layers);
        ff_zero_.resize(cfg.n_layers);
        for (int l = 0; l < cfg.n_layers; ++l) {
            attn_zero_[l] = weights.layers[l].wv.all_zero() || weights.layers[l].wo.all_zero();
            ff_zero_[l] = weights.layers[l].ff1.all_zero() || weights.layers[l].ff2.all_zero();
        }
    }

    const DecoderConfig& config() const { return cfg_; }
    const DecoderWeights& weights() const { return w_; }

    KvCache make_cache() const { return KvCache(cfg_); }

    // Projects image features through the bias-free visual path. Executed once
    // per image in a well-behaved episode; the call counter backs the
    // efficiency accounting checks.
    Matrix encode_vision(const Matrix& features) {
        if (features.rows != cfg_.n_visual_slots || features.cols != cfg_.d_model)
            throw std::invalid_argument("encode_vision: expected n_visual_slots x d_model features");
        if (!features.all_finite()) throw std::invalid_argument("encode_vision: non-finite features");
        ++vision_encodes_;
        Matrix out(features.rows, cfg_.d_model);
        for (int r = 0; r < features.rows; ++r) {
            matvec_add(w_.vis_proj, features.row(r), out.row(r));
        }
        return out;
    }

    int vision_encode_calls() const { return vision_encodes_; }
    void reset_vision_counter() { vision_encodes_ = 0; }

    // Runs all layers for one new position attending over cache + itself.
    // drift_step is the decoding step index t; visual columns receive a
    // -drift_lambda * t pre-softmax bias in every layer. When plan is present
    // the FCI boost applies inside its layer band, newest query row only.
    // commit appends the resulting keys/values to the cache.
    ForwardResult forward_step(KvCache& cache, std::span<const double> embedding,
                               const ModalityPartition& part, const InterventionPlan* plan,
                               bool commit, int drift_step, bool capture = true) const {
        if (static_cast<int>(embedding.size()) != cfg_.d_model)
            throw std::invalid_argument("forward_step: embedding width mismatch");
        if (cache.len >= cfg_.max_seq)
            throw std::length_error("forward_step: cache at max_seq capacity");
        if (plan) plan->validate(cfg_.n_layers);

        const int n_pos = cache.len + 1;
        const int dh = cfg_.d_head();
        const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
        const double drift = w_.drift_lambda * static_cast<double>(drift_step);

        ForwardResult res;
        res.captured = capture;
        res.kv.k.assign(cfg_.n_layers, std::vector<double>(cfg_.d_model, 0.0));
        res.kv.v.assign(cfg_.n_layers, std::vector<double>(cfg_.d_model, 0.0));
        if (capture) {
            res.scores.reserve(cfg_.n_layers);
            res.attention.reserve(cfg_.n_layers);
            res.hidden.reserve(cfg_.n_layers);
        }

        std::vector<double> h(embedding.begin(), embedding.end());
        std::vector<double> x(cfg_.d_model), q(cfg_.d_model), ctx(cfg_.d_model);
        std::vector<double> ff_mid(4 * cfg_.d_model);

        for (int l = 0; l < cfg_.n_layers; ++l) {
            const LayerWeights& lw = w_.layers[l];
            rmsnorm(h, x);

            auto& k_new = res.kv.k[l];
            auto& v_new = res.kv.v[l];
            std::fill(q.begin(), q.end(), 0.0);
            matvec_add(lw.wq, x, q);
            matvec_add(lw.wk, x, k_new);
            matvec_add(lw.wv, x, v_new);

            // attention only matters for the output when wv/wo are nonzero,
            // or when the caller asked for capture
            if (capture || !attn_zero_[l]) {
                Matrix rows(cfg_.n_heads, n_pos);
                for (int hd = 0; hd < cfg_.n_heads; ++hd) {
                    std::span<const double> qh(q.data() + hd * dh, static_cast<size_t>(dh));
                    for (int j = 0; j < cache.len; ++j) {
                        std::span<const double> kj(cache.k[l].row(j).data() + hd * dh,
                                                   static_cast<size_t>(dh));
                        rows.at(hd, j) = dot(qh, kj) * inv_scale;
                    }
                    std::span<const double> ks(k_new.data() + hd * dh, static_cast<size_t>(dh));
                    rows.at(hd, n_pos - 1) = dot(qh, ks) * inv_scale;
                }
                if (drift != 0.0) {
                    int nv = std::min(part.n_visual, n_pos);
                    for (int hd = 0; hd < cfg_.n_heads; ++hd)
                        for (int j = 0; j < nv; ++j) rows.at(hd, j) -= drift;
                }
                if (plan && plan->beta && plan->in_band(l)) fci_boost(rows, *plan);

                Matrix att(cfg_.n_heads, n_pos);
                for (int hd = 0; hd < cfg_.n_heads; ++hd) {
                    auto p = softmax_row(rows.row(hd));
                    std::copy(p.begin(), p.end(), att.row(hd).begin());
                }

                if (!attn_zero_[l]) {
                    std::fill(ctx.begin(), ctx.end(), 0.0);
                    for (int hd = 0; hd < cfg_.n_heads; ++hd) {
                        double* cslice = ctx.data() + hd * dh;
                        for (int j = 0; j < cache.len; ++j) {
                            const double a = att.at(hd, j);
                            if (a == 0.0) continue;
                            const double* vj = cache.v[l].row(j).data() + hd * dh;
                            for (int d = 0; d < dh; ++d) cslice[d] += a * vj[d];
                        }
                        const double a = att.at(hd, n_pos - 1);
                        const double* vs = v_new.data() + hd * dh;
                        for (int d = 0; d < dh; ++d) cslice[d] += a * vs[d];
                    }
                    matvec_add(lw.wo, ctx, h);
                }
                if (capture) {
                    res.scores.push_back(std::move(rows));
                    res.attention.push_back(std::move(att));
                }
            }

            if (!ff_zero_[l]) {
                rmsnorm(h, x);
                std::fill(ff_mid.begin(), ff_mid.end(), 0.0);
                matvec_add(lw.ff1, x, ff_mid);
                for (double& v : ff_mid) v = v > 0.0 ? v : 0.0;  // relu
                matvec_add(lw.ff2, ff_mid, h);
            }
            if (capture) res.hidden.push_back(h);
        }

        rmsnorm(h, x);
        res.logits.assign(cfg_.vocab_size, 0.0);
        matvec_add(w_.unembed, x, res.logits);

        if (commit) append(cache, res.kv);
        return res;
    }

    // Appends the keys/values of a finished forward to the cache. Exposed
    // separately so the decode loop can decide after gating which pass
    // (intervened or not) persists.
    void append(KvCache& cache, const NewKv& kv) const {
        if (cache.len >= cfg_.max_seq) throw std::length_error("append: cache at max_seq capacity");
        for (int l = 0; l < cfg_.n_layers; ++l) {
            std::copy(kv.k[l].begin(), kv.k[l].end(), cache.k[l].row(cache.len).begin());
            std::copy(kv.v[l].begin(), kv.v[l].end(), cache.v[l].row(cache.len).begin());
        }
        ++cache.len;
    }

  private:
    const DecoderConfig& cfg_;
    const DecoderWeights& w_;
    std::vector<bool> attn_zero_, ff_zero_;
    int vision_encodes_ = 0;
};

}  // namespace cgvlm
