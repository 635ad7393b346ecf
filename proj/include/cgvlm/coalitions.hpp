#pragma once

// The four masked-condition decoder states used to evaluate Harsanyi
// coalitions: FULL (image + text), V_ONLY (text padded), T_ONLY (vision
// zeroed) and NONE (both masked). Each condition owns an incremental KV
// cache; vision features are encoded once per episode and shared. Auxiliary
// evaluations reuse these caches, so a step costs four decoder forwards plus
// one more when the intervention re-run fires.

#include <array>
#include <span>
#include <stdexcept>
#include <vector>

#include "cgvlm/decoder.hpp"

namespace cgvlm {

enum class CoalitionId { Full = 0, VOnly = 1, TOnly = 2, None = 3 };

inline constexpr int kNumCoalitions = 4;

inline const char* to_string(CoalitionId id) {
    switch (id) {
        case CoalitionId::Full: return "full";
        case CoalitionId::VOnly: return "v_only";
        case CoalitionId::TOnly: return "t_only";
        case CoalitionId::None: return "none";
    }
    return "?";
}

struct CoalitionCaches {
    std::array<KvCache, kNumCoalitions> caches;
    Matrix vision_real;  // encoded once per episode
    Matrix vision_zero;
    std::array<long, kNumCoalitions> forwards{};  // decode-time forward counts
    long prefill_forwards = 0;
    std::vector<int> prompt;
    ModalityPartition partition;
    bool mask_prompt = true;  // pads cover prompt text in V_ONLY / NONE
    int pending_real = -1;    // next query token for FULL / T_ONLY
    int pending_masked = -1;  // next query token for V_ONLY / NONE
    int pad_token = 0;

    KvCache& cache(CoalitionId id) { return caches[static_cast<int>(id)]; }
    const KvCache& cache(CoalitionId id) const { return caches[static_cast<int>(id)]; }

    long total_decode_forwards() const {
        long t = 0;
        for (long f : forwards) t += f;
        return t;
    }

    int committed_length() const { return caches[0].len; }

    bool lengths_in_lockstep() const {
        for (int i = 1; i < kNumCoalitions; ++i)
            if (caches[i].len != caches[0].len) return false;
        return true;
    }

    int pending_token(CoalitionId id) const {
        return (id == CoalitionId::Full || id == CoalitionId::TOnly) ? pending_real : pending_masked;
    }
};

// Result of one batched auxiliary evaluation of the three non-FULL
// conditions, including the keys/values needed to grow each cache without
// recomputation.
struct AuxResult {
    std::vector<double> v_only, t_only, none;
    NewKv kv_v, kv_t, kv_n;
};

// Seeds all four caches: vision encoded once (zeros for the masked side),
// prompt committed except its last token, which becomes the first pending
// query. All caches end at the same committed length.
inline CoalitionCaches init_episode(Decoder& dec, const Matrix& image_features,
                                    std::span<const int> prompt, bool mask_prompt = true) {
    if (prompt.empty()) throw std::invalid_argument("init_episode: prompt must be non-empty");
    const DecoderConfig& cfg = dec.config();
    for (int tok : prompt)
        if (tok < 0 || tok >= cfg.vocab_size) throw std::invalid_argument("init_episode: prompt token out of range");

    CoalitionCaches cc;
    cc.prompt.assign(prompt.begin(), prompt.end());
    cc.partition.n_visual = cfg.n_visual_slots;
    cc.mask_prompt = mask_prompt;
    cc.pad_token = cfg.pad_token;
    cc.vision_real = dec.encode_vision(image_features);
    cc.vision_zero = Matrix(cfg.n_visual_slots, cfg.d_model);
    for (auto& kv : cc.caches) kv = dec.make_cache();

    auto prefill_position = [&](CoalitionId id, std::span<const double> emb) {
        dec.forward_step(cc.cache(id), emb, cc.partition, nullptr, /*commit=*/true,
                         /*drift_step=*/0, /*capture=*/false);
        ++cc.prefill_forwards;
    };

    for (int s = 0; s < cfg.n_visual_slots; ++s) {
        prefill_position(CoalitionId::Full, cc.vision_real.row(s));
        prefill_position(CoalitionId::VOnly, cc.vision_real.row(s));
        prefill_position(CoalitionId::TOnly, cc.vision_zero.row(s));
        prefill_position(CoalitionId::None, cc.vision_zero.row(s));
    }
    for (size_t i = 0; i + 1 < cc.prompt.size(); ++i) {
        int real = cc.prompt[i];
        int masked = mask_prompt ? cfg.pad_token : real;
        prefill_position(CoalitionId::Full, dec.weights().embedding.row(real));
        prefill_position(CoalitionId::TOnly, dec.weights().embedding.row(real));
        prefill_position(CoalitionId::VOnly, dec.weights().embedding.row(masked));
        prefill_position(CoalitionId::None, dec.weights().embedding.row(masked));
    }
    cc.pending_real = cc.prompt.back();
    cc.pending_masked = mask_prompt ? cfg.pad_token : cc.prompt.back();
    return cc;
}

// FULL-condition forward for the current pending query. No commit; the
// decode loop appends after gating decides which pass persists.
inline ForwardResult full_forward(Decoder& dec, CoalitionCaches& cc, const InterventionPlan* plan,
                                  int drift_step, bool capture = true) {
    ++cc.forwards[static_cast<int>(CoalitionId::Full)];
    return dec.forward_step(cc.cache(CoalitionId::Full),
                            dec.weights().embedding.row(cc.pending_real), cc.partition, plan,
                            /*commit=*/false, drift_step, capture);
}

// Evaluates V_ONLY, T_ONLY and NONE for the current step in one batched
// call. Each condition is an independent forward over its own cache, so the
// batch is bitwise identical to three sequential evaluations.
inline AuxResult auxiliary_logits(Decoder& dec, CoalitionCaches& cc, int drift_step) {
    AuxResult out;
    auto run = [&](CoalitionId id) {
        ++cc.forwards[static_cast<int>(id)];
        return dec.forward_step(cc.cache(id), dec.weights().embedding.row(cc.pending_token(id)),
                                cc.partition, nullptr, /*commit=*/false, drift_step,
                                /*capture=*/false);
    };
    ForwardResult rv = run(CoalitionId::VOnly);
    ForwardResult rt = run(CoalitionId::TOnly);
    ForwardResult rn = run(CoalitionId::None);
    out.v_only = std::move(rv.logits);
    out.kv_v = std::move(rv.kv);
    out.t_only = std::move(rt.logits);
    out.kv_t = std::move(rt.kv);
    out.none = std::move(rn.logits);
    out.kv_n = std::move(rn.kv);
    return out;
}

// Thin per-condition wrapper for direct probing of one coalition's logits.
inline std::vector<double> coalition_logits(Decoder& dec, CoalitionCaches& cc, CoalitionId id,
                                            int drift_step) {
    ++cc.forwards[static_cast<int>(id)];
    return dec
        .forward_step(cc.cache(id), dec.weights().embedding.row(cc.pending_token(id)),
                      cc.partition, nullptr, /*commit=*/false, drift_step, /*capture=*/false)
        .logits;
}

// Grows all four caches by one position: the pending query is committed
// (full_kv decides whether the intervened states persist on FULL), and the
// chosen token becomes the next pending query. The masked text stream keeps
// growing as pads.
inline void append_committed_token(Decoder& dec, CoalitionCaches& cc, int chosen_token,
                                   const NewKv& full_kv, const AuxResult& aux) {
    if (chosen_token < 0 || chosen_token >= dec.config().vocab_size)
        throw std::invalid_argument("append_committed_token: token out of range");
    dec.append(cc.cache(CoalitionId::Full), full_kv);
    dec.append(cc.cache(CoalitionId::VOnly), aux.kv_v);
    dec.append(cc.cache(CoalitionId::TOnly), aux.kv_t);
    dec.append(cc.cache(CoalitionId::None), aux.kv_n);
    if (!cc.lengths_in_lockstep())
        throw std::logic_error("append_committed_token: coalition caches diverged");
    cc.pending_real = chosen_token;
    cc.pending_masked = cc.pad_token;
}

}  // namespace cgvlm
