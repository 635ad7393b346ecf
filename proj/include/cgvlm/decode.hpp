#pragma once

// Per-step control loop: FULL forward, top-k candidate extraction, batched
// auxiliary passes, gate evaluation, optional intervened re-run, sampling and
// commit. Greedy, nucleus and beam strategies share the same step machinery;
// beam hypotheses each carry their own four coalition caches.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "cgvlm/coalitions.hpp"
#include "cgvlm/decoder.hpp"
#include "cgvlm/intervention.hpp"
#include "cgvlm/sensor.hpp"
#include "cgvlm/telemetry.hpp"

namespace cgvlm {

enum class Strategy { Greedy, Nucleus, Beam };

inline const char* to_string(Strategy s) {
    switch (s) {
        case Strategy::Greedy: return "greedy";
        case Strategy::Nucleus: return "nucleus";
        case Strategy::Beam: return "beam";
    }
    return "?";
}

inline Strategy strategy_from_string(const std::string& s) {
    if (s == "greedy") return Strategy::Greedy;
    if (s == "nucleus") return Strategy::Nucleus;
    if (s == "beam") return Strategy::Beam;
    throw std::invalid_argument("unknown strategy: " + s);
}

// How beta_t is decided. Cds is the interaction-variance gate; Never and
// Always are the baseline and static-intervention arms; Entropy and Margin
// are the alternative gate callbacks used by the comparison harness.
enum class GateMode { Cds, Never, Always, Entropy, Margin };

inline const char* to_string(GateMode m) {
    switch (m) {
        case GateMode::Cds: return "cds";
        case GateMode::Never: return "never";
        case GateMode::Always: return "always";
        case GateMode::Entropy: return "entropy";
        case GateMode::Margin: return "margin";
    }
    return "?";
}

inline GateMode gate_mode_from_string(const std::string& s) {
    if (s == "cds") return GateMode::Cds;
    if (s == "never") return GateMode::Never;
    if (s == "always") return GateMode::Always;
    if (s == "entropy") return GateMode::Entropy;
    if (s == "margin") return GateMode::Margin;
    throw std::invalid_argument("unknown gate mode: " + s);
}

struct GateConfig {
    GateMode mode = GateMode::Cds;
    double threshold = 0.0;  // entropy / margin gates only
};

struct DecodePolicy {
    Strategy strategy = Strategy::Nucleus;
    double temperature = 1.0;
    double top_p = 1.0;
    int beam_width = 1;
    int max_new_tokens = 24;
    int k = 8;            // CDS candidate count
    double kappa = 1.8;   // CDS threshold
    double alpha = 0.5;   // FCI gain
    int band_lo = 4;
    int band_hi = 8;
    BoostStat stat = BoostStat::MeanAbs;
    bool persist_intervention = true;
    HdiMode hdi_mode = HdiMode::CenterLayer;
    uint64_t seed = 0;
    int eos_token = -1;  // -1 disables early stop

    void validate() const {
        if (max_new_tokens < 1) throw std::invalid_argument("DecodePolicy: max_new_tokens must be >= 1");
        if (beam_width < 1) throw std::invalid_argument("DecodePolicy: beam_width must be >= 1");
        if (!(temperature > 0.0)) throw std::invalid_argument("DecodePolicy: temperature must be > 0");
        if (!(top_p > 0.0 && top_p <= 1.0)) throw std::invalid_argument("DecodePolicy: top_p out of (0,1]");
        if (k < 2) throw std::invalid_argument("DecodePolicy: k must be >= 2");
        if (!(alpha >= 0.0)) throw std::invalid_argument("DecodePolicy: alpha must be >= 0");
        if (std::isnan(kappa)) throw std::invalid_argument("DecodePolicy: kappa must not be NaN");
    }
};

inline bool evaluate_gate(const GateConfig& gate, const InteractionRecord& rec,
                          std::span<const double> full_logits) {
    switch (gate.mode) {
        case GateMode::Cds: return rec.gate;
        case GateMode::Never: return false;
        case GateMode::Always: return true;
        case GateMode::Entropy: {
            auto p = softmax_row(full_logits);
            return entropy(p) > gate.threshold;
        }
        case GateMode::Margin: {
            double top1 = -std::numeric_limits<double>::infinity();
            double top2 = top1;
            for (double v : full_logits) {
                if (v > top1) {
                    top2 = top1;
                    top1 = v;
                } else if (v > top2) {
                    top2 = v;
                }
            }
            return (top1 - top2) < gate.threshold;
        }
    }
    return false;
}

struct StepOutcome {
    int token = -1;
    StepTrace trace;
    InteractionRecord record;
};

namespace detail {
inline int choose_token(std::span<const double> logits, const DecodePolicy& pol, Rng& rng) {
    if (pol.strategy == Strategy::Greedy) return argmax_index(logits);
    auto probs = softmax_row(logits);
    return sample_categorical(probs, rng, pol.top_p, pol.temperature);
}
}  // namespace detail

// One decode step: sense, gate, optionally re-run with the boost armed,
// sample, and commit the pending query to all four coalition caches.
inline StepOutcome decode_step(Decoder& dec, CoalitionCaches& cc, const DecodePolicy& pol,
                               const GateConfig& gate, int step, Rng& rng,
                               const std::vector<TokenClass>* classes = nullptr) {
    ForwardResult full = full_forward(dec, cc, nullptr, step, /*capture=*/true);
    CandidateSet candidates = top_k_candidates(full.logits, pol.k);
    AuxResult aux = auxiliary_logits(dec, cc, step);
    InteractionRecord rec = sense(candidates, aux.v_only, aux.t_only, aux.none, pol.kappa, step);
    bool beta = evaluate_gate(gate, rec, full.logits);

    StepOutcome out;
    out.record = rec;
    StepTrace& tr = out.trace;
    tr.step = step;
    tr.beta = beta;
    tr.d = rec.variance;
    tr.fwd_count = 4 + (beta ? 1 : 0);
    tr.hdi_pre = capture_hdi(full, pol.band_lo, pol.band_hi, pol.hdi_mode);
    tr.ratio_pre = capture_visual_ratio(full, pol.band_lo, pol.band_hi, cc.partition.n_visual);

    ForwardResult boosted;
    const ForwardResult* final_pass = &full;
    if (beta) {
        InterventionPlan plan;
        plan.beta = true;
        plan.alpha = pol.alpha;
        plan.visual_cols = cc.partition.visual_cols();
        plan.band_lo = pol.band_lo;
        plan.band_hi = pol.band_hi;
        plan.stat = pol.stat;
        boosted = full_forward(dec, cc, &plan, step, /*capture=*/true);
        final_pass = &boosted;
        tr.hdi_post = capture_hdi(boosted, pol.band_lo, pol.band_hi, pol.hdi_mode);
        tr.ratio_post = capture_visual_ratio(boosted, pol.band_lo, pol.band_hi, cc.partition.n_visual);
    } else {
        tr.hdi_post = tr.hdi_pre;
        tr.ratio_post = tr.ratio_pre;
    }

    out.token = detail::choose_token(final_pass->logits, pol, rng);
    tr.token = out.token;
    if (classes && out.token < static_cast<int>(classes->size()))
        tr.token_class = (*classes)[out.token];

    const NewKv& commit_kv = (beta && pol.persist_intervention) ? final_pass->kv : full.kv;
    append_committed_token(dec, cc, out.token, commit_kv, aux);
    return out;
}

// Runs an episode to max_new_tokens or the end token; aggregates telemetry.
inline EpisodeReport generate(Decoder& dec, const Matrix& image_features,
                              std::span<const int> prompt, const DecodePolicy& pol,
                              const GateConfig& gate = {},
                              const std::vector<TokenClass>* classes = nullptr,
                              bool mask_prompt = true) {
    pol.validate();
    CoalitionCaches cc = init_episode(dec, image_features, prompt, mask_prompt);
    Rng rng(pol.seed);

    EpisodeReport rep;
    for (int t = 0; t < pol.max_new_tokens; ++t) {
        StepOutcome step = decode_step(dec, cc, pol, gate, t, rng, classes);
        rep.tokens.push_back(step.token);
        rep.steps.push_back(step.trace);
        if (pol.eos_token >= 0 && step.token == pol.eos_token) break;
    }

    rep.total_forwards = cc.total_decode_forwards();
    rep.prefill_forwards = cc.prefill_forwards;
    rep.vision_encodes = dec.vision_encode_calls();
    int triggers = rep.triggered_steps();
    rep.trigger_rate = rep.steps.empty() ? 0.0 : static_cast<double>(triggers) / rep.steps.size();
    rep.distinct2_score = rep.tokens.size() >= 2 ? distinct2(rep.tokens) : 0.0;
    return rep;
}

// Length-normalized beam search. Every hypothesis owns its four coalition
// caches; sensing and intervention run per hypothesis per step. beam_width 1
// degenerates to greedy.
inline EpisodeReport beam_generate(Decoder& dec, const Matrix& image_features,
                                   std::span<const int> prompt, const DecodePolicy& pol,
                                   const GateConfig& gate = {},
                                   const std::vector<TokenClass>* classes = nullptr,
                                   bool mask_prompt = true) {
    pol.validate();

    struct Hypothesis {
        CoalitionCaches cc;
        std::vector<int> tokens;
        std::vector<StepTrace> traces;
        double logprob = 0.0;
        bool done = false;

        double score() const {
            return tokens.empty() ? 0.0 : logprob / static_cast<double>(tokens.size());
        }
    };

    std::vector<Hypothesis> beam(1);
    beam[0].cc = init_episode(dec, image_features, prompt, mask_prompt);
    long episode_forwards = 0;
    long prefill_forwards = beam[0].cc.prefill_forwards;

    for (int t = 0; t < pol.max_new_tokens; ++t) {
        struct Expansion {
            int hyp = 0;
            int token = 0;
            double logprob = 0.0;
            StepTrace trace;
        };
        std::vector<Expansion> pool;
        bool all_done = true;

        for (int hi = 0; hi < static_cast<int>(beam.size()); ++hi) {
            Hypothesis& hyp = beam[hi];
            if (hyp.done) continue;
            all_done = false;

            ForwardResult full = full_forward(dec, hyp.cc, nullptr, t, /*capture=*/true);
            CandidateSet candidates = top_k_candidates(full.logits, pol.k);
            AuxResult aux = auxiliary_logits(dec, hyp.cc, t);
            InteractionRecord rec =
                sense(candidates, aux.v_only, aux.t_only, aux.none, pol.kappa, t);
            bool beta = evaluate_gate(gate, rec, full.logits);

            StepTrace tr;
            tr.step = t;
            tr.beta = beta;
            tr.d = rec.variance;
            tr.fwd_count = 4 + (beta ? 1 : 0);
            tr.hdi_pre = capture_hdi(full, pol.band_lo, pol.band_hi, pol.hdi_mode);
            tr.ratio_pre = capture_visual_ratio(full, pol.band_lo, pol.band_hi,
                                                hyp.cc.partition.n_visual);

            ForwardResult boosted;
            const ForwardResult* final_pass = &full;
            if (beta) {
                InterventionPlan plan;
                plan.beta = true;
                plan.alpha = pol.alpha;
                plan.visual_cols = hyp.cc.partition.visual_cols();
                plan.band_lo = pol.band_lo;
                plan.band_hi = pol.band_hi;
                plan.stat = pol.stat;
                boosted = full_forward(dec, hyp.cc, &plan, t, /*capture=*/true);
                final_pass = &boosted;
                tr.hdi_post = capture_hdi(boosted, pol.band_lo, pol.band_hi, pol.hdi_mode);
                tr.ratio_post = capture_visual_ratio(boosted, pol.band_lo, pol.band_hi,
                                                     hyp.cc.partition.n_visual);
            } else {
                tr.hdi_post = tr.hdi_pre;
                tr.ratio_post = tr.ratio_pre;
            }
            episode_forwards += tr.fwd_count;

            // scoring uses log-probabilities of the post-intervention distribution
            auto probs = softmax_row(final_pass->logits);
            std::vector<int> order(probs.size());
            std::iota(order.begin(), order.end(), 0);
            std::sort(order.begin(), order.end(), [&](int a, int b) {
                if (probs[a] != probs[b]) return probs[a] > probs[b];
                return a < b;
            });
            int width = std::min<int>(pol.beam_width, static_cast<int>(order.size()));
            for (int c = 0; c < width; ++c) {
                Expansion ex;
                ex.hyp = hi;
                ex.token = order[c];
                ex.logprob = hyp.logprob + std::log(probs[order[c]]);
                ex.trace = tr;
                ex.trace.token = ex.token;
                if (classes && ex.token < static_cast<int>(classes->size()))
                    ex.trace.token_class = (*classes)[ex.token];
                pool.push_back(std::move(ex));
            }

            // commit the pending query once per source hypothesis; expansions
            // share the grown cache and diverge only in their pending token
            const NewKv& commit_kv = (beta && pol.persist_intervention) ? final_pass->kv : full.kv;
            append_committed_token(dec, hyp.cc, 0, commit_kv, aux);
        }
        if (all_done) break;

        int new_len = t + 1;
        std::sort(pool.begin(), pool.end(), [&](const Expansion& a, const Expansion& b) {
            double sa = a.logprob / new_len, sb = b.logprob / new_len;
            if (sa != sb) return sa > sb;
            if (a.hyp != b.hyp) return a.hyp < b.hyp;
            return a.token < b.token;
        });

        std::vector<Hypothesis> next;
        for (const Expansion& ex : pool) {
            if (static_cast<int>(next.size()) >= pol.beam_width) break;
            Hypothesis h = beam[ex.hyp];  // value copy keeps hypotheses isolated
            h.cc.pending_real = ex.token;
            h.tokens.push_back(ex.token);
            h.traces.push_back(ex.trace);
            h.logprob = ex.logprob;
            if (pol.eos_token >= 0 && ex.token == pol.eos_token) h.done = true;
            next.push_back(std::move(h));
        }
        // carry finished hypotheses forward alongside fresh expansions
        for (Hypothesis& h : beam) {
            if (h.done && static_cast<int>(next.size()) < 2 * pol.beam_width)
                next.push_back(std::move(h));
        }
        beam = std::move(next);
    }

    const Hypothesis* best = &beam[0];
    for (const Hypothesis& h : beam) {
        if (h.score() > best->score()) best = &h;
    }

    EpisodeReport rep;
    rep.tokens = best->tokens;
    rep.steps = best->traces;
    rep.total_forwards = episode_forwards;
    rep.prefill_forwards = prefill_forwards;
    rep.vision_encodes = dec.vision_encode_calls();
    int triggers = rep.triggered_steps();
    rep.trigger_rate = rep.steps.empty() ? 0.0 : static_cast<double>(triggers) / rep.steps.size();
    rep.distinct2_score = rep.tokens.size() >= 2 ? distinct2(rep.tokens) : 0.0;
    return rep;
}

}  // namespace cgvlm
