#pragma once

// Planted text-inertia scenarios: handcrafted decoders where the visually
// correct token and the prior-biased token are known analytically, plus the
// comparison runner for baseline / gated / static arms and parameter sweeps.
//
// Scenario construction. The vocabulary is PAD, BOS, EOS, 8 content tokens,
// 8 function tokens (f0 is the "trigger" word), 8 bias-context tokens (one
// per content class) and 5 fillers. Visual slots carry a one-hot evidence of
// the episode's true class. Four attention-head roles are planted in the
// layer band:
//   heads 0,1  readers: attend visual slots strongly after a trigger token,
//              avoid them otherwise; they carry visual class evidence.
//   head 2     prior head: active after trigger tokens, keyed to the bias
//              context token; carries the prior class evidence scaled by rho.
//   head 3     context head: keyed away from visual slots; carries the flat
//              function-word activation.
// Only the middle layer actually routes values into the logit head, so the
// intervention band is causally load-bearing while shallow and deep layers
// just shape attention telemetry. The drift bias -lambda*t erodes the
// readers' visual mass as generation proceeds; once it drops below the prior
// head's contribution, the biased class outranks the true class at content
// steps. The boost recovers roughly half the drift in score space, which is
// enough to keep the true class on top for most of the episode.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "cgvlm/coalitions.hpp"
#include "cgvlm/decode.hpp"
#include "cgvlm/decoder.hpp"
#include "cgvlm/telemetry.hpp"

namespace cgvlm {

struct ScenarioSpec {
    int n_content = 8;
    int n_function = 8;
    int n_context = 8;  // one bias-context token per content class
    int n_filler = 5;
    int n_visual_slots = 16;
    int n_layers = 12;
    int n_heads = 4;
    int d_model = 32;
    int band_lo = 4;
    int band_hi = 8;
    int max_new_tokens = 24;
    int episodes = 500;
    uint64_t seed = 2024;

    double drift_lambda = 0.15;  // visual-column drift strength
    double prior_rho = 2.0;      // prior-pathway evidence strength

    // construction constants: effective pre-softmax scores and read gains
    double reader_on = 3.2;    // reader visual score after a trigger token
    double reader_off = 2.0;   // reader visual suppression otherwise
    double prior_vis = 1.0;    // prior-head visual score at content steps
    double prior_ctx = 2.2;    // prior-head score on the bias context token
    double context_pin = -4.5; // context-head visual lean
    double gain_reader = 0.1;  // visual class evidence per reader head
    double gain_prior = 0.65;  // prior class evidence gain
    double gain_context = 0.05;
    double w_content = 48.0;  // unembedding gains
    double w_function = 60.0;

    int vocab_size() const { return 3 + n_content + n_function + n_context + n_filler; }
    int pad_token() const { return 0; }
    int bos_token() const { return 1; }
    int eos_token() const { return 2; }
    int content_token(int cls) const { return 3 + cls; }
    int function_token(int i) const { return 3 + n_content + i; }
    int trigger_token() const { return function_token(0); }
    int context_token(int cls) const { return 3 + n_content + n_function + cls; }
    int filler_token(int i) const { return 3 + n_content + n_function + n_context + i; }

    void validate() const {
        if (n_content < 2) throw std::invalid_argument("ScenarioSpec: need at least 2 content classes");
        if (n_function < 2 || n_context < n_content || n_filler < 0 || n_visual_slots < 1 ||
            episodes < 1 || max_new_tokens < 1)
            throw std::invalid_argument("ScenarioSpec: inconsistent sizes");
        if (d_model != 32 || n_heads != 4)
            throw std::invalid_argument("ScenarioSpec: construction requires d_model 32 with 4 heads");
        if (drift_lambda < 0.0 || prior_rho < 0.0)
            throw std::invalid_argument("ScenarioSpec: drift and prior strengths must be >= 0");
    }
};

// Embedding channel layout used by the construction.
namespace planted {
inline constexpr int kEvidence = 0;      // 0..7   visual class evidence
inline constexpr int kTrigger = 8;       // trigger marker (BOS, f0)
inline constexpr int kNonTrigger = 9;    // every other text token and PAD
inline constexpr int kBias = 10;         // bias-context marker
inline constexpr int kVisual = 11;       // visual-slot marker
inline constexpr int kText = 12;         // real text marker (PAD excluded)
inline constexpr int kPrior = 13;        // 13..20 prior class evidence
inline constexpr int kClassAcc = 21;     // 21..28 class accumulator
inline constexpr int kFuncAcc = 29;      // function-word activation
inline constexpr int kReadLayerOffset = 2;  // read layer = band centre
}  // namespace planted

struct PlantedModel {
    DecoderConfig config;
    DecoderWeights weights;
    std::vector<TokenClass> token_classes;
};

// Ground truth for one episode: the class shown in the image, the biased
// class suggested by the prompt's context token, and the prompt itself.
struct PlantedEpisode {
    Matrix image_features;
    std::vector<int> prompt;
    int true_token = -1;
    int biased_token = -1;
    int context_token = -1;
};

inline PlantedModel build_planted_decoder(const ScenarioSpec& spec) {
    spec.validate();
    namespace pl = planted;

    PlantedModel model;
    DecoderConfig& cfg = model.config;
    cfg.n_layers = spec.n_layers;
    cfg.n_heads = spec.n_heads;
    cfg.d_model = spec.d_model;
    cfg.vocab_size = spec.vocab_size();
    cfg.n_visual_slots = spec.n_visual_slots;
    cfg.band_lo = spec.band_lo;
    cfg.band_hi = spec.band_hi;
    cfg.pad_token = spec.pad_token();
    cfg.max_seq = spec.n_visual_slots + 4 + spec.max_new_tokens + 8;
    const int dm = cfg.d_model;
    const int dh = cfg.d_head();

    DecoderWeights& w = model.weights;
    w.drift_lambda = spec.drift_lambda;
    w.embedding = Matrix(cfg.vocab_size, dm);
    w.vis_proj = Matrix(dm, dm);
    for (int d = 0; d < dm; ++d) w.vis_proj.at(d, d) = 1.0;  // bias-free identity path
    w.unembed = Matrix(cfg.vocab_size, dm);
    w.layers.resize(cfg.n_layers);
    for (auto& l : w.layers) {
        l.wq = Matrix(dm, dm);
        l.wk = Matrix(dm, dm);
        l.wv = Matrix(dm, dm);
        l.wo = Matrix(dm, dm);
        l.ff1 = Matrix(4 * dm, dm);
        l.ff2 = Matrix(dm, 4 * dm);
    }

    // --- embeddings ---
    auto& emb = w.embedding;
    model.token_classes.assign(cfg.vocab_size, TokenClass::Other);
    emb.at(spec.pad_token(), pl::kNonTrigger) = 1.0;  // pads suppress the readers
    emb.at(spec.bos_token(), pl::kTrigger) = 1.0;
    emb.at(spec.bos_token(), pl::kText) = 1.0;
    emb.at(spec.eos_token(), pl::kText) = 1.0;
    for (int c = 0; c < spec.n_content; ++c) {
        int tok = spec.content_token(c);
        emb.at(tok, pl::kNonTrigger) = 1.0;
        emb.at(tok, pl::kText) = 1.0;
        model.token_classes[tok] = TokenClass::Content;
    }
    for (int i = 0; i < spec.n_function; ++i) {
        int tok = spec.function_token(i);
        emb.at(tok, i == 0 ? pl::kTrigger : pl::kNonTrigger) = 1.0;
        emb.at(tok, pl::kText) = 1.0;
        model.token_classes[tok] = TokenClass::Function;
    }
    for (int c = 0; c < spec.n_context; ++c) {
        int tok = spec.context_token(c);
        emb.at(tok, pl::kNonTrigger) = 1.0;
        emb.at(tok, pl::kBias) = 1.0;
        emb.at(tok, pl::kText) = 1.0;
        if (c < spec.n_content) emb.at(tok, pl::kPrior + c) = spec.prior_rho;
    }
    for (int i = 0; i < spec.n_filler; ++i) {
        int tok = spec.filler_token(i);
        emb.at(tok, pl::kNonTrigger) = 1.0;
        emb.at(tok, pl::kText) = 1.0;
    }

    // normalization factors seen by the attention projections
    auto rms_of = [dm](std::span<const double> row) {
        double ms = 0.0;
        for (double v : row) ms += v * v;
        return std::sqrt(ms / dm + 1e-6);
    };
    const double n_marker2 = 1.0 / rms_of(emb.row(spec.content_token(0)));   // two unit dims
    const double n_pad = 1.0 / rms_of(emb.row(spec.pad_token()));            // one unit dim
    const double n_vis = n_marker2;                                          // evidence + marker
    const double n_ctx = 1.0 / rms_of(emb.row(spec.context_token(0)));
    const double scale = std::sqrt(static_cast<double>(dh));

    // --- attention band ---
    // query channels sit on dim 8h of each head's slice; keys likewise
    for (int l = spec.band_lo; l <= spec.band_hi; ++l) {
        LayerWeights& lw = w.layers[l];
        auto q_entry = [&](int head, int col, double v) { lw.wq.at(head * dh, col) = v; };
        auto k_entry = [&](int head, int col, double v) { lw.wk.at(head * dh, col) = v; };

        // readers: +reader_on after triggers, -reader_off otherwise
        for (int head : {0, 1}) {
            q_entry(head, pl::kTrigger, spec.reader_on / n_marker2);
            q_entry(head, pl::kNonTrigger, -spec.reader_off / n_marker2);
            k_entry(head, pl::kVisual, scale / n_vis);
        }
        // prior head: gated by the trigger marker, keyed to bias + visual
        q_entry(2, pl::kTrigger, 1.0 / n_marker2);
        k_entry(2, pl::kVisual, spec.prior_vis * scale / n_vis);
        k_entry(2, pl::kBias, spec.prior_ctx * scale / n_ctx);
        // context head: active for any real text query, pinned off the visuals
        q_entry(3, pl::kText, 1.0 / n_marker2);
        k_entry(3, pl::kVisual, spec.context_pin * scale / n_vis);
    }

    // --- value routing, read layer only ---
    {
        LayerWeights& lw = w.layers[spec.band_lo + planted::kReadLayerOffset];
        for (int j = 0; j < spec.n_content; ++j) {
            lw.wv.at(0 * dh + j, pl::kEvidence + j) = spec.gain_reader;
            lw.wv.at(1 * dh + j, pl::kEvidence + j) = spec.gain_reader;
            lw.wv.at(2 * dh + j, pl::kPrior + j) = spec.gain_prior;
            lw.wo.at(pl::kClassAcc + j, 0 * dh + j) = 1.0;
            lw.wo.at(pl::kClassAcc + j, 1 * dh + j) = 1.0;
            lw.wo.at(pl::kClassAcc + j, 2 * dh + j) = 1.0;
        }
        lw.wv.at(3 * dh, pl::kText) = spec.gain_context;
        lw.wo.at(pl::kFuncAcc, 3 * dh) = 1.0;
    }

    // --- logit head ---
    for (int c = 0; c < spec.n_content; ++c)
        w.unembed.at(spec.content_token(c), pl::kClassAcc + c) = spec.w_content;
    for (int i = 0; i < spec.n_function; ++i)
        w.unembed.at(spec.function_token(i), pl::kFuncAcc) = spec.w_function;
    for (int i = 0; i < spec.n_filler; ++i)
        w.unembed.at(spec.filler_token(i), pl::kFuncAcc) = spec.w_function;

    w.validate(cfg);
    return model;
}

inline uint64_t episode_seed(uint64_t master, int episode) {
    // splitmix64 over (master, episode) for independent per-episode streams
    uint64_t z = master + 0x9e3779b97f4a7c15ULL * static_cast<uint64_t>(episode + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline PlantedEpisode build_episode(const ScenarioSpec& spec, int episode) {
    Rng rng(episode_seed(spec.seed, episode));
    PlantedEpisode ep;
    int true_cls = static_cast<int>(rng.next() % spec.n_content);
    int biased_cls = static_cast<int>(rng.next() % (spec.n_content - 1));
    if (biased_cls >= true_cls) ++biased_cls;
    ep.true_token = spec.content_token(true_cls);
    ep.biased_token = spec.content_token(biased_cls);
    ep.context_token = spec.context_token(biased_cls);
    ep.prompt = {spec.bos_token(), ep.context_token, spec.trigger_token()};

    ep.image_features = Matrix(spec.n_visual_slots, spec.d_model);
    for (int s = 0; s < spec.n_visual_slots; ++s) {
        ep.image_features.at(s, planted::kEvidence + true_cls) = 1.0;
        ep.image_features.at(s, planted::kVisual) = 1.0;
    }
    return ep;
}

// A content step is any step whose query token is a trigger word (BOS or
// f0): the planted script expects the image's true class there.
inline bool is_content_step(const ScenarioSpec& spec, int query_token) {
    return query_token == spec.bos_token() || query_token == spec.trigger_token();
}

// Marks content steps and hallucinations against the planted ground truth.
inline void mark_ground_truth(const ScenarioSpec& spec, const PlantedEpisode& ep,
                              EpisodeReport& rep) {
    int prev = ep.prompt.back();
    rep.content_steps = 0;
    rep.hallucinated_steps = 0;
    for (size_t i = 0; i < rep.steps.size(); ++i) {
        StepTrace& tr = rep.steps[i];
        tr.content_step = is_content_step(spec, prev);
        tr.hallucinated = tr.content_step && tr.token != ep.true_token;
        rep.content_steps += tr.content_step ? 1 : 0;
        rep.hallucinated_steps += tr.hallucinated ? 1 : 0;
        prev = tr.token;
    }
    rep.hallucination_rate =
        rep.content_steps > 0
            ? static_cast<double>(rep.hallucinated_steps) / rep.content_steps
            : 0.0;
}

struct ArmSpec {
    std::string name;
    GateMode gate = GateMode::Cds;
    double threshold = 0.0;  // entropy / margin gates
};

struct ArmResult {
    std::string name;
    GateMode gate = GateMode::Cds;
    double threshold = 0.0;
    long content_steps = 0;
    long hallucinated_steps = 0;
    double hallucination_rate = 0.0;
    double trigger_rate = 0.0;
    double mean_distinct2 = 0.0;
    long total_forwards = 0;
    long total_steps = 0;
    long vision_encodes = 0;
    // over triggered steps
    double median_hdi_pre = 0.0, median_hdi_post = 0.0;
    double median_ratio_pre = 0.0, median_ratio_post = 0.0;
    // per token class
    double content_trigger_rate = 0.0;
    double function_trigger_rate = 0.0;
    double mean_d_content = 0.0;
    double mean_d_function = 0.0;
};

struct RunComparison {
    ScenarioSpec spec;
    DecodePolicy policy;
    std::vector<ArmResult> arms;

    const ArmResult& arm(const std::string& name) const {
        for (const auto& a : arms)
            if (a.name == name) return a;
        throw std::invalid_argument("RunComparison: unknown arm " + name);
    }
};

namespace detail {

inline double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct EpisodeAccumulator {
    long content_steps = 0;
    long halluc_steps = 0;
    long triggers = 0;
    long steps = 0;
    long forwards = 0;
    long vision_encodes = 0;
    double distinct2_sum = 0.0;
    int episodes = 0;
    std::vector<double> hdi_pre, hdi_post, ratio_pre, ratio_post;  // triggered steps
    long content_class_steps = 0, content_class_triggers = 0;
    long function_class_steps = 0, function_class_triggers = 0;
    double d_content_sum = 0.0, d_function_sum = 0.0;

    void add(const EpisodeReport& rep) {
        ++episodes;
        content_steps += rep.content_steps;
        halluc_steps += rep.hallucinated_steps;
        steps += static_cast<long>(rep.steps.size());
        forwards += rep.total_forwards;
        vision_encodes += rep.vision_encodes;
        distinct2_sum += rep.distinct2_score;
        for (const auto& tr : rep.steps) {
            if (tr.beta) {
                ++triggers;
                hdi_pre.push_back(tr.hdi_pre);
                hdi_post.push_back(tr.hdi_post);
                ratio_pre.push_back(tr.ratio_pre);
                ratio_post.push_back(tr.ratio_post);
            }
            if (tr.token_class == TokenClass::Content) {
                ++content_class_steps;
                content_class_triggers += tr.beta ? 1 : 0;
                d_content_sum += tr.d;
            } else if (tr.token_class == TokenClass::Function) {
                ++function_class_steps;
                function_class_triggers += tr.beta ? 1 : 0;
                d_function_sum += tr.d;
            }
        }
    }

    void merge(const EpisodeAccumulator& o) {
        episodes += o.episodes;
        content_steps += o.content_steps;
        halluc_steps += o.halluc_steps;
        triggers += o.triggers;
        steps += o.steps;
        forwards += o.forwards;
        vision_encodes += o.vision_encodes;
        distinct2_sum += o.distinct2_sum;
        hdi_pre.insert(hdi_pre.end(), o.hdi_pre.begin(), o.hdi_pre.end());
        hdi_post.insert(hdi_post.end(), o.hdi_post.begin(), o.hdi_post.end());
        ratio_pre.insert(ratio_pre.end(), o.ratio_pre.begin(), o.ratio_pre.end());
        ratio_post.insert(ratio_post.end(), o.ratio_post.begin(), o.ratio_post.end());
        content_class_steps += o.content_class_steps;
        content_class_triggers += o.content_class_triggers;
        function_class_steps += o.function_class_steps;
        function_class_triggers += o.function_class_triggers;
        d_content_sum += o.d_content_sum;
        d_function_sum += o.d_function_sum;
    }

    ArmResult finish(const ArmSpec& arm) const {
        ArmResult r;
        r.name = arm.name;
        r.gate = arm.gate;
        r.threshold = arm.threshold;
        r.content_steps = content_steps;
        r.hallucinated_steps = halluc_steps;
        r.hallucination_rate =
            content_steps > 0 ? static_cast<double>(halluc_steps) / content_steps : 0.0;
        r.trigger_rate = steps > 0 ? static_cast<double>(triggers) / steps : 0.0;
        r.mean_distinct2 = episodes > 0 ? distinct2_sum / episodes : 0.0;
        r.total_forwards = forwards;
        r.total_steps = steps;
        r.vision_encodes = vision_encodes;
        r.median_hdi_pre = median_of(hdi_pre);
        r.median_hdi_post = median_of(hdi_post);
        r.median_ratio_pre = median_of(ratio_pre);
        r.median_ratio_post = median_of(ratio_post);
        r.content_trigger_rate = content_class_steps > 0
                                     ? static_cast<double>(content_class_triggers) / content_class_steps
                                     : 0.0;
        r.function_trigger_rate =
            function_class_steps > 0
                ? static_cast<double>(function_class_triggers) / function_class_steps
                : 0.0;
        r.mean_d_content = content_class_steps > 0 ? d_content_sum / content_class_steps : 0.0;
        r.mean_d_function = function_class_steps > 0 ? d_function_sum / function_class_steps : 0.0;
        return r;
    }
};

// Runs episodes [0, spec.episodes) through fn, optionally across threads;
// reduction order is fixed by episode index regardless of the thread count.
template <typename PerEpisode>
inline EpisodeAccumulator run_episodes(const ScenarioSpec& spec, int jobs, PerEpisode fn) {
    int n = spec.episodes;
    jobs = std::max(1, std::min(jobs, n));
    std::vector<EpisodeAccumulator> parts(static_cast<size_t>(jobs));
    if (jobs == 1) {
        for (int e = 0; e < n; ++e) fn(e, parts[0]);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(jobs);
        for (int j = 0; j < jobs; ++j) {
            pool.emplace_back([&, j]() {
                for (int e = j; e < n; e += jobs) fn(e, parts[j]);
            });
        }
        for (auto& t : pool) t.join();
    }
    EpisodeAccumulator total;
    for (const auto& p : parts) total.merge(p);
    return total;
}

}  // namespace detail

inline DecodePolicy default_policy(const ScenarioSpec& spec) {
    DecodePolicy pol;
    pol.strategy = Strategy::Nucleus;
    pol.max_new_tokens = spec.max_new_tokens;
    pol.k = 8;
    pol.kappa = 1.8;
    pol.alpha = 0.5;
    pol.band_lo = spec.band_lo;
    pol.band_hi = spec.band_hi;
    pol.eos_token = spec.eos_token();
    return pol;
}

// Runs one arm over all episodes with paired per-episode seeds.
inline ArmResult run_arm(const PlantedModel& model, const ScenarioSpec& spec,
                         const DecodePolicy& base_policy, const ArmSpec& arm, int jobs = 1) {
    GateConfig gate{arm.gate, arm.threshold};
    auto acc = detail::run_episodes(spec, jobs, [&](int e, detail::EpisodeAccumulator& out) {
        PlantedEpisode ep = build_episode(spec, e);
        Decoder dec(model.config, model.weights);
        DecodePolicy pol = base_policy;
        pol.seed = episode_seed(spec.seed ^ 0x5eedULL, e);  // shared across arms
        EpisodeReport rep = (pol.strategy == Strategy::Beam && pol.beam_width > 1)
                                ? beam_generate(dec, ep.image_features, ep.prompt, pol, gate,
                                                &model.token_classes)
                                : generate(dec, ep.image_features, ep.prompt, pol, gate,
                                           &model.token_classes);
        mark_ground_truth(spec, ep, rep);
        out.add(rep);
    });
    return acc.finish(arm);
}

// Calibrates an entropy or margin threshold so the gate fires on roughly the
// same fraction of steps as a reference trigger rate, using per-step stats
// collected from baseline episodes.
inline double calibrate_gate_threshold(const PlantedModel& model, const ScenarioSpec& spec,
                                       const DecodePolicy& base_policy, GateMode mode,
                                       double target_rate, int jobs = 1) {
    if (mode != GateMode::Entropy && mode != GateMode::Margin)
        throw std::invalid_argument("calibrate_gate_threshold: entropy or margin gates only");
    std::vector<std::vector<double>> parts(static_cast<size_t>(std::max(1, jobs)));
    int n = spec.episodes;
    int effective_jobs = std::max(1, std::min(jobs, n));
    parts.resize(static_cast<size_t>(effective_jobs));

    auto collect = [&](int e, std::vector<double>& stats) {
        PlantedEpisode ep = build_episode(spec, e);
        Decoder dec(model.config, model.weights);
        DecodePolicy pol = base_policy;
        pol.seed = episode_seed(spec.seed ^ 0x5eedULL, e);
        CoalitionCaches cc = init_episode(dec, ep.image_features, ep.prompt);
        Rng rng(pol.seed);
        for (int t = 0; t < pol.max_new_tokens; ++t) {
            // replicate the baseline trajectory while recording gate statistics
            ForwardResult full = full_forward(dec, cc, nullptr, t, /*capture=*/false);
            if (mode == GateMode::Entropy) {
                stats.push_back(entropy(softmax_row(full.logits)));
            } else {
                double top1 = -std::numeric_limits<double>::infinity(), top2 = top1;
                for (double v : full.logits) {
                    if (v > top1) {
                        top2 = top1;
                        top1 = v;
                    } else if (v > top2) {
                        top2 = v;
                    }
                }
                stats.push_back(top1 - top2);
            }
            AuxResult aux = auxiliary_logits(dec, cc, t);
            int token = detail::choose_token(full.logits, pol, rng);
            append_committed_token(dec, cc, token, full.kv, aux);
            if (pol.eos_token >= 0 && token == pol.eos_token) break;
        }
    };

    if (effective_jobs == 1) {
        for (int e = 0; e < n; ++e) collect(e, parts[0]);
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < effective_jobs; ++j)
            pool.emplace_back([&, j]() {
                for (int e = j; e < n; e += effective_jobs) collect(e, parts[j]);
            });
        for (auto& t : pool) t.join();
    }
    std::vector<double> stats;
    for (auto& p : parts) stats.insert(stats.end(), p.begin(), p.end());
    if (stats.empty()) throw std::logic_error("calibrate_gate_threshold: no steps collected");
    std::sort(stats.begin(), stats.end());
    target_rate = std::clamp(target_rate, 0.0, 1.0);
    if (mode == GateMode::Entropy) {
        // fire when entropy exceeds the (1 - rate) quantile
        size_t idx = static_cast<size_t>((1.0 - target_rate) * (stats.size() - 1));
        return stats[idx];
    }
    // fire when the top-2 margin is below the rate quantile
    size_t idx = static_cast<size_t>(target_rate * (stats.size() - 1));
    return stats[idx];
}

// Paired comparison across arms. Entropy/margin thresholds of value 0 are
// auto-calibrated against the CDS arm's trigger rate.
inline RunComparison run_comparison(const PlantedModel& model, const ScenarioSpec& spec,
                                    const DecodePolicy& policy, std::vector<ArmSpec> arms,
                                    int jobs = 1) {
    if (arms.empty()) throw std::invalid_argument("run_comparison: need at least one arm");
    RunComparison cmp;
    cmp.spec = spec;
    cmp.policy = policy;

    double cds_trigger_rate = -1.0;
    auto ensure_cds_rate = [&]() {
        if (cds_trigger_rate < 0.0) {
            ArmSpec probe{"cds-probe", GateMode::Cds, 0.0};
            cds_trigger_rate = run_arm(model, spec, policy, probe, jobs).trigger_rate;
        }
        return cds_trigger_rate;
    };

    for (ArmSpec arm : arms) {
        if ((arm.gate == GateMode::Entropy || arm.gate == GateMode::Margin) && arm.threshold == 0.0)
            arm.threshold =
                calibrate_gate_threshold(model, spec, policy, arm.gate, ensure_cds_rate(), jobs);
        ArmResult res = run_arm(model, spec, policy, arm, jobs);
        if (arm.gate == GateMode::Cds) cds_trigger_rate = res.trigger_rate;
        cmp.arms.push_back(res);
    }
    return cmp;
}

inline std::vector<ArmSpec> standard_arms() {
    return {{"baseline", GateMode::Never, 0.0},
            {"cg", GateMode::Cds, 0.0},
            {"static", GateMode::Always, 0.0},
            {"entropy", GateMode::Entropy, 0.0},
            {"margin", GateMode::Margin, 0.0}};
}

// --- sweeps ---

enum class SweepParam { Kappa, Alpha, Band, Stat };

inline SweepParam sweep_param_from_string(const std::string& s) {
    if (s == "kappa") return SweepParam::Kappa;
    if (s == "alpha") return SweepParam::Alpha;
    if (s == "band") return SweepParam::Band;
    if (s == "stat") return SweepParam::Stat;
    throw std::invalid_argument("unknown sweep parameter: " + s);
}

struct SweepPoint {
    std::string label;
    ArmResult baseline;
    ArmResult cg;
};

struct SweepTable {
    SweepParam param = SweepParam::Kappa;
    std::vector<SweepPoint> points;
};

struct BandRange {
    int lo = 0, hi = 0;
};

// One comparison per grid point: baseline is shared context, the gated arm
// varies in the swept parameter.
inline SweepTable sweep_kappa_grid(const PlantedModel& model, const ScenarioSpec& spec,
                                   const DecodePolicy& policy, std::span<const double> grid,
                                   int jobs = 1) {
    if (grid.empty()) throw std::invalid_argument("sweep: empty grid");
    SweepTable table;
    table.param = SweepParam::Kappa;
    ArmResult base = run_arm(model, spec, policy, {"baseline", GateMode::Never, 0.0}, jobs);
    for (double kappa : grid) {
        DecodePolicy pol = policy;
        pol.kappa = kappa;
        SweepPoint pt;
        pt.label = format_double(kappa);
        pt.baseline = base;
        pt.cg = run_arm(model, spec, pol, {"cg", GateMode::Cds, 0.0}, jobs);
        table.points.push_back(std::move(pt));
    }
    return table;
}

inline SweepTable sweep_alpha_grid(const PlantedModel& model, const ScenarioSpec& spec,
                                   const DecodePolicy& policy, std::span<const double> grid,
                                   int jobs = 1) {
    if (grid.empty()) throw std::invalid_argument("sweep: empty grid");
    SweepTable table;
    table.param = SweepParam::Alpha;
    ArmResult base = run_arm(model, spec, policy, {"baseline", GateMode::Never, 0.0}, jobs);
    for (double alpha : grid) {
        DecodePolicy pol = policy;
        pol.alpha = alpha;
        SweepPoint pt;
        pt.label = format_double(alpha);
        pt.baseline = base;
        pt.cg = run_arm(model, spec, pol, {"cg", GateMode::Cds, 0.0}, jobs);
        table.points.push_back(std::move(pt));
    }
    return table;
}

inline SweepTable sweep_band_grid(const PlantedModel& model, const ScenarioSpec& spec,
                                  const DecodePolicy& policy, std::span<const BandRange> grid,
                                  int jobs = 1) {
    if (grid.empty()) throw std::invalid_argument("sweep: empty grid");
    SweepTable table;
    table.param = SweepParam::Band;
    ArmResult base = run_arm(model, spec, policy, {"baseline", GateMode::Never, 0.0}, jobs);
    for (const BandRange& band : grid) {
        DecodePolicy pol = policy;
        pol.band_lo = band.lo;
        pol.band_hi = band.hi;
        SweepPoint pt;
        pt.label = std::to_string(band.lo) + ":" + std::to_string(band.hi);
        pt.baseline = base;
        pt.cg = run_arm(model, spec, pol, {"cg", GateMode::Cds, 0.0}, jobs);
        table.points.push_back(std::move(pt));
    }
    return table;
}

inline SweepTable sweep_stat_grid(const PlantedModel& model, const ScenarioSpec& spec,
                                  const DecodePolicy& policy, std::span<const BoostStat> grid,
                                  int jobs = 1) {
    if (grid.empty()) throw std::invalid_argument("sweep: empty grid");
    SweepTable table;
    table.param = SweepParam::Stat;
    ArmResult base = run_arm(model, spec, policy, {"baseline", GateMode::Never, 0.0}, jobs);
    for (BoostStat stat : grid) {
        DecodePolicy pol = policy;
        pol.stat = stat;
        SweepPoint pt;
        pt.label = to_string(stat);
        pt.baseline = base;
        pt.cg = run_arm(model, spec, pol, {"cg", GateMode::Cds, 0.0}, jobs);
        table.points.push_back(std::move(pt));
    }
    return table;
}

}  // namespace cgvlm
