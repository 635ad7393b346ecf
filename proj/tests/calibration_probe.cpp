// Hidden diagnostics for tuning the planted-scenario constants. Run with:
//   ./unit_tests "[.probe]" --reporter console
#include <catch2/catch_amalgamated.hpp>

#include <cstdio>

#include "cgvlm/harness.hpp"

using namespace cgvlm;

TEST_CASE("step diagnostics on one planted episode", "[.probe]") {
    ScenarioSpec spec;
    spec.episodes = 1;
    PlantedModel model = build_planted_decoder(spec);
    PlantedEpisode ep = build_episode(spec, 0);
    DecodePolicy pol = default_policy(spec);
    pol.seed = 7;

    Decoder dec(model.config, model.weights);
    CoalitionCaches cc = init_episode(dec, ep.image_features, ep.prompt);
    Rng rng(pol.seed);
    GateConfig gate{GateMode::Cds, 0.0};

    std::printf("ep: true=%d biased=%d ctx=%d prompt=[%d %d %d]\n", ep.true_token,
                ep.biased_token, ep.context_token, ep.prompt[0], ep.prompt[1], ep.prompt[2]);
    std::printf("%4s %8s %6s %8s %8s %8s %8s %6s\n", "t", "type", "tok", "D", "ratio",
                "rPost", "hdi", "beta");

    int prev = ep.prompt.back();
    for (int t = 0; t < pol.max_new_tokens; ++t) {
        bool content = is_content_step(spec, prev);
        StepOutcome out = decode_step(dec, cc, pol, gate, t, rng, &model.token_classes);
        std::printf("%4d %8s %6d %8.3f %8.3f %8.3f %8.3f %6d\n", t,
                    content ? "CONTENT" : "func", out.token, out.trace.d, out.trace.ratio_pre,
                    out.trace.ratio_post, out.trace.hdi_pre, out.trace.beta ? 1 : 0);
        prev = out.token;
    }
}

TEST_CASE("planted logit curves", "[.probe]") {
    ScenarioSpec spec;
    PlantedModel model = build_planted_decoder(spec);
    PlantedEpisode ep = build_episode(spec, 0);
    DecodePolicy pol = default_policy(spec);

    // Trace FULL logits for a scripted trajectory: alternate trigger/content
    // emissions manually so every even step is a content step.
    Decoder dec(model.config, model.weights);
    CoalitionCaches cc = init_episode(dec, ep.image_features, ep.prompt);

    std::printf("scripted: content steps at even t (query=f0), function steps odd\n");
    std::printf("%4s %9s %9s %9s %9s %9s %9s %9s %9s\n", "t", "lT*", "lB", "lFunc", "D",
                "ratio", "hdiPre", "postT*", "postB");

    for (int t = 0; t < pol.max_new_tokens; ++t) {
        ForwardResult full = full_forward(dec, cc, nullptr, t, true);
        CandidateSet cand = top_k_candidates(full.logits, pol.k);
        AuxResult aux = auxiliary_logits(dec, cc, t);
        InteractionRecord rec = sense(cand, aux.v_only, aux.t_only, aux.none, pol.kappa, t);

        double max_func = -1e30;
        for (int i = 0; i < spec.n_function; ++i)
            max_func = std::max(max_func, full.logits[spec.function_token(i)]);

        InterventionPlan plan;
        plan.alpha = pol.alpha;
        plan.visual_cols = cc.partition.visual_cols();
        plan.band_lo = pol.band_lo;
        plan.band_hi = pol.band_hi;
        ForwardResult boosted = full_forward(dec, cc, &plan, t, true);

        std::printf("%4d %9.2f %9.2f %9.2f %9.3f %9.3f %9.3f %9.2f %9.2f\n", t,
                    full.logits[ep.true_token], full.logits[ep.biased_token], max_func,
                    rec.variance, capture_visual_ratio(full, pol.band_lo, pol.band_hi,
                                                       cc.partition.n_visual),
                    capture_hdi(full, pol.band_lo, pol.band_hi),
                    boosted.logits[ep.true_token], boosted.logits[ep.biased_token]);

        // script: emit the true token at content steps, trigger token otherwise
        int emit = (t % 2 == 0) ? ep.true_token : spec.trigger_token();
        append_committed_token(dec, cc, emit, full.kv, aux);
    }
}

TEST_CASE("arm comparison summary", "[.probe]") {
    ScenarioSpec spec;
    spec.episodes = 120;
    PlantedModel model = build_planted_decoder(spec);
    DecodePolicy pol = default_policy(spec);

    RunComparison cmp = run_comparison(model, spec, pol, standard_arms(), 2);
    std::printf("%-10s %8s %8s %8s %9s %9s %9s %9s %9s\n", "arm", "halluc", "trigger",
                "dist2", "hdiPre", "hdiPost", "ratPre", "ratPost", "fwd/step");
    for (const auto& a : cmp.arms) {
        std::printf("%-10s %8.3f %8.3f %8.3f %9.3f %9.3f %9.3f %9.3f %9.3f\n", a.name.c_str(),
                    a.hallucination_rate, a.trigger_rate, a.mean_distinct2, a.median_hdi_pre,
                    a.median_hdi_post, a.median_ratio_pre, a.median_ratio_post,
                    a.total_steps > 0 ? static_cast<double>(a.total_forwards) / a.total_steps
                                      : 0.0);
    }
    std::printf("content trigger rate (cg): %.3f function: %.3f  meanD content %.2f func %.3f\n",
                cmp.arm("cg").content_trigger_rate, cmp.arm("cg").function_trigger_rate,
                cmp.arm("cg").mean_d_content, cmp.arm("cg").mean_d_function);
}
