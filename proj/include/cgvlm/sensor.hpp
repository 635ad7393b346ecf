#pragma once

// Cognitive demand sensor: per-candidate Harsanyi interactions between the
// vision and text streams, their variance over the top-k candidate set, and
// the binary gate that arms the intervention.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "cgvlm/numerics.hpp"

namespace cgvlm {

// I_y = l(V,T) - l(V) - l(T) + l(empty). Additive modality contributions
// cancel exactly; what survives is the joint (synergistic) part.
inline double harsanyi_interaction(double logit_full, double logit_v, double logit_t,
                                   double logit_none) {
    if (!std::isfinite(logit_full) || !std::isfinite(logit_v) || !std::isfinite(logit_t) ||
        !std::isfinite(logit_none))
        throw std::domain_error("harsanyi_interaction: non-finite logit");
    return logit_full - logit_v - logit_t + logit_none;
}

// Top-k candidates of the FULL-condition logits, sorted by descending logit,
// ties broken by ascending token index. k is clamped to the vocabulary size.
struct CandidateSet {
    std::vector<int> tokens;
    std::vector<double> full_logits;

    int size() const { return static_cast<int>(tokens.size()); }
};

inline CandidateSet top_k_candidates(std::span<const double> logits, int k) {
    if (k < 2) throw std::invalid_argument("top_k_candidates: need k >= 2");
    int n = static_cast<int>(logits.size());
    if (n < 2) throw std::invalid_argument("top_k_candidates: need at least 2 logits");
    int keep = std::min(k, n);

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (logits[a] != logits[b]) return logits[a] > logits[b];
        return a < b;
    });

    CandidateSet cs;
    cs.tokens.assign(order.begin(), order.begin() + keep);
    cs.full_logits.reserve(keep);
    for (int i = 0; i < keep; ++i) cs.full_logits.push_back(logits[cs.tokens[i]]);
    return cs;
}

struct InteractionRecord {
    int step = 0;
    std::vector<int> tokens;
    std::vector<double> interactions;
    double variance = 0.0;  // D_t
    double kappa = 0.0;
    bool gate = false;  // beta_t = 1[D_t > kappa], strict inequality
};

inline InteractionRecord sense(const CandidateSet& candidates, std::span<const double> v_logits,
                               std::span<const double> t_logits, std::span<const double> none_logits,
                               double kappa, int step = 0) {
    if (candidates.size() < 2) throw std::invalid_argument("sense: insufficient candidates");
    InteractionRecord rec;
    rec.step = step;
    rec.kappa = kappa;
    rec.tokens = candidates.tokens;
    rec.interactions.reserve(candidates.tokens.size());
    for (size_t i = 0; i < candidates.tokens.size(); ++i) {
        int tok = candidates.tokens[i];
        if (tok < 0 || tok >= static_cast<int>(v_logits.size()) ||
            tok >= static_cast<int>(t_logits.size()) || tok >= static_cast<int>(none_logits.size()))
            throw std::invalid_argument("sense: auxiliary logits do not cover candidate index");
        rec.interactions.push_back(harsanyi_interaction(candidates.full_logits[i], v_logits[tok],
                                                        t_logits[tok], none_logits[tok]));
    }
    rec.variance = variance(rec.interactions);
    rec.gate = rec.variance > kappa;
    return rec;
}

// Trigger-rate curve over a kappa grid; non-increasing by construction.
inline std::vector<double> sweep_kappa(std::span<const double> d_trace,
                                       std::span<const double> grid) {
    if (d_trace.empty()) throw std::invalid_argument("sweep_kappa: empty trace");
    if (grid.empty()) throw std::invalid_argument("sweep_kappa: empty grid");
    std::vector<double> rates;
    rates.reserve(grid.size());
    for (double kappa : grid) {
        int fired = 0;
        for (double d : d_trace)
            if (d > kappa) ++fired;
        rates.push_back(static_cast<double>(fired) / static_cast<double>(d_trace.size()));
    }
    return rates;
}

}  // namespace cgvlm
