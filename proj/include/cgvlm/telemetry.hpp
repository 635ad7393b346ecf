#pragma once

// Mechanistic metrics and per-step traces: head divergence index, visual
// attention ratio, Distinct-2, per-class trigger statistics, and the CSV /
// report serializations used by the CLI.

#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cgvlm/decoder.hpp"
#include "cgvlm/numerics.hpp"

namespace cgvlm {

enum class TokenClass { Content, Function, Other };

inline const char* to_string(TokenClass c) {
    switch (c) {
        case TokenClass::Content: return "content";
        case TokenClass::Function: return "function";
        case TokenClass::Other: return "other";
    }
    return "?";
}

// Head divergence index: mean KL over all ordered head pairs. Zero iff all
// head distributions agree; invariant under head permutation.
inline double hdi(const Matrix& head_rows) {
    if (head_rows.rows < 2) throw std::invalid_argument("hdi: need at least 2 heads");
    double acc = 0.0;
    for (int a = 0; a < head_rows.rows; ++a) {
        for (int b = 0; b < head_rows.rows; ++b) {
            if (a == b) continue;
            acc += kl_divergence(head_rows.row(a), head_rows.row(b));
        }
    }
    return acc / (static_cast<double>(head_rows.rows) * (head_rows.rows - 1));
}

// Probability mass an attention row places on the visual slots.
inline double visual_attention_ratio(std::span<const double> row, int n_visual) {
    if (n_visual < 0 || n_visual > static_cast<int>(row.size()))
        throw std::out_of_range("visual_attention_ratio: visual span out of bounds");
    double acc = 0.0;
    for (int j = 0; j < n_visual; ++j) acc += row[j];
    return acc;
}

// Unique-bigram / total-bigram ratio of a generated sequence.
inline double distinct2(std::span<const int> tokens) {
    if (tokens.size() < 2) throw std::invalid_argument("distinct2: need at least 2 tokens");
    std::map<std::pair<int, int>, int> seen;
    for (size_t i = 0; i + 1 < tokens.size(); ++i) seen[{tokens[i], tokens[i + 1]}]++;
    return static_cast<double>(seen.size()) / static_cast<double>(tokens.size() - 1);
}

enum class HdiMode { CenterLayer, BandMean };

// HDI of a captured forward: either the single layer at the center of the
// band (default) or the mean over all band layers.
inline double capture_hdi(const ForwardResult& res, int band_lo, int band_hi,
                          HdiMode mode = HdiMode::CenterLayer) {
    if (!res.captured || res.attention.empty())
        throw std::invalid_argument("capture_hdi: forward was run without capture");
    int n_layers = static_cast<int>(res.attention.size());
    if (band_lo > band_hi || band_lo < 0 || band_hi >= n_layers)
        throw std::invalid_argument("capture_hdi: band out of range");
    if (mode == HdiMode::CenterLayer) {
        return hdi(res.attention[(band_lo + band_hi) / 2]);
    }
    double acc = 0.0;
    for (int l = band_lo; l <= band_hi; ++l) acc += hdi(res.attention[l]);
    return acc / static_cast<double>(band_hi - band_lo + 1);
}

// Visual attention ratio aggregated as the mean over heads of the band layers.
inline double capture_visual_ratio(const ForwardResult& res, int band_lo, int band_hi,
                                   int n_visual) {
    if (!res.captured || res.attention.empty())
        throw std::invalid_argument("capture_visual_ratio: forward was run without capture");
    int n_layers = static_cast<int>(res.attention.size());
    if (band_lo > band_hi || band_lo < 0 || band_hi >= n_layers)
        throw std::invalid_argument("capture_visual_ratio: band out of range");
    double acc = 0.0;
    int count = 0;
    for (int l = band_lo; l <= band_hi; ++l) {
        const Matrix& att = res.attention[l];
        for (int h = 0; h < att.rows; ++h) {
            acc += visual_attention_ratio(att.row(h), n_visual);
            ++count;
        }
    }
    return acc / static_cast<double>(count);
}

struct StepTrace {
    int step = 0;
    int token = -1;
    TokenClass token_class = TokenClass::Other;
    bool beta = false;
    double d = 0.0;  // interaction variance at this step
    double hdi_pre = 0.0, hdi_post = 0.0;
    double ratio_pre = 0.0, ratio_post = 0.0;
    int fwd_count = 0;
    // filled by the harness when ground truth is known
    bool content_step = false;
    bool hallucinated = false;
};

struct EpisodeReport {
    std::vector<StepTrace> steps;
    std::vector<int> tokens;
    double trigger_rate = 0.0;
    double distinct2_score = 0.0;
    long total_forwards = 0;  // decode-time forwards: 4 per step plus one per trigger
    long prefill_forwards = 0;
    int vision_encodes = 0;
    // ground-truth metrics, filled by the harness
    int content_steps = 0;
    int hallucinated_steps = 0;
    double hallucination_rate = 0.0;

    int triggered_steps() const {
        int n = 0;
        for (const auto& s : steps) n += s.beta ? 1 : 0;
        return n;
    }
};

struct ClassStats {
    TokenClass token_class = TokenClass::Other;
    int steps = 0;
    int triggers = 0;
    double trigger_rate = 0.0;
    double mean_d = 0.0;
};

// Per-token-class trigger counts and mean interaction variance.
inline std::vector<ClassStats> trigger_stats(std::span<const StepTrace> traces) {
    if (traces.empty()) throw std::invalid_argument("trigger_stats: empty traces");
    std::map<TokenClass, ClassStats> acc;
    for (const auto& t : traces) {
        ClassStats& c = acc[t.token_class];
        c.token_class = t.token_class;
        c.steps += 1;
        c.triggers += t.beta ? 1 : 0;
        c.mean_d += t.d;
    }
    std::vector<ClassStats> out;
    for (auto& [cls, stats] : acc) {
        stats.trigger_rate = static_cast<double>(stats.triggers) / stats.steps;
        stats.mean_d /= stats.steps;
        out.push_back(stats);
    }
    return out;
}

// 17 significant digits round-trip 64-bit floats exactly.
inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline constexpr const char* kStepsCsvSchema = "# cgvlm.steps.v1";
inline constexpr const char* kStepsCsvHeader =
    "step,token,class,beta,D,hdi_pre,hdi_post,var_ratio_pre,var_ratio_post,fwd_count";

inline void write_steps_csv_header(std::ostream& os) {
    os << kStepsCsvSchema << "\n" << kStepsCsvHeader << "\n";
}

inline void write_steps_csv_rows(std::ostream& os, std::span<const StepTrace> traces) {
    for (const auto& t : traces) {
        os << t.step << ',' << t.token << ',' << to_string(t.token_class) << ','
           << (t.beta ? 1 : 0) << ',' << format_double(t.d) << ',' << format_double(t.hdi_pre)
           << ',' << format_double(t.hdi_post) << ',' << format_double(t.ratio_pre) << ','
           << format_double(t.ratio_post) << ',' << t.fwd_count << "\n";
    }
}

inline void write_episode_report(std::ostream& os, const EpisodeReport& r) {
    os << "# cgvlm.report.v1\n";
    os << "steps = " << r.steps.size() << "\n";
    os << "trigger_rate = " << format_double(r.trigger_rate) << "\n";
    os << "distinct2 = " << format_double(r.distinct2_score) << "\n";
    os << "total_forwards = " << r.total_forwards << "\n";
    os << "prefill_forwards = " << r.prefill_forwards << "\n";
    os << "vision_encodes = " << r.vision_encodes << "\n";
    os << "content_steps = " << r.content_steps << "\n";
    os << "hallucinated_steps = " << r.hallucinated_steps << "\n";
    os << "hallucination_rate = " << format_double(r.hallucination_rate) << "\n";
}

}  // namespace cgvlm
