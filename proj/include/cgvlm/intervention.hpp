#pragma once

// Focused consensus induction: a gated pre-softmax boost of visual-column
// attention scores on the newest query row. The boost added to a column is
// the cross-head aggregate of the magnitudes of the original scores at that
// column, scaled by alpha, and is identical for every head.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "cgvlm/numerics.hpp"

namespace cgvlm {

enum class BoostStat { MeanAbs, MedianAbs, MaxAbs };

inline const char* to_string(BoostStat s) {
    switch (s) {
        case BoostStat::MeanAbs: return "mean_abs";
        case BoostStat::MedianAbs: return "median_abs";
        case BoostStat::MaxAbs: return "max_abs";
    }
    return "?";
}

inline BoostStat boost_stat_from_string(const std::string& s) {
    if (s == "mean_abs") return BoostStat::MeanAbs;
    if (s == "median_abs") return BoostStat::MedianAbs;
    if (s == "max_abs") return BoostStat::MaxAbs;
    throw std::invalid_argument("unknown boost statistic: " + s);
}

struct InterventionPlan {
    bool beta = true;                 // gate; false leaves scores untouched
    double alpha = 0.5;               // gain
    std::vector<int> visual_cols;     // columns eligible for the boost
    int band_lo = 4;                  // inclusive layer band
    int band_hi = 8;
    BoostStat stat = BoostStat::MeanAbs;

    bool in_band(int layer) const { return layer >= band_lo && layer <= band_hi; }

    void validate(int n_layers) const {
        if (!std::isfinite(alpha) || alpha < 0.0)
            throw std::invalid_argument("InterventionPlan: alpha must be finite and >= 0");
        // an empty effective band (band_lo > band_hi) is allowed and disables hooks
        if (band_lo <= band_hi && (band_lo < 0 || band_hi >= n_layers))
            throw std::invalid_argument("InterventionPlan: layer band out of range");
    }
};

namespace detail {
inline double column_stat(const std::vector<double>& mags, BoostStat stat) {
    switch (stat) {
        case BoostStat::MeanAbs: {
            double acc = 0.0;
            for (double v : mags) acc += v;
            return acc / static_cast<double>(mags.size());
        }
        case BoostStat::MedianAbs: {
            std::vector<double> s(mags);
            std::sort(s.begin(), s.end());
            size_t n = s.size();
            return n % 2 == 1 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
        }
        case BoostStat::MaxAbs:
            return *std::max_element(mags.begin(), mags.end());
    }
    return 0.0;
}
}  // namespace detail

// In-place boost of the newest query row's scores, one row per head
// (rows shape H x n_cols). The right-hand side uses the original scores:
// head order does not matter and the added term is head-independent.
inline void fci_boost(Matrix& rows, const InterventionPlan& plan) {
    if (rows.rows < 1) throw std::invalid_argument("fci_boost: no head rows");
    if (!plan.beta || plan.alpha == 0.0) return;

    std::vector<double> mags(rows.rows);
    std::vector<double> boost;
    boost.reserve(plan.visual_cols.size());
    for (int col : plan.visual_cols) {
        if (col < 0 || col >= rows.cols) throw std::invalid_argument("fci_boost: visual column out of range");
        for (int h = 0; h < rows.rows; ++h) mags[h] = std::abs(rows.at(h, col));
        boost.push_back(plan.alpha * detail::column_stat(mags, plan.stat));
    }
    for (size_t i = 0; i < plan.visual_cols.size(); ++i) {
        int col = plan.visual_cols[i];
        for (int h = 0; h < rows.rows; ++h) rows.at(h, col) += boost[i];
    }
}

}  // namespace cgvlm
