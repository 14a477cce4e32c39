#pragma once

#include <cmath>
#include <cstdio>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "anoclass/core/errors.hpp"

namespace anoclass::harness {

inline double mean(std::span<const double> v) {
    if (v.empty()) throw ArgumentError("mean of an empty list");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Standard deviation with the n-1 denominator; 0 for a single value.
inline double sample_std(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

struct Summary {
    double mean_pct = 0;
    double std_pct = 0;
    std::size_t seeds = 0;
    bool single_seed = false;
};

/// Accuracies in [0,1] summarised as percentages.
inline Summary summarize(std::span<const double> accuracies) {
    for (double a : accuracies)
        if (a < 0 || a > 1) throw ArgumentError("accuracy outside [0, 1]");
    return {100.0 * mean(accuracies), 100.0 * sample_std(accuracies), accuracies.size(), accuracies.size() == 1};
}

inline std::string format_mean_std(double mean_pct, double std_pct) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f ± %.2f", mean_pct, std_pct);
    return buf;
}

/// "50.00 ± 7.07" for (0.4, 0.5, 0.6, 0.5, 0.5).
inline std::string format_accuracies(std::span<const double> accuracies) {
    const auto s = summarize(accuracies);
    return format_mean_std(s.mean_pct, s.std_pct);
}

}  // namespace anoclass::harness
