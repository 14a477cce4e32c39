#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "anoclass/core/errors.hpp"
#include "anoclass/harness/stats.hpp"

namespace anoclass::harness {

/// Result of one (category, shot) pair across seeds.
struct ResultRow {
    std::string category;
    std::size_t shot = 0;
    double mean_pct = 0;
    double std_pct = 0;
    std::size_t seeds = 0;
    std::string config_hash;
    std::vector<double> accuracies;  // per seed in [0,1], seed order; optional
};

inline ResultRow make_row(std::string category, std::size_t shot, std::vector<double> accuracies, std::string hash) {
    const auto s = summarize(accuracies);
    return {std::move(category), shot, s.mean_pct, s.std_pct, s.seeds, std::move(hash), std::move(accuracies)};
}

inline constexpr const char* kAverageLabel = "Average";

/// Mean of the category means for one shot. The spread is the sample std of
/// the per-seed cross-category averages when every row carries the same
/// number of per-seed accuracies, and the mean of the category stds otherwise.
inline ResultRow average_row(const std::vector<ResultRow>& rows, std::size_t shot) {
    std::vector<const ResultRow*> sel;
    for (const auto& r : rows)
        if (r.shot == shot && r.category != kAverageLabel) sel.push_back(&r);
    if (sel.empty()) throw ArgumentError("no rows for shot " + std::to_string(shot));
    ResultRow avg{kAverageLabel, shot, 0, 0, sel.front()->seeds, sel.front()->config_hash, {}};
    for (const auto* r : sel) avg.mean_pct += r->mean_pct;
    avg.mean_pct /= static_cast<double>(sel.size());

    const std::size_t k = sel.front()->accuracies.size();
    const bool aligned = k > 0 && std::all_of(sel.begin(), sel.end(), [&](const ResultRow* r) { return r->accuracies.size() == k; });
    if (aligned) {
        std::vector<double> per_seed(k, 0.0);
        for (const auto* r : sel)
            for (std::size_t i = 0; i < k; ++i) per_seed[i] += r->accuracies[i] / static_cast<double>(sel.size());
        avg.std_pct = 100.0 * sample_std(per_seed);
    } else {
        for (const auto* r : sel) avg.std_pct += r->std_pct / static_cast<double>(sel.size());
    }
    for (const auto* r : sel)
        if (r->config_hash != avg.config_hash) avg.config_hash = "mixed";
    return avg;
}

/// Category rows followed by one Average row per shot, shots ascending.
inline std::vector<ResultRow> with_averages(const std::vector<ResultRow>& rows) {
    if (rows.empty()) throw ArgumentError("report needs at least one row");
    std::set<std::size_t> shots;
    std::vector<ResultRow> out;
    for (const auto& r : rows) {
        if (r.category == kAverageLabel) continue;
        shots.insert(r.shot);
        out.push_back(r);
    }
    std::stable_sort(out.begin(), out.end(), [](const ResultRow& a, const ResultRow& b) { return a.shot < b.shot; });
    for (auto s : shots) out.push_back(average_row(rows, s));
    return out;
}

inline std::string format_pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline void write_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows) {
    std::ofstream out(path);
    if (!out) throw ArgumentError("cannot write " + path.string());
    out << "category,shot,mean_pct,std_pct,seeds,config_hash\n";
    for (const auto& r : rows)
        out << r.category << ',' << r.shot << ',' << format_pct(r.mean_pct) << ',' << format_pct(r.std_pct) << ',' << r.seeds << ','
            << r.config_hash << '\n';
}

/// Category x shot grid of "mean ± std" cells; missing cells show "-".
inline std::string markdown_table(const std::vector<ResultRow>& rows) {
    std::vector<std::string> cats;
    std::set<std::size_t> shots;
    std::map<std::pair<std::string, std::size_t>, std::string> cell;
    for (const auto& r : rows) {
        if (std::find(cats.begin(), cats.end(), r.category) == cats.end() && r.category != kAverageLabel) cats.push_back(r.category);
        shots.insert(r.shot);
        cell[{r.category, r.shot}] = format_mean_std(r.mean_pct, r.std_pct) + (r.seeds == 1 ? " (1 seed)" : "");
    }
    cats.push_back(kAverageLabel);
    std::string md = "| Category |";
    std::string rule = "|---|";
    for (auto s : shots) {
        md += " " + std::to_string(s) + "-shot |";
        rule += "---|";
    }
    md += "\n" + rule + "\n";
    for (const auto& c : cats) {
        md += "| " + c + " |";
        for (auto s : shots) {
            auto it = cell.find({c, s});
            md += " " + (it == cell.end() ? std::string("-") : it->second) + " |";
        }
        md += "\n";
    }
    return md;
}

/// Writes results.csv and results.md under `out_dir`; returns the rows
/// including the Average rows.
inline std::vector<ResultRow> write_report(const std::vector<ResultRow>& rows, const std::filesystem::path& out_dir) {
    const auto all = with_averages(rows);
    std::filesystem::create_directories(out_dir);
    write_csv(out_dir / "results.csv", all);
    std::ofstream(out_dir / "results.md") << markdown_table(all);
    return all;
}

inline nlohmann::json to_json(const ResultRow& r) {
    return {{"category", r.category}, {"shot", r.shot},   {"mean_pct", r.mean_pct},       {"std_pct", r.std_pct},
            {"seeds", r.seeds},       {"accuracies", r.accuracies}, {"config_hash", r.config_hash}};
}

}  // namespace anoclass::harness
