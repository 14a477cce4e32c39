#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "anoclass/core/errors.hpp"
#include "anoclass/core/random.hpp"
#include "anoclass/core/tensor.hpp"

namespace anoclass {

/// A (c3, h, w) map with its class id.
struct Sample {
    Tensor<float> map;
    int label = 0;
};

/// Labelled maps that may live on disk; `load(i)` materialises item i.
/// Pretraining sets are too large to hold in memory at full resolution.
class SampleSource {
public:
    SampleSource() = default;
    SampleSource(std::vector<int> labels, std::function<Tensor<float>(std::size_t)> load)
        : labels_(std::move(labels)), load_(std::move(load)) {}

    static SampleSource in_memory(std::vector<Sample> samples) {
        auto shared = std::make_shared<std::vector<Sample>>(std::move(samples));
        std::vector<int> labels;
        for (const auto& s : *shared) labels.push_back(s.label);
        return SampleSource(std::move(labels), [shared](std::size_t i) { return (*shared)[i].map; });
    }

    std::size_t size() const noexcept { return labels_.size(); }
    int label(std::size_t i) const { return labels_.at(i); }
    const std::vector<int>& labels() const noexcept { return labels_; }
    Tensor<float> load(std::size_t i) const { return load_(i); }

    /// Indices per class, classes ascending, indices in source order.
    std::map<int, std::vector<std::size_t>> by_class() const {
        std::map<int, std::vector<std::size_t>> out;
        for (std::size_t i = 0; i < labels_.size(); ++i) out[labels_[i]].push_back(i);
        return out;
    }

private:
    std::vector<int> labels_;
    std::function<Tensor<float>(std::size_t)> load_;
};

struct IterationRecord {
    std::size_t iteration = 0;
    double loss = 0;
    double accuracy = 0;
};

struct TrainLog {
    std::vector<IterationRecord> records;
    std::size_t iterations = 0;   // optimisation iterations (or epochs) actually run
    bool threshold_reached = false;
    std::string notice;
};

/// Pretraining stops as soon as an iteration's accuracy strictly exceeds the threshold.
inline bool should_stop(double accuracy, double threshold) { return accuracy > threshold; }

/// Number of iterations a run with this accuracy sequence performs.
inline std::size_t stopping_iteration(std::span<const double> accuracies, double threshold, std::size_t max_iterations) {
    const std::size_t n = std::min(accuracies.size(), max_iterations);
    for (std::size_t i = 0; i < n; ++i)
        if (should_stop(accuracies[i], threshold)) return i + 1;
    return n;
}

/// `count` distinct elements of `pool`, order of draw preserved.
template <typename V>
std::vector<V> sample_without_replacement(const std::vector<V>& pool, std::size_t count, Rng& rng) {
    if (count > pool.size()) throw ArgumentError("cannot draw " + std::to_string(count) + " of " + std::to_string(pool.size()));
    std::vector<V> v = pool;
    for (std::size_t i = 0; i < count; ++i) std::swap(v[i], v[i + uniform_index(rng, v.size() - i)]);
    v.resize(count);
    return v;
}

/// Classes holding at least `min_items` samples.
inline std::vector<int> classes_with_at_least(const std::map<int, std::vector<std::size_t>>& groups, std::size_t min_items) {
    std::vector<int> out;
    for (const auto& [label, idx] : groups)
        if (idx.size() >= min_items) out.push_back(label);
    return out;
}

/// Index of the largest score; ties go to the lowest index.
inline std::size_t argmax_lowest(std::span<const double> scores) {
    if (scores.empty()) throw ArgumentError("argmax of an empty score list");
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[best]) best = i;
    return best;
}

/// Per-class mean of `scores` (parallel to `labels`), then argmax with the
/// lowest class id winning ties.
inline int mean_score_argmax(std::span<const double> scores, std::span<const int> labels) {
    if (scores.empty()) throw ArgumentError("empty support set");
    std::map<int, std::pair<double, std::size_t>> acc;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        auto& [sum, n] = acc[labels[i]];
        sum += scores[i];
        ++n;
    }
    std::vector<double> means;
    std::vector<int> ids;
    for (const auto& [label, sn] : acc) {
        ids.push_back(label);
        means.push_back(sn.first / static_cast<double>(sn.second));
    }
    return ids[argmax_lowest(means)];
}

}  // namespace anoclass
