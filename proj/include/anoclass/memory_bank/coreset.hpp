#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "anoclass/core/errors.hpp"
#include "anoclass/core/random.hpp"
#include "anoclass/core/tensor.hpp"

namespace anoclass::memory_bank {

/// Squared Euclidean distance between two rows, accumulated in double.
template <typename T>
double squared_distance(const T* a, const T* b, std::size_t d) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        const double diff = static_cast<double>(a[k]) - static_cast<double>(b[k]);
        s += diff * diff;
    }
    return s;
}

/// Greedy k-center (farthest-point) selection over the rows of an (M, d)
/// matrix, starting from row `first`. Every later pick is the unchosen row
/// with the largest distance to its nearest chosen row, lowest index winning
/// ties. Exact: no random projection.
template <typename T>
std::vector<std::size_t> coreset_subsample_from(const Tensor<T>& vectors, std::size_t target, std::size_t first) {
    if (vectors.rank() != 2) throw ShapeError("coreset_subsample expects an (M, d) matrix");
    const std::size_t m = vectors.dim(0), d = vectors.dim(1);
    if (target < 1 || target > m) {
        throw ArgumentError("coreset target " + std::to_string(target) + " outside [1, " + std::to_string(m) + "]");
    }
    if (first >= m) throw ArgumentError("coreset start index out of range");
    std::vector<std::size_t> picked;
    picked.reserve(target);
    std::vector<double> min_dist(m, std::numeric_limits<double>::infinity());
    std::vector<char> chosen(m, 0);

    std::size_t next = first;
    while (true) {
        picked.push_back(next);
        chosen[next] = 1;
        if (picked.size() == target) break;
        const T* center = vectors.data() + next * d;
        std::size_t best = m;
        double best_dist = -1.0;
        for (std::size_t i = 0; i < m; ++i) {
            if (chosen[i]) continue;
            const double dist = squared_distance(vectors.data() + i * d, center, d);
            if (dist < min_dist[i]) min_dist[i] = dist;
            if (min_dist[i] > best_dist) {
                best_dist = min_dist[i];
                best = i;
            }
        }
        next = best;
    }
    return picked;
}

/// First index of the seeded selection: uniform over [0, m) from `seed`.
inline std::size_t coreset_start(std::size_t m, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    return uniform_index(rng, m);
}

template <typename T>
std::vector<std::size_t> coreset_subsample(const Tensor<T>& vectors, std::size_t target, std::uint64_t seed) {
    if (vectors.rank() != 2 || vectors.dim(0) == 0) throw ShapeError("coreset_subsample expects a non-empty (M, d) matrix");
    return coreset_subsample_from(vectors, target, coreset_start(vectors.dim(0), seed));
}

}  // namespace anoclass::memory_bank
