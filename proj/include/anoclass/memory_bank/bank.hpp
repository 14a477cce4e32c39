#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "anoclass/backbone/patch_features.hpp"
#include "anoclass/core/binary_io.hpp"
#include "anoclass/core/errors.hpp"
#include "anoclass/core/tensor.hpp"
#include "anoclass/memory_bank/coreset.hpp"

namespace anoclass::memory_bank {

using backbone::PatchFeatureMap;

/// Coreset of normal patch descriptors. Immutable once built; queries are
/// const and safe to issue concurrently.
class MemoryBank {
public:
    MemoryBank() = default;
    MemoryBank(Tensor<float> vectors, std::uint64_t seed, double p, std::size_t source_count)
        : vectors_(std::move(vectors)), seed_(seed), p_(p), source_count_(source_count) {
        if (vectors_.rank() != 2 || vectors_.dim(0) == 0) throw ArgumentError("memory bank needs at least one row");
    }

    const Tensor<float>& vectors() const noexcept { return vectors_; }
    std::size_t rows() const { return vectors_.dim(0); }
    std::size_t dim() const { return vectors_.dim(1); }
    std::uint64_t seed() const noexcept { return seed_; }
    double p() const noexcept { return p_; }
    std::size_t source_count() const noexcept { return source_count_; }
    std::span<const float> row(std::size_t i) const { return {vectors_.data() + i * dim(), dim()}; }

private:
    Tensor<float> vectors_;
    std::uint64_t seed_ = 0;
    double p_ = 1.0;
    std::size_t source_count_ = 0;
};

/// N_d = max(1, round-half-up(source_count * p)).
inline std::size_t bank_size(std::size_t source_count, double p) {
    const auto n = static_cast<std::size_t>(std::floor(static_cast<double>(source_count) * p + 0.5));
    return std::max<std::size_t>(1, n);
}

inline MemoryBank build_bank(std::span<const PatchFeatureMap> normal_maps, double p, std::uint64_t seed) {
    if (normal_maps.empty()) throw ArgumentError("build_bank: no normal feature maps");
    if (!(p > 0.0 && p <= 1.0)) throw ArgumentError("build_bank: p must be in (0, 1], got " + std::to_string(p));
    const std::size_t d = normal_maps.front().dim();
    std::size_t total = 0;
    for (const auto& m : normal_maps) {
        if (m.dim() != d) throw ShapeError("build_bank: feature maps disagree on dimension");
        total += m.patches();
    }
    Tensor<float> all({total, d});
    std::size_t offset = 0;
    for (const auto& m : normal_maps) {
        std::copy(m.vectors.storage().begin(), m.vectors.storage().end(), all.storage().begin() + static_cast<std::ptrdiff_t>(offset * d));
        offset += m.patches();
    }
    const auto picked = coreset_subsample(all, bank_size(total, p), seed);
    Tensor<float> rows({picked.size(), d});
    for (std::size_t i = 0; i < picked.size(); ++i) {
        std::copy_n(all.data() + picked[i] * d, d, rows.data() + i * d);
    }
    return MemoryBank(std::move(rows), seed, p, total);
}

inline MemoryBank build_bank(const std::vector<PatchFeatureMap>& normal_maps, double p, std::uint64_t seed) {
    return build_bank(std::span<const PatchFeatureMap>(normal_maps), p, seed);
}

struct Neighbor {
    std::size_t index = 0;
    double distance = 0.0;
};

/// Exact nearest bank row by Euclidean distance; lowest index wins ties.
inline Neighbor nearest(const MemoryBank& bank, std::span<const float> q) {
    if (q.size() != bank.dim()) {
        throw ShapeError("query dimension " + std::to_string(q.size()) + " != bank dimension " + std::to_string(bank.dim()));
    }
    Neighbor best{0, std::numeric_limits<double>::infinity()};
    for (std::size_t j = 0; j < bank.rows(); ++j) {
        const double dist = squared_distance(q.data(), bank.vectors().data() + j * bank.dim(), bank.dim());
        if (dist < best.distance) best = {j, dist};
    }
    best.distance = std::sqrt(best.distance);
    return best;
}

/// Per-patch residual against the nearest bank vector.
struct ResidualMap {
    Tensor<float> residuals;  // (P, c3)
    std::vector<std::size_t> nearest_indices;
    std::vector<double> nearest_distances;
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;

    /// (c3, h, w) tensor in row-major grid order.
    Tensor<float> as_map() const {
        const std::size_t p = residuals.dim(0), d = residuals.dim(1);
        Tensor<float> out({d, grid_h, grid_w});
        for (std::size_t i = 0; i < p; ++i) {
            for (std::size_t c = 0; c < d; ++c) out[c * p + i] = residuals.at(i, c);
        }
        return out;
    }
};

inline ResidualMap residual_map(const MemoryBank& bank, const PatchFeatureMap& features) {
    if (features.dim() != bank.dim()) {
        throw ShapeError("feature dimension " + std::to_string(features.dim()) + " != bank dimension " +
                         std::to_string(bank.dim()));
    }
    const std::size_t p = features.patches(), d = features.dim();
    ResidualMap out{Tensor<float>({p, d}), std::vector<std::size_t>(p), std::vector<double>(p), features.grid_h,
                    features.grid_w};
    for (std::size_t i = 0; i < p; ++i) {
        std::span<const float> q(features.vectors.data() + i * d, d);
        const auto nb = nearest(bank, q);
        const auto m = bank.row(nb.index);
        for (std::size_t k = 0; k < d; ++k) out.residuals.at(i, k) = q[k] - m[k];
        out.nearest_indices[i] = nb.index;
        out.nearest_distances[i] = nb.distance;
    }
    return out;
}

// Bank file layout (little-endian):
//   "ANOB" | u32 version | u32 N_d | u32 c3 | i64 seed | f64 p | f32[N_d * c3] row-major
// with a `<file>.json` sidecar (source feature files, source patch count).

inline constexpr std::uint32_t kBankFileVersion = 1;

inline void save_bank(const std::filesystem::path& path, const MemoryBank& bank,
                      const std::vector<std::string>& source_files = {}) {
    binio::Writer w(path);
    w.magic("ANOB");
    w.u32(kBankFileVersion);
    w.u32(static_cast<std::uint32_t>(bank.rows()));
    w.u32(static_cast<std::uint32_t>(bank.dim()));
    w.i64(static_cast<std::int64_t>(bank.seed()));
    w.f64(bank.p());
    w.f32_array(bank.vectors().values());
    w.close();
    nlohmann::json side{{"source_files", source_files}, {"source_count", bank.source_count()},
                        {"seed", bank.seed()}, {"p", bank.p()}, {"rows", bank.rows()}, {"dim", bank.dim()}};
    auto side_path = path;
    side_path += ".json";
    std::ofstream(side_path) << side.dump(2) << '\n';
}

inline MemoryBank load_bank(const std::filesystem::path& path) {
    binio::Reader r(path);
    r.expect_magic("ANOB");
    if (r.u32() != kBankFileVersion) throw LoadError("unsupported bank file version in " + path.string());
    const std::size_t n = r.u32(), d = r.u32();
    const auto seed = static_cast<std::uint64_t>(r.i64());
    const double p = r.f64();
    Tensor<float> rows({n, d}, r.f32_array(n * d));
    std::size_t source_count = n;
    auto side_path = path;
    side_path += ".json";
    if (std::filesystem::exists(side_path)) {
        try {
            source_count = nlohmann::json::parse(std::ifstream(side_path)).value("source_count", source_count);
        } catch (const nlohmann::json::exception&) {
        }
    }
    return MemoryBank(std::move(rows), seed, p, source_count);
}

}  // namespace anoclass::memory_bank
