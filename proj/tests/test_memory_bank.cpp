#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <random>
#include <set>

#include "anoclass/memory_bank/bank.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace anoclass;
using namespace anoclass::memory_bank;
using anoclass::testing::TempDir;

namespace {

Tensor<float> points(std::initializer_list<std::initializer_list<float>> rows) {
    const std::size_t d = rows.begin()->size();
    Tensor<float> t({rows.size(), d});
    std::size_t i = 0;
    for (const auto& r : rows)
        for (float v : r) t[i++] = v;
    return t;
}

oracle::Points to_points(const Tensor<float>& t) {
    oracle::Points out(t.dim(0), std::vector<double>(t.dim(1)));
    for (std::size_t i = 0; i < t.dim(0); ++i)
        for (std::size_t k = 0; k < t.dim(1); ++k) out[i][k] = t.at(i, k);
    return out;
}

PatchFeatureMap as_map(Tensor<float> rows) {
    const std::size_t p = rows.dim(0);
    return PatchFeatureMap{std::move(rows), 1, p, "synthetic"};
}

}  // namespace

TEST(BankSize, RoundHalfUpFlooredAtOne) {
    EXPECT_EQ(bank_size(784, 0.10), 78u);
    EXPECT_EQ(bank_size(785, 0.10), 79u);  // 78.5 rounds up
    EXPECT_EQ(bank_size(3, 0.10), 1u);
    EXPECT_EQ(bank_size(50, 1.0), 50u);
}

TEST(CoresetSubsample, TwoPointsBothSelected) {
    const auto pts = points({{0}, {10}});
    for (std::uint64_t seed : {1u, 2u, 99u}) {
        auto idx = coreset_subsample(pts, 2, seed);
        std::sort(idx.begin(), idx.end());
        EXPECT_EQ(idx, (std::vector<std::size_t>{0, 1}));
    }
}

TEST(CoresetSubsample, FarthestPointByHand) {
    const auto pts = points({{0}, {1}, {9}, {10}});
    EXPECT_EQ(coreset_subsample_from(pts, 2, 0), (std::vector<std::size_t>{0, 3}));
}

TEST(CoresetSubsample, FullTargetVisitsEveryIndexOnce) {
    const auto pts = anoclass::testing::random_tensor_f({20, 3}, 4);
    auto idx = coreset_subsample(pts, 20, 7);
    std::set<std::size_t> unique(idx.begin(), idx.end());
    EXPECT_EQ(idx.size(), 20u);
    EXPECT_EQ(unique.size(), 20u);
}

TEST(CoresetSubsample, TargetOutOfRangeIsArgumentError) {
    const auto pts = points({{0}, {1}});
    EXPECT_THROW(coreset_subsample(pts, 0, 1), ArgumentError);
    EXPECT_THROW(coreset_subsample(pts, 3, 1), ArgumentError);
}

TEST(CoresetSubsample, MatchesBruteForceOracleOn64RandomPoints) {
    const auto pts = anoclass::testing::random_tensor_f({64, 2}, 1);
    const auto got = coreset_subsample(pts, bank_size(64, 0.25), 1);
    ASSERT_EQ(got.size(), 16u);
    EXPECT_EQ(got, oracle::greedy_k_center(to_points(pts), 16, coreset_start(64, 1)));
}

TEST(CoresetSubsample, GreedyCertificateHoldsAtEveryStep) {
    const auto pts = anoclass::testing::random_tensor_f({40, 5}, 3);
    const auto idx = coreset_subsample(pts, 12, 5);
    const auto p = to_points(pts);
    for (std::size_t step = 1; step < idx.size(); ++step) {
        auto min_to_chosen = [&](std::size_t i) {
            double best = 1e300;
            for (std::size_t s = 0; s < step; ++s) best = std::min(best, oracle::euclid(p[i], p[idx[s]]));
            return best;
        };
        const double picked = min_to_chosen(idx[step]);
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (std::find(idx.begin(), idx.begin() + static_cast<long>(step), i) != idx.begin() + static_cast<long>(step)) continue;
            EXPECT_LE(min_to_chosen(i), picked);
        }
    }
}

TEST(CoresetSubsample, SeedReproducibility) {
    const auto pts = anoclass::testing::random_tensor_f({50, 4}, 8);
    EXPECT_EQ(coreset_subsample(pts, 10, 3), coreset_subsample(pts, 10, 3));
    bool any_differs = false;
    for (std::uint64_t s = 1; s <= 5; ++s) any_differs |= coreset_subsample(pts, 10, s) != coreset_subsample(pts, 10, 1);
    EXPECT_TRUE(any_differs);
}

TEST(BuildBank, SizeAndProvenance) {
    std::vector<PatchFeatureMap> maps{as_map(anoclass::testing::random_tensor_f({784, 8}, 1))};
    const auto bank = build_bank(maps, 0.10, 3);
    EXPECT_EQ(bank.rows(), 78u);
    EXPECT_EQ(bank.source_count(), 784u);
    EXPECT_EQ(bank.seed(), 3u);
    EXPECT_DOUBLE_EQ(bank.p(), 0.10);
}

TEST(BuildBank, RowsAreBitExactSourceRows) {
    std::vector<PatchFeatureMap> maps{as_map(anoclass::testing::random_tensor_f({30, 4}, 2)),
                                      as_map(anoclass::testing::random_tensor_f({25, 4}, 3))};
    const auto bank = build_bank(maps, 0.3, 9);
    for (std::size_t r = 0; r < bank.rows(); ++r) {
        bool found = false;
        for (const auto& m : maps)
            for (std::size_t i = 0; i < m.patches(); ++i)
                found |= std::equal(bank.row(r).begin(), bank.row(r).end(), m.vectors.data() + i * 4);
        EXPECT_TRUE(found) << r;
    }
}

TEST(BuildBank, FullFractionKeepsEverything) {
    auto rows = anoclass::testing::random_tensor_f({12, 3}, 5);
    std::vector<PatchFeatureMap> maps{as_map(rows)};
    const auto bank = build_bank(maps, 1.0, 1);
    const auto order = coreset_subsample(rows, 12, 1);
    ASSERT_EQ(bank.rows(), 12u);
    for (std::size_t r = 0; r < 12; ++r)
        EXPECT_TRUE(std::equal(bank.row(r).begin(), bank.row(r).end(), rows.data() + order[r] * 3));
}

TEST(BuildBank, RejectsEmptyInputAndBadFraction) {
    EXPECT_THROW(build_bank(std::vector<PatchFeatureMap>{}, 0.1, 1), ArgumentError);
    std::vector<PatchFeatureMap> maps{as_map(points({{1, 2}}))};
    EXPECT_THROW(build_bank(maps, 0.0, 1), ArgumentError);
    EXPECT_THROW(build_bank(maps, 1.5, 1), ArgumentError);
}

TEST(Nearest, MembershipHandExampleAndTies) {
    MemoryBank bank(points({{0, 0}, {3, 4}, {1, 1}, {7, 7}}), 1, 1.0, 4);
    auto nb = nearest(bank, std::vector<float>{7, 7});
    EXPECT_EQ(nb.index, 3u);
    EXPECT_EQ(nb.distance, 0.0);

    MemoryBank two(points({{0, 0}, {3, 4}}), 1, 1.0, 2);
    nb = nearest(two, std::vector<float>{3, 3});
    EXPECT_EQ(nb.index, 1u);
    EXPECT_DOUBLE_EQ(nb.distance, 1.0);

    MemoryBank tied(points({{9, 9}, {9, 9}, {1, 0}, {8, 8}, {8, 8}, {-1, 0}}), 1, 1.0, 6);
    EXPECT_EQ(nearest(tied, std::vector<float>{0, 0}).index, 2u);

    EXPECT_THROW(nearest(two, std::vector<float>{1, 2, 3}), ShapeError);
}

TEST(ResidualMap, HandExampleAndSelfMatch) {
    MemoryBank origin(points({{0, 0}}), 1, 1.0, 1);
    const auto r = residual_map(origin, as_map(points({{3, 4}})));
    EXPECT_EQ(r.residuals.storage(), (std::vector<float>{3, 4}));
    EXPECT_DOUBLE_EQ(r.nearest_distances[0], 5.0);

    auto rows = anoclass::testing::random_tensor_f({10, 3}, 4);
    MemoryBank bank(rows, 1, 1.0, 10);
    const auto self = residual_map(bank, as_map(rows));
    for (float v : self.residuals.storage()) EXPECT_EQ(v, 0.0f);
    EXPECT_EQ(*std::max_element(self.nearest_distances.begin(), self.nearest_distances.end()), 0.0);
}

TEST(ResidualMap, NormEqualsExhaustiveMinDistance) {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 5; ++trial) {
        const std::size_t n = 1 + rng() % 1000, d = 1 + rng() % 16;
        auto rows = anoclass::testing::random_tensor_f({n, d}, 100 + trial);
        auto queries = anoclass::testing::random_tensor_f({20, d}, 200 + trial);
        MemoryBank bank(rows, 1, 1.0, n);
        const auto r = residual_map(bank, as_map(queries));
        const auto bank_pts = to_points(rows);
        const auto q_pts = to_points(queries);
        for (std::size_t i = 0; i < 20; ++i) {
            double norm = 0;
            for (std::size_t k = 0; k < d; ++k) norm += double(r.residuals.at(i, k)) * r.residuals.at(i, k);
            norm = std::sqrt(norm);
            const double expect = oracle::min_distance(bank_pts, q_pts[i]);
            EXPECT_LE(std::abs(norm - expect), 1e-5 * std::max(expect, 1e-12));
            EXPECT_LE(std::abs(r.nearest_distances[i] - expect), 1e-5 * std::max(expect, 1e-12));
            EXPECT_LT(r.nearest_indices[i], n);
        }
    }
}

TEST(ResidualMap, AsMapShapeAndOrder) {
    MemoryBank bank(points({{0, 0}}), 1, 1.0, 1);
    PatchFeatureMap f{points({{1, 2}, {3, 4}, {5, 6}, {7, 8}, {9, 10}, {11, 12}}), 2, 3, ""};
    const auto m = residual_map(bank, f).as_map();
    EXPECT_EQ(m.shape(), (Shape{2, 2, 3}));
    EXPECT_EQ(m.at(1, 1, 2), 12.0f);
    EXPECT_EQ(m.at(0, 0, 1), 3.0f);
}

TEST(BankFile, LayoutAndRoundTrip) {
    TempDir dir("bank");
    MemoryBank bank(anoclass::testing::random_tensor_f({5, 3}, 1), 42, 0.1, 50);
    save_bank(dir / "b.anob", bank, {"a.anof"});
    std::ifstream in(dir / "b.anob", std::ios::binary);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
    ASSERT_EQ(bytes.size(), 4 + 3 * 4 + 8 + 8 + 15 * 4u);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "ANOB");
    EXPECT_EQ(bytes[8], 5);
    EXPECT_EQ(bytes[12], 3);
    EXPECT_EQ(bytes[16], 42);
    const auto back = load_bank(dir / "b.anob");
    EXPECT_EQ(back.vectors(), bank.vectors());
    EXPECT_EQ(back.seed(), 42u);
    EXPECT_DOUBLE_EQ(back.p(), 0.1);
    EXPECT_EQ(back.source_count(), 50u);
}
