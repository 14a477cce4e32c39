#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "anoclass/relation/relation.hpp"
#include "test_util.hpp"

using namespace anoclass;
using namespace anoclass::relation;
using anoclass::testing::TempDir;

namespace {

RelationArch tiny_arch() { return {2, 4, 3}; }

std::vector<Sample> toy_samples(std::size_t classes, std::size_t shots, std::size_t c, std::size_t grid, std::uint64_t seed) {
    std::vector<Sample> out;
    for (std::size_t k = 0; k < classes; ++k) {
        for (std::size_t s = 0; s < shots; ++s) {
            auto m = anoclass::testing::random_tensor_f({c, grid, grid}, seed + 31 * k + s, 0.3f);
            for (auto& v : m.storage()) v += static_cast<float>(2.0 * k);
            out.push_back({std::move(m), static_cast<int>(k)});
        }
    }
    return out;
}

}  // namespace

TEST(WeightedBce, HandValues) {
    const std::vector<double> s1{0.5};
    const std::vector<int> y1{1};
    EXPECT_NEAR(weighted_bce(s1, y1, 5), 4 * std::log(2.0), 1e-12);
    EXPECT_NEAR(weighted_bce(s1, y1, 5), 2.7726, 1e-4);

    const std::vector<double> s2{0.8, 0.3};
    const std::vector<int> y2{1, 0};
    EXPECT_NEAR(weighted_bce(s2, y2, 2), -0.5 * (std::log(0.8) + std::log(0.7)), 1e-12);
    EXPECT_NEAR(weighted_bce(s2, y2, 2), 0.2899, 1e-4);
}

TEST(WeightedBce, PerfectPredictionsApproachZeroAndClampHolds) {
    const std::vector<double> s{1.0, 0.0, 1.0 - 1e-7, 1e-7};
    const std::vector<int> y{1, 0, 1, 0};
    const double l = weighted_bce(s, y, 4);
    EXPECT_GE(l, 0.0);
    EXPECT_LT(l, 1e-6);
    EXPECT_TRUE(std::isfinite(weighted_bce(std::vector<double>{0.0}, std::vector<int>{1}, 3)));
}

TEST(WeightedBce, PositiveAndWeightEffect) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    for (int t = 0; t < 200; ++t) {
        const std::vector<double> s{u(rng), u(rng), u(rng)};
        const std::vector<int> y{1, 0, static_cast<int>(rng() % 2)};
        EXPECT_GT(weighted_bce(s, y, 2 + static_cast<int>(rng() % 6)), 0.0);
    }
    // Symmetric errors: positive at 0.7, negative at 0.3. Each class weight
    // scales only its own term, so the positive term is (C-1) times the negative.
    for (int c : {2, 3, 7}) {
        const double pos = weighted_bce(std::vector<double>{0.7}, std::vector<int>{1}, c);
        const double neg = weighted_bce(std::vector<double>{0.3}, std::vector<int>{0}, c);
        EXPECT_NEAR(pos, (c - 1) * neg, 1e-12);
    }
}

TEST(WeightedBce, GradientMatchesFiniteDifferences) {
    const std::vector<double> s{0.2, 0.6, 0.9, 0.45};
    const std::vector<int> y{0, 1, 0, 1};
    const auto g = weighted_bce_grad(s, y, 4);
    for (std::size_t i = 0; i < s.size(); ++i) {
        auto up = s, down = s;
        up[i] += 1e-6;
        down[i] -= 1e-6;
        const double fd = (weighted_bce(up, y, 4) - weighted_bce(down, y, 4)) / 2e-6;
        EXPECT_LT(anoclass::testing::relative_error(g[i], fd), 1e-6);
    }
}

TEST(RelationHead, ScoresInUnitIntervalAndDeterministic) {
    RelationHead<float> head(tiny_arch(), 7);
    const auto s = anoclass::testing::random_tensor_f({2, 6, 6}, 1, 5.0f);
    const auto q = anoclass::testing::random_tensor_f({2, 6, 6}, 2, 5.0f);
    const double a = relation_forward(head, s, q);
    EXPECT_GT(a, 0.0);
    EXPECT_LT(a, 1.0);
    EXPECT_EQ(a, relation_forward(head, s, q));
    RelationHead<float> same(tiny_arch(), 7);
    EXPECT_EQ(a, relation_forward(same, s, q));
}

TEST(RelationHead, ShapeErrors) {
    RelationHead<float> head(tiny_arch(), 1);
    const auto s = anoclass::testing::random_tensor_f({2, 6, 6}, 1);
    EXPECT_THROW(relation_forward(head, s, anoclass::testing::random_tensor_f({2, 5, 6}, 2)), ShapeError);
    EXPECT_THROW(relation_forward(head, anoclass::testing::random_tensor_f({3, 6, 6}, 1), anoclass::testing::random_tensor_f({3, 6, 6}, 1)),
                 ShapeError);
}

TEST(RelationHead, StackOrderAndFullSizeShape) {
    Tensor<float> s({1024, 28, 28}), q({1024, 28, 28});
    s.fill(1.0f);
    q.fill(2.0f);
    const auto x = stack_pairs<float>({&s}, {&q});
    EXPECT_EQ(x.shape(), (Shape{1, 2048, 28, 28}));
    EXPECT_EQ(x.at(0, 1023, 27, 27), 1.0f);
    EXPECT_EQ(x.at(0, 1024, 0, 0), 2.0f);
    RelationHead<float> head(RelationArch{}, 1);
    EXPECT_GT(head.parameter_count(), 0u);
    const double score = head.forward(x, false)[0];
    EXPECT_TRUE(score > 0 && score < 1);
}

TEST(RelationHead, GradientMatchesFiniteDifferences) {
    RelationHead<double> head(tiny_arch(), 3);
    std::vector<Tensor<float>> maps;
    for (int i = 0; i < 6; ++i) maps.push_back(anoclass::testing::random_tensor_f({2, 4, 4}, 10 + i));
    const Tensor<double> x = stack_pairs<double>({&maps[0], &maps[1], &maps[2]}, {&maps[3], &maps[4], &maps[5]});
    const std::vector<int> labels{0, 1, 0};
    auto loss = [&] {
        const auto out = head.forward(x, true);
        std::vector<double> s(out.values().begin(), out.values().end());
        return weighted_bce(s, labels, 3);
    };
    const auto params = head.params();
    nn::zero_grads(params);
    const auto out = head.forward(x, true);
    std::vector<double> s(out.values().begin(), out.values().end());
    const auto g = weighted_bce_grad(s, labels, 3);
    head.backward(Tensor<double>(out.shape(), g));
    EXPECT_LT(anoclass::testing::max_param_grad_error(params, loss), 1e-4);
}

TEST(ClassifyVanilla, MeanScoreRule) {
    EXPECT_EQ(mean_score_argmax(std::vector<double>{0.9, 0.2, 0.1}, std::vector<int>{0, 1, 2}), 0);
    EXPECT_EQ(mean_score_argmax(std::vector<double>{0.1, 0.5, 0.5}, std::vector<int>{0, 1, 2}), 1);
    EXPECT_EQ(mean_score_argmax(std::vector<double>{0.6, 0.8, 0.9, 0.3}, std::vector<int>{0, 0, 1, 1}), 0);
    EXPECT_THROW(mean_score_argmax(std::vector<double>{}, std::vector<int>{}), ArgumentError);
}

TEST(ClassifyVanilla, ArgmaxInvariantUnderMonotoneTransform) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> s;
        std::vector<int> labels;
        for (int c = 0; c < 4; ++c) {
            s.push_back(u(rng));
            labels.push_back(c);
        }
        std::vector<double> transformed;
        for (double v : s) transformed.push_back(std::exp(3 * v) + 2);
        EXPECT_EQ(mean_score_argmax(s, labels), mean_score_argmax(transformed, labels));
    }
}

TEST(ClassifyVanilla, UsesHeadAndRejectsEmptySupport) {
    RelationHead<float> head(tiny_arch(), 2);
    const auto samples = toy_samples(3, 2, 2, 4, 1);
    const int c = classify_vanilla(head, samples, samples[0].map);
    EXPECT_GE(c, 0);
    EXPECT_LT(c, 3);
    EXPECT_THROW(classify_vanilla(head, {}, samples[0].map), ArgumentError);
}

TEST(TrainVanilla, AlgorithmAccountingAndEpochs) {
    RelationHead<float> head(tiny_arch(), 4);
    VanillaConfig cfg;
    cfg.epochs = 3;
    const auto log = train_vanilla(head, SampleSource::in_memory(toy_samples(3, 2, 2, 4, 1)), cfg);
    // C=3, S=2: 3 fixed supports, 3 queries, 9 scored pairs per pass.
    EXPECT_EQ(log.iterations, 3u);
    ASSERT_EQ(log.records.size(), 3u * 3u);
    EXPECT_EQ(log.records.size() / cfg.epochs * 3, 9u);

    RelationHead<float> h2(tiny_arch(), 4);
    cfg.epochs = 1;
    const auto uneven = train_vanilla(h2, SampleSource::in_memory(toy_samples(4, 3, 2, 4, 5)), cfg);
    EXPECT_EQ(uneven.records.size(), 4u * 3u - 4u);
}

TEST(TrainVanilla, DefaultsFollowProtocol) {
    VanillaConfig cfg;
    EXPECT_EQ(cfg.epochs, 45u);
    EXPECT_DOUBLE_EQ(cfg.lr, 1e-4);
    EXPECT_DOUBLE_EQ(cfg.stop_accuracy, 0.4);
}

TEST(TrainVanilla, SingleSampleClassIsProtocolError) {
    auto samples = toy_samples(2, 2, 2, 4, 1);
    samples.push_back({samples[0].map, 7});
    RelationHead<float> head(tiny_arch(), 1);
    EXPECT_THROW(train_vanilla(head, SampleSource::in_memory(samples), VanillaConfig{}), ProtocolError);
}

TEST(TrainVanilla, DeterministicLossTrajectory) {
    const auto data = SampleSource::in_memory(toy_samples(3, 3, 2, 4, 2));
    VanillaConfig cfg;
    cfg.epochs = 2;
    RelationHead<float> a(tiny_arch(), 5), b(tiny_arch(), 5);
    const auto la = train_vanilla(a, data, cfg);
    const auto lb = train_vanilla(b, data, cfg);
    ASSERT_EQ(la.records.size(), lb.records.size());
    for (std::size_t i = 0; i < la.records.size(); ++i) EXPECT_EQ(la.records[i].loss, lb.records[i].loss);
}

TEST(TrainVanilla, PretrainStopRule) {
    const std::vector<double> acc{0.1, 0.3, 0.45, 0.9};
    EXPECT_EQ(stopping_iteration(acc, 0.4, 2000), 3u);
    EXPECT_EQ(stopping_iteration(std::vector<double>{0.1, 0.4, 0.4}, 0.4, 2000), 3u);

    const auto data = SampleSource::in_memory(toy_samples(10, 2, 2, 4, 3));
    VanillaConfig cfg;
    cfg.mode = VanillaConfig::Mode::pretrain;
    cfg.stop_accuracy = -1.0;  // any accuracy exceeds it
    RelationHead<float> head(tiny_arch(), 1);
    auto log = train_vanilla(head, data, cfg);
    EXPECT_EQ(log.iterations, 1u);
    EXPECT_TRUE(log.threshold_reached);

    cfg.stop_accuracy = 1.0;  // unreachable
    cfg.max_iterations = 3;
    RelationHead<float> h2(tiny_arch(), 1);
    log = train_vanilla(h2, data, cfg);
    EXPECT_EQ(log.iterations, 3u);
    EXPECT_FALSE(log.threshold_reached);

    EXPECT_THROW(train_vanilla(h2, SampleSource::in_memory(toy_samples(9, 2, 2, 4, 3)), cfg), ArgumentError);
}

TEST(RelationCheckpoint, RoundTrip) {
    TempDir dir("rel");
    RelationHead<float> head(tiny_arch(), 6);
    const auto samples = toy_samples(2, 2, 2, 4, 1);
    VanillaConfig cfg;
    cfg.epochs = 1;
    train_vanilla(head, SampleSource::in_memory(samples), cfg);
    save_relation(dir / "head.json", head);
    auto back = load_relation(dir / "head.json");
    EXPECT_EQ(relation_forward(back, samples[0].map, samples[3].map), relation_forward(head, samples[0].map, samples[3].map));
    EXPECT_THROW(load_relation(dir / "missing.json"), LoadError);
}
