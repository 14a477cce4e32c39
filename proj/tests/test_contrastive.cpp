#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <list>
#include <random>

#include "anoclass/contrastive/contrastive.hpp"
#include "test_util.hpp"

using namespace anoclass;
using namespace anoclass::contrastive;
using anoclass::testing::TempDir;

namespace {

EmbeddingArch toy_arch() { return {2, {4, 4}, 8}; }

std::vector<Sample> toy_samples(std::size_t classes, std::size_t shots, std::size_t c, std::size_t grid, std::uint64_t seed,
                                float offset = 2.0f) {
    std::vector<Sample> out;
    for (std::size_t k = 0; k < classes; ++k) {
        for (std::size_t s = 0; s < shots; ++s) {
            auto m = anoclass::testing::random_tensor_f({c, grid, grid}, seed + 31 * k + s, 0.5f);
            // class-specific pattern: offset on one channel, sign alternating
            for (std::size_t i = 0; i < grid * grid; ++i) m[(k % c) * grid * grid + i] += offset * (k % 2 ? -1.0f : 1.0f) + float(k);
            out.push_back({std::move(m), static_cast<int>(k)});
        }
    }
    return out;
}

/// Algorithm 1 executed literally on a list, as an independent reference.
std::vector<std::pair<std::size_t, std::vector<std::size_t>>> literal_pairs(const std::vector<int>& labels, std::size_t S, std::size_t C) {
    std::vector<std::size_t> sorted;
    for (std::size_t i = 0; i < C; ++i) {
        std::size_t seen = 0;
        for (std::size_t k = 0; k < labels.size() && seen < S; ++k)
            if (labels[k] == static_cast<int>(i)) {
                sorted.push_back(k);
                ++seen;
            }
    }
    std::vector<std::pair<std::size_t, std::vector<std::size_t>>> out;
    for (std::size_t f : sorted) {
        std::list<std::size_t> bank(sorted.begin(), sorted.end());
        bank.remove(f);
        std::vector<std::size_t> support;
        for (std::size_t j = 1; j <= S - 1; ++j) {
            for (std::size_t i = 0; i < C; ++i) {
                std::size_t count = 0;
                for (std::size_t x : bank)
                    if (labels[x] == static_cast<int>(i) && ++count == j) {
                        support.push_back(x);
                        break;
                    }
            }
        }
        out.emplace_back(f, support);
    }
    return out;
}

double episode_loss(EmbeddingNet<double>& net, const Tensor<double>& x, const std::vector<PairBatch>& batches) {
    const auto e = net.forward(x, true);
    const std::size_t d = net.embed_dim();
    double loss = 0;
    for (const auto& b : batches) {
        std::vector<double> cands;
        for (auto s : b.support) cands.insert(cands.end(), e.data() + s * d, e.data() + (s + 1) * d);
        loss += info_nce<double>(std::span<const double>(e.data() + b.query * d, d), cands, b.positive_positions, net.tau()).loss;
    }
    return loss / static_cast<double>(batches.size());
}

}  // namespace

TEST(InfoNce, UniformSimilaritiesGiveLogK) {
    const std::vector<double> q{1, 0};
    const std::vector<double> c{0, 1, 0, -1, 0, 1};
    const std::vector<std::size_t> pos{1};
    EXPECT_NEAR(info_nce<double>(q, c, pos).loss, std::log(3.0), 1e-12);
}

TEST(InfoNce, DominantPositive) {
    const std::vector<double> q{1, 0};
    const std::vector<double> c{10, 0, 0, 3, 0, -2};
    const std::vector<std::size_t> pos{0};
    const double l = info_nce<double>(q, c, pos).loss;
    EXPECT_NEAR(l, std::log1p(2 * std::exp(-10.0)), 1e-15);
    EXPECT_NEAR(l, 9.08e-5, 1e-7);
}

TEST(InfoNce, ErrorsAndMultiPositiveMean) {
    const std::vector<double> q{1, 0};
    const std::vector<double> c{1, 0, 0, 1};
    EXPECT_THROW(info_nce<double>(q, c, std::vector<std::size_t>{}), ArgumentError);
    EXPECT_THROW(info_nce<double>(q, c, std::vector<std::size_t>{2}), ArgumentError);
    EXPECT_THROW(info_nce<double>(q, c, std::vector<std::size_t>{0}, 0.0), ArgumentError);
    const double a = info_nce<double>(q, c, std::vector<std::size_t>{0}).loss;
    const double b = info_nce<double>(q, c, std::vector<std::size_t>{1}).loss;
    EXPECT_NEAR(info_nce<double>(q, c, std::vector<std::size_t>{0, 1}).loss, (a + b) / 2, 1e-12);
}

TEST(InfoNce, NonNegativeWithLogKAtEquality) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0, 1);
    for (int t = 0; t < 200; ++t) {
        const std::size_t k = 1 + rng() % 8, d = 1 + rng() % 5;
        std::vector<double> q(d), c(k * d);
        for (auto& v : q) v = n(rng);
        for (auto& v : c) v = n(rng);
        const std::vector<std::size_t> pos{rng() % k};
        const double tau = 0.1 + (rng() % 10) / 5.0;
        EXPECT_GE(info_nce<double>(q, c, pos, tau).loss, 0.0);
        std::vector<double> same;
        for (std::size_t j = 0; j < k; ++j) same.insert(same.end(), c.begin(), c.begin() + static_cast<long>(d));
        EXPECT_NEAR(info_nce<double>(q, same, pos, tau).loss, std::log(double(k)), 1e-10);
    }
}

TEST(InfoNce, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0, 1);
    std::vector<double> q(5), c(4 * 5);
    for (auto& v : q) v = n(rng);
    for (auto& v : c) v = n(rng);
    const std::vector<std::size_t> pos{1, 3};
    const double tau = 0.7;
    const auto r = info_nce<double>(q, c, pos, tau);
    const double h = 1e-5;
    double worst = 0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        auto up = q, down = q;
        up[i] += h;
        down[i] -= h;
        const double fd = (info_nce<double>(up, c, pos, tau).loss - info_nce<double>(down, c, pos, tau).loss) / (2 * h);
        worst = std::max(worst, anoclass::testing::relative_error(r.grad_query[i], fd));
    }
    for (std::size_t i = 0; i < c.size(); ++i) {
        auto up = c, down = c;
        up[i] += h;
        down[i] -= h;
        const double fd = (info_nce<double>(q, up, pos, tau).loss - info_nce<double>(q, down, pos, tau).loss) / (2 * h);
        worst = std::max(worst, anoclass::testing::relative_error(r.grad_candidates[i], fd));
    }
    EXPECT_LT(worst, 1e-4);
}

TEST(MakePairs, ThreeClassesTwoShots) {
    const std::vector<int> labels{0, 0, 1, 1, 2, 2};
    const auto b = make_pairs(labels, 2, 3);
    ASSERT_EQ(b.size(), 6u);
    for (const auto& p : b) {
        ASSERT_EQ(p.support.size(), 3u);
        EXPECT_EQ(p.support_labels, (std::vector<int>{0, 1, 2}));
        ASSERT_EQ(p.positive_positions.size(), 1u);
        EXPECT_EQ(p.support_labels[p.positive_positions[0]], p.query_label);
        EXPECT_NE(p.support[p.positive_positions[0]], p.query);
    }
    EXPECT_EQ(b[0].support, (std::vector<std::size_t>{1, 2, 4}));
    EXPECT_EQ(b[1].support, (std::vector<std::size_t>{0, 2, 4}));
}

TEST(MakePairs, TwoClassesThreeShotsAndDegenerate) {
    const std::vector<int> labels{1, 0, 1, 0, 0, 1};
    const auto b = make_pairs(labels, 3, 2);
    ASSERT_EQ(b.size(), 6u);
    for (const auto& p : b) EXPECT_EQ(p.support.size(), 4u);
    EXPECT_THROW(make_pairs(std::vector<int>{0, 1}, 1, 2), DegenerateEpisode);
    EXPECT_THROW(make_pairs(std::vector<int>{0, 0, 1}, 2, 2), ArgumentError);
}

TEST(MakePairs, MatchesLiteralAlgorithmAndAccounting) {
    std::mt19937_64 rng(8);
    for (int t = 0; t < 30; ++t) {
        const std::size_t C = 2 + rng() % 4, S = 2 + rng() % 4;
        std::vector<int> labels;
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t s = 0; s < S; ++s) labels.push_back(static_cast<int>(c));
        std::shuffle(labels.begin(), labels.end(), rng);
        const auto got = make_pairs(labels, S, C);
        const auto want = literal_pairs(labels, S, C);
        ASSERT_EQ(got.size(), C * S);
        for (std::size_t i = 0; i < got.size(); ++i) {
            EXPECT_EQ(got[i].query, want[i].first);
            EXPECT_EQ(got[i].support, want[i].second);
            EXPECT_EQ(got[i].support.size(), (S - 1) * C);
            std::map<int, std::size_t> per_class;
            for (int l : got[i].support_labels) ++per_class[l];
            for (const auto& [l, n] : per_class) EXPECT_EQ(n, S - 1);
            EXPECT_EQ(got[i].positive_positions.size(), S - 1);
        }
    }
}

TEST(EmbeddingNet, UnitNormDeterministicAndFullSizeDim) {
    EmbeddingNet<float> toy(toy_arch(), 3);
    const auto m = anoclass::testing::random_tensor_f({2, 8, 8}, 1, 4.0f);
    const auto e = embed(toy, m);
    double n = 0;
    for (double v : e) n += v * v;
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-5);
    EXPECT_EQ(e, embed(toy, m));
    EXPECT_THROW(embed(toy, anoclass::testing::random_tensor_f({3, 8, 8}, 1)), ShapeError);

    EmbeddingNet<float> full(EmbeddingArch{}, 1);
    const auto big = embed(full, anoclass::testing::random_tensor_f({1024, 28, 28}, 2));
    ASSERT_EQ(big.size(), 256u);
    n = 0;
    for (double v : big) n += v * v;
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-5);
}

TEST(EmbeddingNet, HeadGradientMatchesFiniteDifferences) {
    EmbeddingNet<double> net(toy_arch(), 5, 0.5);
    ASSERT_LE(net.parameter_count(), 1000u);
    const auto samples = toy_samples(2, 2, 2, 4, 3, 0.5f);
    std::vector<const Tensor<float>*> maps;
    std::vector<int> labels;
    for (const auto& s : samples) {
        maps.push_back(&s.map);
        labels.push_back(s.label);
    }
    const auto batches = make_pairs(labels, 2, 2);
    const auto x = stack_maps<double>(maps);
    const auto params = net.params();
    nn::zero_grads(params);
    contrastive_step<double>(net, nullptr, maps, batches);
    EXPECT_LT(anoclass::testing::max_param_grad_error(params, [&] { return episode_loss(net, x, batches); }), 1e-4);
}

TEST(Classify, MeanCosineRule) {
    const std::vector<std::vector<double>> sup{{1, 0}, {0, 1}};
    const std::vector<int> labels{0, 1};
    EXPECT_EQ(classify_embeddings(sup, labels, {0.8, 0.1}), 0);
    EXPECT_EQ(classify_embeddings({{1, 0}, {0, 1}, {0.6, 0.8}}, std::vector<int>{0, 1, 2}, {0.6, 0.8}), 2);
    EXPECT_EQ(classify_embeddings(sup, labels, {1, 1}), 0);  // tie goes to the lower id
    EXPECT_THROW(classify_embeddings({}, std::vector<int>{}, {1, 0}), ArgumentError);
}

TEST(Classify, TwoShotTableMatchesBruteForce) {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> n(0, 1);
    for (int t = 0; t < 100; ++t) {
        std::vector<std::vector<double>> sup(4, std::vector<double>(3));
        std::vector<double> q(3);
        for (auto& s : sup)
            for (auto& v : s) v = n(rng);
        for (auto& v : q) v = n(rng);
        const std::vector<int> labels{0, 0, 1, 1};
        auto cosine = [](const std::vector<double>& a, const std::vector<double>& b) {
            double d = 0, na = 0, nb = 0;
            for (std::size_t i = 0; i < a.size(); ++i) {
                d += a[i] * b[i];
                na += a[i] * a[i];
                nb += b[i] * b[i];
            }
            return d / std::sqrt(na * nb);
        };
        const double m0 = (cosine(q, sup[0]) + cosine(q, sup[1])) / 2;
        const double m1 = (cosine(q, sup[2]) + cosine(q, sup[3])) / 2;
        EXPECT_EQ(classify_embeddings(sup, labels, q), m1 > m0 ? 1 : 0);
    }
}

TEST(Classify, ArgmaxInvariantUnderConstantShift) {
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> s{u(rng), u(rng), u(rng), u(rng)};
        const std::vector<int> labels{0, 1, 2, 3};
        std::vector<double> shifted;
        for (double v : s) shifted.push_back(v + 0.37);
        EXPECT_EQ(mean_score_argmax(s, labels), mean_score_argmax(shifted, labels));
    }
}

TEST(Classify, NetworkSelfSimilarity) {
    EmbeddingNet<float> net(toy_arch(), 2);
    auto samples = toy_samples(3, 1, 2, 8, 1);
    samples.push_back({anoclass::testing::random_tensor_f({2, 8, 8}, 99, 3.0f), 2});
    samples[2].label = 1;
    // the query equals the lone support of class 2
    std::vector<Sample> support{samples[0], samples[1], samples[3]};
    EXPECT_EQ(classify(net, support, samples[3].map), 2);
    EXPECT_THROW(classify(net, {}, samples[0].map), ArgumentError);
}

TEST(Finetune, EpochScheduleAndOneShotIdentity) {
    EXPECT_EQ(finetune_epochs(2), 45u);
    EXPECT_EQ(finetune_epochs(3), 25u);
    EXPECT_EQ(finetune_epochs(4), 15u);
    EXPECT_EQ(finetune_epochs(5), 15u);
    EXPECT_EQ(finetune_epochs(1), 0u);

    EmbeddingNet<float> net(toy_arch(), 1);
    const auto before = nn::export_state(net.params(), net.buffers());
    const auto log = finetune(net, SampleSource::in_memory(toy_samples(3, 1, 2, 4, 1)), 1, ContrastiveConfig{});
    EXPECT_EQ(log.iterations, 0u);
    EXPECT_FALSE(log.notice.empty());
    EXPECT_EQ(nn::export_state(net.params(), net.buffers()), before);
}

TEST(Finetune, TraversalCounts) {
    for (std::size_t shots : {2u, 4u}) {
        EmbeddingNet<float> net(toy_arch(), 1);
        const auto log = finetune(net, SampleSource::in_memory(toy_samples(2, shots, 2, 4, 1)), shots, ContrastiveConfig{});
        EXPECT_EQ(log.iterations, finetune_epochs(shots));
        EXPECT_EQ(log.records.size(), finetune_epochs(shots) * 2 * shots);
    }
    ContrastiveConfig cfg;
    EXPECT_DOUBLE_EQ(cfg.lr, 1e-4);
    EXPECT_EQ(cfg.episode_classes, 10u);
    EXPECT_EQ(cfg.max_iterations, 2000u);
}

TEST(Finetune, SeparableToyReachesFullAccuracy) {
    const auto start = std::chrono::steady_clock::now();
    EmbeddingNet<float> net(EmbeddingArch{4, {8, 8}, 16}, 3);
    auto samples = toy_samples(2, 3, 4, 8, 11, 0.0f);
    for (auto& s : samples)
        for (auto& v : s.map.storage()) v += s.label ? 25.0f : -25.0f;
    const auto data = SampleSource::in_memory(samples);
    ContrastiveConfig cfg;
    cfg.epochs = 200 / 6;
    const auto log = finetune(net, data, 3, cfg);
    std::size_t reached = 0;
    for (std::size_t e = 0; e < log.iterations && !reached; ++e) {
        bool all = true;
        for (std::size_t b = 0; b < 6; ++b) all &= log.records[e * 6 + b].accuracy == 1.0;
        if (all) reached = (e + 1) * 6;
    }
    EXPECT_GT(reached, 0u);
    EXPECT_LE(reached, 200u);
    EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 60.0);
}

TEST(Pretrain, StopRuleDeterminismAndErrors) {
    EXPECT_EQ(stopping_iteration(std::vector<double>{0.1, 0.3, 0.45}, 0.4, 2000), 3u);
    const auto data = SampleSource::in_memory(toy_samples(12, 3, 2, 4, 5));
    ContrastiveConfig cfg;
    cfg.max_iterations = 30;
    EmbeddingNet<float> a(toy_arch(), 4), b(toy_arch(), 4);
    const auto la = pretrain(a, data, cfg);
    const auto lb = pretrain(b, data, cfg);
    EXPECT_EQ(la.iterations, lb.iterations);
    EXPECT_GE(la.iterations, 1u);
    for (std::size_t i = 0; i + 1 < la.records.size(); ++i) EXPECT_LE(la.records[i].accuracy, 0.4);
    if (la.threshold_reached) {
        EXPECT_GT(la.records.back().accuracy, 0.4);
    }
    EXPECT_THROW(pretrain(a, SampleSource::in_memory(toy_samples(9, 2, 2, 4, 5)), cfg), ArgumentError);
}

TEST(Maml, DisjointBatchesAndParameterUpdate) {
    std::vector<int> classes(25);
    std::iota(classes.begin(), classes.end(), 0);
    Rng rng = make_rng(3);
    for (int t = 0; t < 50; ++t) {
        const auto [a, b] = maml_split(classes, 10, rng);
        std::set<int> sa(a.begin(), a.end());
        for (int c : b) EXPECT_FALSE(sa.count(c));
        EXPECT_EQ(a.size(), 10u);
        EXPECT_EQ(b.size(), 10u);
    }

    const auto data = SampleSource::in_memory(toy_samples(20, 2, 2, 4, 7));
    ContrastiveConfig cfg;
    cfg.max_iterations = 1;
    EmbeddingNet<float> net(toy_arch(), 2);
    const auto before = nn::export_state(net.params(), nn::BufferList<float>{});
    maml_train(net, data, cfg);
    EXPECT_NE(nn::export_state(net.params(), nn::BufferList<float>{}), before);
    EXPECT_THROW(maml_train(net, SampleSource::in_memory(toy_samples(19, 2, 2, 4, 7)), cfg), ArgumentError);
}

TEST(ContrastiveCheckpoint, RoundTrip) {
    TempDir dir("ctr");
    EmbeddingNet<float> net(toy_arch(), 9, 0.5);
    const auto samples = toy_samples(2, 2, 2, 4, 1);
    finetune(net, SampleSource::in_memory(samples), 2, ContrastiveConfig{.epochs = 1});
    save_contrastive(dir / "net.json", net);
    auto back = load_contrastive(dir / "net.json");
    EXPECT_EQ(embed(back, samples[0].map), embed(net, samples[0].map));
    EXPECT_DOUBLE_EQ(back.tau(), 0.5);
}
