#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "anoclass/core/episode.hpp"
#include "anoclass/core/errors.hpp"
#include "anoclass/core/random.hpp"
#include "anoclass/core/tensor.hpp"
#include "anoclass/nn/adam.hpp"
#include "anoclass/nn/checkpoint.hpp"
#include "anoclass/nn/layers.hpp"

namespace anoclass::relation {

inline constexpr double kScoreEps = 1e-7;

/// Class-weighted binary cross-entropy over scores in (0,1); positives carry
/// weight C-1. Scores are clamped to [eps, 1-eps].
inline double weighted_bce(std::span<const double> scores, std::span<const int> labels, int classes) {
    if (scores.size() != labels.size() || scores.empty()) throw ArgumentError("weighted_bce needs matching, non-empty inputs");
    if (classes < 2) throw ArgumentError("weighted_bce needs at least two classes");
    const double w = classes - 1;
    double s = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double y = std::clamp(scores[i], kScoreEps, 1.0 - kScoreEps);
        s += labels[i] ? w * std::log(y) : std::log(1.0 - y);
    }
    return -s / static_cast<double>(scores.size());
}

/// dL/dscore for weighted_bce (zero where the clamp is active).
inline std::vector<double> weighted_bce_grad(std::span<const double> scores, std::span<const int> labels, int classes) {
    const double w = classes - 1;
    const double n = static_cast<double>(scores.size());
    std::vector<double> g(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double y = scores[i];
        if (y < kScoreEps || y > 1.0 - kScoreEps) continue;
        g[i] = labels[i] ? -w / (y * n) : 1.0 / ((1.0 - y) * n);
    }
    return g;
}

struct RelationArch {
    std::size_t in_channels = 1024;  // c3; the head sees 2 * c3
    std::size_t block_channels = 64;
    std::size_t hidden = 8;
};

/// Two conv blocks over the (support, query) channel stack, global average
/// pool, Linear -> ReLU -> Linear -> sigmoid.
template <typename T>
class RelationHead {
public:
    RelationHead(RelationArch arch, std::uint64_t seed)
        : arch_(arch),
          seed_(seed),
          block1_(2 * arch.in_channels, arch.block_channels),
          block2_(arch.block_channels, arch.block_channels),
          fc1_(arch.block_channels, arch.hidden),
          fc2_(arch.hidden, 1) {
        Rng rng = make_rng(seed, {0x72656cULL});
        block1_.init(rng);
        block2_.init(rng);
        fc1_.init(rng);
        fc2_.init(rng);
    }

    const RelationArch& arch() const noexcept { return arch_; }
    std::uint64_t seed() const noexcept { return seed_; }

    /// (N, 2*c3, h, w) -> (N, 1) scores in (0, 1).
    Tensor<T> forward(const Tensor<T>& x, bool train) {
        nn::expect_rank(x.shape(), 4, "RelationHead");
        if (x.dim(1) != 2 * arch_.in_channels)
            throw ShapeError("RelationHead expects " + std::to_string(2 * arch_.in_channels) + " channels, got " + shape_str(x.shape()));
        auto y = block1_.forward(x, train);
        y = block2_.forward(y, train);
        y = gap_.forward(y, train);
        y = fc1_.forward(y, train);
        y = relu_.forward(y, train);
        y = fc2_.forward(y, train);
        return sigmoid_.forward(y, train);
    }

    void backward(const Tensor<T>& dy) {
        auto g = sigmoid_.backward(dy);
        g = fc2_.backward(g);
        g = relu_.backward(g);
        g = fc1_.backward(g);
        g = gap_.backward(g);
        g = block2_.backward(g);
        block1_.backward(g);
    }

    nn::ParamList<T> params() {
        nn::ParamList<T> p;
        block1_.collect(p, "block1");
        block2_.collect(p, "block2");
        fc1_.collect(p, "fc1");
        fc2_.collect(p, "fc2");
        return p;
    }

    nn::BufferList<T> buffers() {
        nn::BufferList<T> b;
        block1_.collect_buffers(b, "block1");
        block2_.collect_buffers(b, "block2");
        return b;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        for (const auto& p : params()) n += p.value->size();
        return n;
    }

    void release_cache() {
        block1_.release_cache();
        block2_.release_cache();
    }

    /// Replace the batch-norm running statistics with those of `x`.
    void calibrate(const Tensor<T>& x) {
        const T m = block1_.bn_momentum();
        block1_.set_bn_momentum(T(1));
        block2_.set_bn_momentum(T(1));
        forward(x, true);
        block1_.set_bn_momentum(m);
        block2_.set_bn_momentum(m);
        release_cache();
    }

    nlohmann::json descriptor() {
        return {{"model", "vanilla"},
                {"in_channels", arch_.in_channels},
                {"block_channels", arch_.block_channels},
                {"hidden", arch_.hidden},
                {"seed", seed_},
                {"parameter_count", parameter_count()}};
    }

private:
    RelationArch arch_;
    std::uint64_t seed_;
    nn::ConvBlock<T> block1_, block2_;
    nn::GlobalAvgPool<T> gap_;
    nn::Linear<T> fc1_;
    nn::ReLU<T> relu_;
    nn::Linear<T> fc2_;
    nn::Sigmoid<T> sigmoid_;
};

/// Batch of (support, query) stacks, support channels first.
template <typename T>
Tensor<T> stack_pairs(const std::vector<const Tensor<float>*>& supports, const std::vector<const Tensor<float>*>& queries) {
    if (supports.size() != queries.size() || supports.empty()) throw ArgumentError("stack_pairs needs matching, non-empty lists");
    const Shape& s = supports.front()->shape();
    if (s.size() != 3) throw ShapeError("relation inputs must be (c3, h, w), got " + shape_str(s));
    const std::size_t plane = shape_numel(s);
    Tensor<T> out({supports.size(), 2 * s[0], s[1], s[2]});
    for (std::size_t n = 0; n < supports.size(); ++n) {
        if (supports[n]->shape() != s || queries[n]->shape() != s)
            throw ShapeError("relation pair shape mismatch: " + shape_str(supports[n]->shape()) + " vs " + shape_str(queries[n]->shape()));
        T* dst = out.data() + n * 2 * plane;
        std::transform(supports[n]->data(), supports[n]->data() + plane, dst, [](float v) { return static_cast<T>(v); });
        std::transform(queries[n]->data(), queries[n]->data() + plane, dst + plane, [](float v) { return static_cast<T>(v); });
    }
    return out;
}

/// Score of one (support, query) pair with inference-mode batch norm.
template <typename T>
double relation_forward(RelationHead<T>& head, const Tensor<float>& support, const Tensor<float>& query) {
    if (support.shape() != query.shape()) throw ShapeError("support and query maps differ in shape");
    return static_cast<double>(head.forward(stack_pairs<T>({&support}, {&query}), false)[0]);
}

/// Mean relation score per class over the support items, argmax, lowest id on ties.
template <typename T>
int classify_vanilla(RelationHead<T>& head, const std::vector<Sample>& support, const Tensor<float>& query) {
    if (support.empty()) throw ArgumentError("classify_vanilla needs a non-empty support set");
    std::vector<const Tensor<float>*> s, q;
    std::vector<int> labels;
    for (const auto& item : support) {
        s.push_back(&item.map);
        q.push_back(&query);
        labels.push_back(item.label);
    }
    const auto out = head.forward(stack_pairs<T>(s, q), false);
    std::vector<double> scores(out.values().begin(), out.values().end());
    return mean_score_argmax(scores, labels);
}

struct VanillaConfig {
    enum class Mode { finetune, pretrain } mode = Mode::finetune;
    std::size_t epochs = 45;
    double lr = 1e-4;
    double stop_accuracy = 0.4;
    std::size_t max_iterations = 2000;
    std::size_t episode_classes = 10;
    std::uint64_t seed = 1;
};

namespace detail {

/// Scores the query against every support, takes one Adam step on the
/// weighted BCE, and reports (loss, predicted support position).
template <typename T>
std::pair<double, std::size_t> vanilla_step(RelationHead<T>& head, nn::Adam<T>& opt, const std::vector<Tensor<float>>& supports,
                                            const Tensor<float>& query, std::size_t target) {
    std::vector<const Tensor<float>*> s, q;
    for (const auto& m : supports) {
        s.push_back(&m);
        q.push_back(&query);
    }
    opt.zero_grad();
    const auto out = head.forward(stack_pairs<T>(s, q), true);
    std::vector<double> scores(out.values().begin(), out.values().end());
    std::vector<int> labels(scores.size(), 0);
    labels[target] = 1;
    const int classes = static_cast<int>(scores.size());
    const double loss = weighted_bce(scores, labels, classes);
    const auto g = weighted_bce_grad(scores, labels, classes);
    Tensor<T> dy(out.shape());
    for (std::size_t i = 0; i < g.size(); ++i) dy[i] = static_cast<T>(g[i]);
    head.backward(dy);
    opt.step();
    head.release_cache();
    return {loss, argmax_lowest(scores)};
}

}  // namespace detail

/// Trains the head on residual maps.
///
/// Fine-tuning: the first sample of every class (in source order) is the
/// fixed support; every other sample is a query scored against all supports,
/// one Adam step per query, for `epochs` passes.
/// Pretraining: each iteration draws `episode_classes` classes and two
/// samples per class (support, query) and runs the same per-query step; stops
/// once an iteration's accuracy exceeds `stop_accuracy`.
template <typename T>
TrainLog train_vanilla(RelationHead<T>& head, const SampleSource& data, const VanillaConfig& cfg) {
    nn::Adam<T> opt(head.params(), nn::AdamOptions{.lr = cfg.lr});
    TrainLog log;
    const auto groups = data.by_class();

    if (cfg.mode == VanillaConfig::Mode::finetune) {
        if (groups.size() < 2) throw ProtocolError("fine-tuning needs at least two classes");
        std::vector<Tensor<float>> supports;
        std::vector<std::pair<std::size_t, std::size_t>> queries;  // (sample index, support position)
        std::size_t pos = 0;
        for (const auto& [label, idx] : groups) {
            if (idx.size() < 2) throw ProtocolError("class " + std::to_string(label) + " has a single sample, so no query is available");
            supports.push_back(data.load(idx.front()));
            for (std::size_t k = 1; k < idx.size(); ++k) queries.emplace_back(idx[k], pos);
            ++pos;
        }
        std::vector<Tensor<float>> query_maps;
        for (const auto& [i, _] : queries) query_maps.push_back(data.load(i));
        for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
            for (std::size_t k = 0; k < queries.size(); ++k) {
                const auto [loss, pred] = detail::vanilla_step(head, opt, supports, query_maps[k], queries[k].second);
                log.records.push_back({log.records.size(), loss, pred == queries[k].second ? 1.0 : 0.0});
            }
            ++log.iterations;
        }
        return log;
    }

    const auto eligible = classes_with_at_least(groups, 2);
    if (eligible.size() < cfg.episode_classes)
        throw ArgumentError("pretraining needs " + std::to_string(cfg.episode_classes) + " classes with two samples, found " +
                            std::to_string(eligible.size()));
    for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
        Rng rng = make_rng(cfg.seed, {0x76616eULL, it});
        const auto classes = sample_without_replacement(eligible, cfg.episode_classes, rng);
        std::vector<Tensor<float>> supports, queries;
        for (int c : classes) {
            const auto pick = sample_without_replacement(groups.at(c), 2, rng);
            supports.push_back(data.load(pick[0]));
            queries.push_back(data.load(pick[1]));
        }
        double loss = 0, correct = 0;
        for (std::size_t k = 0; k < queries.size(); ++k) {
            const auto [l, pred] = detail::vanilla_step(head, opt, supports, queries[k], k);
            loss += l;
            correct += pred == k ? 1 : 0;
        }
        const double acc = correct / static_cast<double>(queries.size());
        log.records.push_back({it, loss / static_cast<double>(queries.size()), acc});
        log.iterations = it + 1;
        if (should_stop(acc, cfg.stop_accuracy)) {
            log.threshold_reached = true;
            break;
        }
    }
    return log;
}

template <typename T>
void save_relation(const std::filesystem::path& path, RelationHead<T>& head) {
    nn::save_checkpoint(path, head.descriptor(), nn::export_state(head.params(), head.buffers()));
}

inline RelationHead<float> load_relation(const std::filesystem::path& path) {
    const auto ck = nn::load_checkpoint(path);
    if (ck.descriptor.value("model", "") != "vanilla") throw LoadError(path.string() + " is not a vanilla relation checkpoint");
    RelationArch arch{ck.descriptor.at("in_channels").get<std::size_t>(), ck.descriptor.at("block_channels").get<std::size_t>(),
                      ck.descriptor.at("hidden").get<std::size_t>()};
    RelationHead<float> head(arch, ck.descriptor.at("seed").get<std::uint64_t>());
    nn::import_state(ck.tensors, head.params(), head.buffers());
    return head;
}

}  // namespace anoclass::relation
