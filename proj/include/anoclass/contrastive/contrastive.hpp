#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
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

namespace anoclass::contrastive {

// ---------------------------------------------------------------------------
// InfoNCE with the query as anchor and the support embeddings as candidates.

template <typename T>
struct InfoNceResult {
    double loss = 0;
    std::vector<T> grad_query;       // d
    std::vector<T> grad_candidates;  // K * d, row-major
};

/// Mean over positives p of -log softmax_p(q . c_j / tau).
template <typename T>
InfoNceResult<T> info_nce(std::span<const T> query, std::span<const T> candidates, std::span<const std::size_t> positives,
                          double tau = 1.0) {
    const std::size_t d = query.size();
    if (d == 0 || candidates.empty() || candidates.size() % d != 0) throw ArgumentError("info_nce: candidates must be K x d, K > 0");
    if (positives.empty()) throw ArgumentError("info_nce: at least one positive is required");
    if (!(tau > 0)) throw ArgumentError("info_nce: temperature must be positive");
    const std::size_t k = candidates.size() / d;
    for (auto p : positives)
        if (p >= k) throw ArgumentError("info_nce: positive index out of range");

    std::vector<double> logits(k);
    for (std::size_t j = 0; j < k; ++j) {
        double s = 0;
        for (std::size_t i = 0; i < d; ++i) s += static_cast<double>(query[i]) * static_cast<double>(candidates[j * d + i]);
        logits[j] = s / tau;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (double l : logits) z += std::exp(l - mx);
    const double lse = mx + std::log(z);

    InfoNceResult<T> r;
    const double inv_p = 1.0 / static_cast<double>(positives.size());
    for (auto p : positives) r.loss += (lse - logits[p]) * inv_p;

    // dL/dlogit_j = softmax_j - [j positive] / P
    std::vector<double> dl(k);
    for (std::size_t j = 0; j < k; ++j) dl[j] = std::exp(logits[j] - lse);
    for (auto p : positives) dl[p] -= inv_p;
    r.grad_query.assign(d, T(0));
    r.grad_candidates.assign(k * d, T(0));
    for (std::size_t j = 0; j < k; ++j) {
        const double g = dl[j] / tau;
        for (std::size_t i = 0; i < d; ++i) {
            r.grad_query[i] += static_cast<T>(g * static_cast<double>(candidates[j * d + i]));
            r.grad_candidates[j * d + i] = static_cast<T>(g * static_cast<double>(query[i]));
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Query/support pair generation.

struct PairBatch {
    std::size_t query = 0;                     // index into the feature list
    int query_label = 0;
    std::vector<std::size_t> support;          // indices into the feature list
    std::vector<int> support_labels;
    std::vector<std::size_t> positive_positions;  // positions within `support`
};

/// Sorts features by (class, order of appearance); every feature becomes a
/// query once, and its support takes, for j = 1..S-1 and each class i in
/// turn, the j-th remaining feature of class i.
inline std::vector<PairBatch> make_pairs(std::span<const int> labels, std::size_t shots, std::size_t classes) {
    if (shots < 2) throw DegenerateEpisode("make_pairs needs at least two shots per class; the support would be empty");
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
    if (groups.size() != classes) {
        throw ArgumentError("make_pairs expected " + std::to_string(classes) + " classes, found " + std::to_string(groups.size()));
    }
    for (const auto& [label, idx] : groups) {
        if (idx.size() != shots)
            throw ArgumentError("class " + std::to_string(label) + " has " + std::to_string(idx.size()) + " features, expected " +
                                std::to_string(shots));
    }
    std::vector<PairBatch> out;
    for (const auto& [qlabel, qidx] : groups) {
        for (std::size_t qs = 0; qs < shots; ++qs) {
            PairBatch b;
            b.query = qidx[qs];
            b.query_label = qlabel;
            for (std::size_t j = 0; j + 1 < shots; ++j) {
                for (const auto& [label, idx] : groups) {
                    // j-th remaining feature of this class once the query is removed
                    const std::size_t pick = (label == qlabel && j >= qs) ? j + 1 : j;
                    if (label == qlabel) b.positive_positions.push_back(b.support.size());
                    b.support.push_back(idx[pick]);
                    b.support_labels.push_back(label);
                }
            }
            out.push_back(std::move(b));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Embedding network.

struct EmbeddingArch {
    std::size_t in_channels = 1024;
    std::vector<std::size_t> channels{256, 128, 64, 64};
    std::size_t embed_dim = 256;
};

/// Conv blocks -> global average pool -> linear -> L2 normalisation. One
/// network embeds both queries and supports.
template <typename T>
class EmbeddingNet {
public:
    EmbeddingNet(EmbeddingArch arch, std::uint64_t seed, double tau = 1.0) : arch_(std::move(arch)), seed_(seed), tau_(tau) {
        if (arch_.channels.empty()) throw ArgumentError("embedding network needs at least one conv block");
        if (!(tau > 0)) throw ArgumentError("temperature must be positive");
        std::size_t in = arch_.in_channels;
        for (auto c : arch_.channels) {
            blocks_.emplace_back(in, c);
            in = c;
        }
        fc_ = nn::Linear<T>(in, arch_.embed_dim);
        Rng rng = make_rng(seed, {0x656d62ULL});
        for (auto& b : blocks_) b.init(rng);
        fc_.init(rng);
    }

    const EmbeddingArch& arch() const noexcept { return arch_; }
    std::uint64_t seed() const noexcept { return seed_; }
    double tau() const noexcept { return tau_; }
    std::size_t embed_dim() const noexcept { return arch_.embed_dim; }

    /// (N, c3, h, w) -> (N, d) unit rows.
    Tensor<T> forward(const Tensor<T>& x, bool train) {
        nn::expect_rank(x.shape(), 4, "EmbeddingNet");
        if (x.dim(1) != arch_.in_channels)
            throw ShapeError("EmbeddingNet expects " + std::to_string(arch_.in_channels) + " channels, got " + shape_str(x.shape()));
        Tensor<T> y = x;
        for (auto& b : blocks_) y = b.forward(y, train);
        y = gap_.forward(y, train);
        y = fc_.forward(y, train);
        return norm_.forward(y, train);
    }

    void backward(const Tensor<T>& dy) {
        auto g = norm_.backward(dy);
        g = fc_.backward(g);
        g = gap_.backward(g);
        for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) g = it->backward(g);
    }

    nn::ParamList<T> params() {
        nn::ParamList<T> p;
        for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(p, "block" + std::to_string(i + 1));
        fc_.collect(p, "fc");
        return p;
    }

    nn::BufferList<T> buffers() {
        nn::BufferList<T> b;
        for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect_buffers(b, "block" + std::to_string(i + 1));
        return b;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        for (const auto& p : params()) n += p.value->size();
        return n;
    }

    void release_cache() {
        for (auto& b : blocks_) b.release_cache();
        fc_.release_cache();
    }

    /// Replace the batch-norm running statistics with those of `x`.
    void calibrate(const Tensor<T>& x) {
        const T m = blocks_.front().bn_momentum();
        for (auto& b : blocks_) b.set_bn_momentum(T(1));
        forward(x, true);
        for (auto& b : blocks_) b.set_bn_momentum(m);
        release_cache();
    }

    nlohmann::json descriptor() {
        return {{"model", "contrastive"},
                {"in_channels", arch_.in_channels},
                {"channels", arch_.channels},
                {"embed_dim", arch_.embed_dim},
                {"tau", tau_},
                {"seed", seed_},
                {"parameter_count", parameter_count()}};
    }

private:
    EmbeddingArch arch_;
    std::uint64_t seed_;
    double tau_;
    std::vector<nn::ConvBlock<T>> blocks_;
    nn::GlobalAvgPool<T> gap_;
    nn::Linear<T> fc_;
    nn::L2Normalize<T> norm_;
};

template <typename T>
Tensor<T> stack_maps(const std::vector<const Tensor<float>*>& maps) {
    if (maps.empty()) throw ArgumentError("stack_maps needs at least one map");
    const Shape& s = maps.front()->shape();
    if (s.size() != 3) throw ShapeError("residual maps must be (c3, h, w), got " + shape_str(s));
    const std::size_t plane = shape_numel(s);
    Tensor<T> out({maps.size(), s[0], s[1], s[2]});
    for (std::size_t n = 0; n < maps.size(); ++n) {
        if (maps[n]->shape() != s) throw ShapeError("residual map shapes differ: " + shape_str(maps[n]->shape()) + " vs " + shape_str(s));
        std::transform(maps[n]->data(), maps[n]->data() + plane, out.data() + n * plane, [](float v) { return static_cast<T>(v); });
    }
    return out;
}

/// Inference-mode embedding of one map.
template <typename T>
std::vector<double> embed(EmbeddingNet<T>& net, const Tensor<float>& map) {
    const auto e = net.forward(stack_maps<T>({&map}), false);
    return {e.values().begin(), e.values().end()};
}

/// Per class mean cosine similarity of the query to its supports; argmax,
/// lowest class id on ties.
inline int classify_embeddings(const std::vector<std::vector<double>>& support, std::span<const int> labels,
                               const std::vector<double>& query) {
    if (support.empty()) throw ArgumentError("classify needs a non-empty support set");
    std::vector<double> sims;
    for (const auto& s : support) {
        double dot = 0, ns = 0, nq = 0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            dot += s[i] * query[i];
            ns += s[i] * s[i];
            nq += query[i] * query[i];
        }
        sims.push_back(dot / std::max(std::sqrt(ns * nq), 1e-300));
    }
    return mean_score_argmax(sims, labels);
}

template <typename T>
int classify(EmbeddingNet<T>& net, const std::vector<Sample>& support, const Tensor<float>& query) {
    if (support.empty()) throw ArgumentError("classify needs a non-empty support set");
    std::vector<const Tensor<float>*> maps{&query};
    std::vector<int> labels;
    for (const auto& s : support) {
        maps.push_back(&s.map);
        labels.push_back(s.label);
    }
    const auto e = net.forward(stack_maps<T>(maps), false);
    const std::size_t d = net.embed_dim();
    std::vector<double> q(e.data(), e.data() + d);
    std::vector<std::vector<double>> sup;
    for (std::size_t i = 1; i < maps.size(); ++i) sup.emplace_back(e.data() + i * d, e.data() + (i + 1) * d);
    return classify_embeddings(sup, labels, q);
}

// ---------------------------------------------------------------------------
// Training.

struct ContrastiveConfig {
    double lr = 1e-4;
    double stop_accuracy = 0.4;
    std::size_t max_iterations = 2000;
    std::size_t episode_classes = 10;
    std::size_t episode_shots = 2;
    std::size_t epochs = 0;  // fine-tuning traversals; 0 selects the shot-dependent schedule
    std::uint64_t seed = 1;
};

/// Fine-tuning traversals per shot count: 45 (2), 25 (3), 15 (4 and more), none for one shot.
inline std::size_t finetune_epochs(std::size_t shots) {
    if (shots <= 1) return 0;
    if (shots == 2) return 45;
    if (shots == 3) return 25;
    return 15;
}

struct StepResult {
    double loss = 0;
    double accuracy = 0;
};

/// Embeds `maps` once in training mode, averages InfoNCE over `batches`
/// (indices refer to `maps`), back-propagates, and steps the optimiser when
/// one is given. Accuracy uses the mean-cosine rule on the same embeddings.
template <typename T>
StepResult contrastive_step(EmbeddingNet<T>& net, nn::Adam<T>* opt, const std::vector<const Tensor<float>*>& maps,
                            const std::vector<PairBatch>& batches) {
    if (opt) opt->zero_grad();
    const auto e = net.forward(stack_maps<T>(maps), true);
    const std::size_t d = net.embed_dim();
    Tensor<T> de(e.shape());
    StepResult r;
    const double inv_b = 1.0 / static_cast<double>(batches.size());
    for (const auto& b : batches) {
        std::vector<T> cands;
        cands.reserve(b.support.size() * d);
        for (auto s : b.support) cands.insert(cands.end(), e.data() + s * d, e.data() + (s + 1) * d);
        const std::span<const T> q(e.data() + b.query * d, d);
        const auto nce = info_nce<T>(q, cands, b.positive_positions, net.tau());
        r.loss += nce.loss * inv_b;
        for (std::size_t i = 0; i < d; ++i) de[b.query * d + i] += static_cast<T>(nce.grad_query[i] * inv_b);
        for (std::size_t j = 0; j < b.support.size(); ++j)
            for (std::size_t i = 0; i < d; ++i) de[b.support[j] * d + i] += static_cast<T>(nce.grad_candidates[j * d + i] * inv_b);

        std::vector<std::vector<double>> sup;
        for (std::size_t j = 0; j < b.support.size(); ++j) sup.emplace_back(cands.begin() + j * d, cands.begin() + (j + 1) * d);
        const std::vector<double> qv(q.begin(), q.end());
        r.accuracy += (classify_embeddings(sup, b.support_labels, qv) == b.query_label ? 1.0 : 0.0) * inv_b;
    }
    net.backward(de);
    if (opt) opt->step();
    net.release_cache();
    return r;
}

namespace detail {

struct Episode {
    std::vector<Tensor<float>> maps;
    std::vector<int> labels;
};

inline Episode draw_episode(const SampleSource& data, const std::map<int, std::vector<std::size_t>>& groups,
                            const std::vector<int>& classes, std::size_t shots, Rng& rng) {
    Episode ep;
    for (int c : classes) {
        for (auto i : sample_without_replacement(groups.at(c), shots, rng)) {
            ep.maps.push_back(data.load(i));
            ep.labels.push_back(c);
        }
    }
    return ep;
}

inline std::vector<const Tensor<float>*> pointers(const std::vector<Tensor<float>>& maps) {
    std::vector<const Tensor<float>*> p;
    for (const auto& m : maps) p.push_back(&m);
    return p;
}

}  // namespace detail

/// Pseudo-class pretraining: each iteration draws `episode_classes` classes
/// and `episode_shots` samples of each, averages InfoNCE over every pair
/// batch of the episode, and takes one Adam step. Stops once an iteration's
/// accuracy exceeds `stop_accuracy` or after `max_iterations`.
template <typename T>
TrainLog pretrain(EmbeddingNet<T>& net, const SampleSource& data, const ContrastiveConfig& cfg) {
    const auto groups = data.by_class();
    const auto eligible = classes_with_at_least(groups, cfg.episode_shots);
    if (eligible.size() < cfg.episode_classes)
        throw ArgumentError("pretraining needs " + std::to_string(cfg.episode_classes) + " pseudo-classes with " +
                            std::to_string(cfg.episode_shots) + " samples, found " + std::to_string(eligible.size()));
    nn::Adam<T> opt(net.params(), nn::AdamOptions{.lr = cfg.lr});
    TrainLog log;
    for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
        Rng rng = make_rng(cfg.seed, {0x707265ULL, it});
        const auto classes = sample_without_replacement(eligible, cfg.episode_classes, rng);
        const auto ep = detail::draw_episode(data, groups, classes, cfg.episode_shots, rng);
        const auto batches = make_pairs(ep.labels, cfg.episode_shots, cfg.episode_classes);
        const auto r = contrastive_step(net, &opt, detail::pointers(ep.maps), batches);
        log.records.push_back({it, r.loss, r.accuracy});
        log.iterations = it + 1;
        if (should_stop(r.accuracy, cfg.stop_accuracy)) {
            log.threshold_reached = true;
            break;
        }
    }
    return log;
}

/// Fine-tuning on the real support features (exactly `shots` per class):
/// every epoch runs each pair batch once with one Adam step per batch.
/// One shot leaves the network untouched.
template <typename T>
TrainLog finetune(EmbeddingNet<T>& net, const SampleSource& data, std::size_t shots, const ContrastiveConfig& cfg) {
    TrainLog log;
    if (shots <= 1) {
        log.notice = "one-shot task: fine-tuning skipped, the pretrained network classifies directly";
        return log;
    }
    const auto groups = data.by_class();
    const auto batches = make_pairs(data.labels(), shots, groups.size());
    std::vector<Tensor<float>> maps;
    for (std::size_t i = 0; i < data.size(); ++i) maps.push_back(data.load(i));
    nn::Adam<T> opt(net.params(), nn::AdamOptions{.lr = cfg.lr});
    const std::size_t epochs = cfg.epochs ? cfg.epochs : finetune_epochs(shots);
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        for (const auto& b : batches) {
            // Only the query and its supports enter the forward pass.
            std::vector<const Tensor<float>*> sub{&maps[b.query]};
            PairBatch local = b;
            local.query = 0;
            for (std::size_t j = 0; j < b.support.size(); ++j) {
                sub.push_back(&maps[b.support[j]]);
                local.support[j] = j + 1;
            }
            const auto r = contrastive_step(net, &opt, sub, {local});
            log.records.push_back({log.records.size(), r.loss, r.accuracy});
        }
        ++log.iterations;
    }
    return log;
}

/// Two disjoint class batches for one meta-iteration.
inline std::pair<std::vector<int>, std::vector<int>> maml_split(const std::vector<int>& eligible, std::size_t per_batch, Rng& rng) {
    auto drawn = sample_without_replacement(eligible, 2 * per_batch, rng);
    std::vector<int> a(drawn.begin(), drawn.begin() + static_cast<long>(per_batch));
    std::vector<int> b(drawn.begin() + static_cast<long>(per_batch), drawn.end());
    return {a, b};
}

/// First-order MAML-style pretraining. Batch A takes an inner Adam step;
/// the gradient of batch B at the adapted parameters is then applied to the
/// pre-adaptation parameters by the outer Adam. Same stop rule as pretrain,
/// evaluated on batch B.
template <typename T>
TrainLog maml_train(EmbeddingNet<T>& net, const SampleSource& data, const ContrastiveConfig& cfg, double inner_lr = 1e-4) {
    const auto groups = data.by_class();
    const auto eligible = classes_with_at_least(groups, cfg.episode_shots);
    if (eligible.size() < 2 * cfg.episode_classes)
        throw ArgumentError("MAML mode needs " + std::to_string(2 * cfg.episode_classes) + " pseudo-classes, found " +
                            std::to_string(eligible.size()));
    const auto params = net.params();
    nn::Adam<T> inner(params, nn::AdamOptions{.lr = inner_lr});
    nn::Adam<T> outer(params, nn::AdamOptions{.lr = cfg.lr});
    TrainLog log;
    for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
        Rng rng = make_rng(cfg.seed, {0x6d616dULL, it});
        const auto [ca, cb] = maml_split(eligible, cfg.episode_classes, rng);
        const auto ea = detail::draw_episode(data, groups, ca, cfg.episode_shots, rng);
        const auto eb = detail::draw_episode(data, groups, cb, cfg.episode_shots, rng);

        std::vector<Tensor<T>> saved;
        for (const auto& p : params) saved.push_back(*p.value);
        contrastive_step(net, &inner, detail::pointers(ea.maps), make_pairs(ea.labels, cfg.episode_shots, cfg.episode_classes));

        nn::zero_grads(params);
        const auto r = contrastive_step<T>(net, nullptr, detail::pointers(eb.maps), make_pairs(eb.labels, cfg.episode_shots, cfg.episode_classes));
        for (std::size_t i = 0; i < params.size(); ++i) *params[i].value = saved[i];
        outer.step();  // gradients of batch B, first-order

        log.records.push_back({it, r.loss, r.accuracy});
        log.iterations = it + 1;
        if (should_stop(r.accuracy, cfg.stop_accuracy)) {
            log.threshold_reached = true;
            break;
        }
    }
    return log;
}

template <typename T>
void save_contrastive(const std::filesystem::path& path, EmbeddingNet<T>& net) {
    nn::save_checkpoint(path, net.descriptor(), nn::export_state(net.params(), net.buffers()));
}

inline EmbeddingNet<float> load_contrastive(const std::filesystem::path& path) {
    const auto ck = nn::load_checkpoint(path);
    if (ck.descriptor.value("model", "") != "contrastive") throw LoadError(path.string() + " is not a contrastive checkpoint");
    EmbeddingArch arch{ck.descriptor.at("in_channels").get<std::size_t>(),
                       ck.descriptor.at("channels").get<std::vector<std::size_t>>(),
                       ck.descriptor.at("embed_dim").get<std::size_t>()};
    EmbeddingNet<float> net(arch, ck.descriptor.at("seed").get<std::uint64_t>(), ck.descriptor.at("tau").get<double>());
    nn::import_state(ck.tensors, net.params(), net.buffers());
    return net;
}

}  // namespace anoclass::contrastive
