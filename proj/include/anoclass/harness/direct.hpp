#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "anoclass/core/episode.hpp"
#include "anoclass/core/errors.hpp"
#include "anoclass/core/random.hpp"
#include "anoclass/nn/adam.hpp"
#include "anoclass/nn/layers.hpp"

namespace anoclass::harness {

// Direct fine-tuning baseline: the backbone stays frozen and only a fresh
// C-way linear classifier on its pooled final-stage features is trained.
// Features are precomputed, so the head works on plain vectors.

struct DirectConfig {
    std::size_t epochs = 45;
    double lr = 1e-4;
    std::uint64_t seed = 1;
};

class DirectHead {
public:
    DirectHead(std::size_t in_features, std::size_t classes, std::uint64_t seed) : fc_(in_features, classes) {
        if (classes < 2) throw ArgumentError("direct baseline needs at least two classes");
        Rng rng = make_rng(seed, {0x646972ULL});
        fc_.init(rng);
    }

    std::size_t classes() const noexcept { return fc_.out_features(); }
    std::size_t in_features() const noexcept { return fc_.in_features(); }
    nn::ParamList<double> params() {
        nn::ParamList<double> p;
        fc_.collect(p, "fc");
        return p;
    }

    std::vector<double> logits(const std::vector<float>& x) {
        const auto y = fc_.forward(as_row(x), false);
        return {y.values().begin(), y.values().end()};
    }

    int predict(const std::vector<float>& x) { return static_cast<int>(argmax_lowest(logits(x))); }

    /// Softmax cross-entropy of one example; accumulates gradients.
    double loss_and_grad(const std::vector<float>& x, int label) {
        const auto y = fc_.forward(as_row(x), true);
        const std::size_t c = classes();
        const double top = *std::max_element(y.values().begin(), y.values().end());
        std::vector<double> prob(c);
        double z = 0;
        for (std::size_t k = 0; k < c; ++k) z += prob[k] = std::exp(y[k] - top);
        Tensor<double> dy({1, c});
        for (std::size_t k = 0; k < c; ++k) dy[k] = prob[k] / z - (static_cast<int>(k) == label ? 1.0 : 0.0);
        fc_.backward(dy);
        fc_.release_cache();
        return -std::log(std::max(prob[static_cast<std::size_t>(label)] / z, 1e-300));
    }

private:
    Tensor<double> as_row(const std::vector<float>& x) const {
        if (x.size() != in_features())
            throw ShapeError("direct head expects " + std::to_string(in_features()) + " features, got " + std::to_string(x.size()));
        Tensor<double> t({1, x.size()});
        std::copy(x.begin(), x.end(), t.data());
        return t;
    }

    nn::Linear<double> fc_;
};

/// Per-image Adam steps over the support set, visiting it in a fresh seeded
/// order every epoch. Returns the mean loss of each epoch.
inline std::vector<double> train_direct(DirectHead& head, const std::vector<std::vector<float>>& features,
                                        const std::vector<int>& labels, const DirectConfig& cfg) {
    if (features.size() != labels.size()) throw ArgumentError("features and labels differ in length");
    if (features.empty()) throw ArgumentError("direct baseline needs a non-empty support set");
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= head.classes()) throw ArgumentError("label outside the head's class range");
    nn::Adam<double> opt(head.params(), nn::AdamOptions{.lr = cfg.lr});
    std::vector<std::size_t> order(features.size());
    std::vector<double> epoch_loss;
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng = make_rng(cfg.seed, {0x646972ULL, e});
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0;
        for (auto i : order) {
            opt.zero_grad();
            total += head.loss_and_grad(features[i], labels[i]);
            opt.step();
        }
        epoch_loss.push_back(total / static_cast<double>(order.size()));
    }
    return epoch_loss;
}

/// Fraction of queries whose arg-max logit equals the label.
inline double direct_accuracy(DirectHead& head, const std::vector<std::vector<float>>& features, const std::vector<int>& labels) {
    if (features.empty()) throw ArgumentError("no queries to evaluate");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < features.size(); ++i) correct += head.predict(features[i]) == labels[i];
    return static_cast<double>(correct) / static_cast<double>(features.size());
}

}  // namespace anoclass::harness
