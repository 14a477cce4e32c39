// Minimal end-to-end episode on synthetic data: build a memory bank from
// "normal" patch maps, turn defect maps into residuals, fine-tune the
// contrastive classifier on a 3-shot support set and classify the queries.

#include <iostream>
#include <random>
#include <vector>

#include "anoclass/contrastive/contrastive.hpp"
#include "anoclass/memory_bank/bank.hpp"

using namespace anoclass;

namespace {

constexpr std::size_t kChannels = 8, kGrid = 6;

backbone::PatchFeatureMap random_map(std::mt19937_64& rng, float shift, std::size_t channel) {
    std::normal_distribution<float> noise(0.0f, 0.3f);
    Tensor<float> v({kGrid * kGrid, kChannels});
    for (std::size_t p = 0; p < kGrid * kGrid; ++p)
        for (std::size_t c = 0; c < kChannels; ++c) v.at(p, c) = noise(rng) + (c == channel && p < 9 ? shift : 0.0f);
    return {std::move(v), kGrid, kGrid, "toy"};
}

}  // namespace

int main() {
    std::mt19937_64 rng(7);
    std::vector<backbone::PatchFeatureMap> normals;
    for (int i = 0; i < 10; ++i) normals.push_back(random_map(rng, 0.0f, 0));
    const auto bank = memory_bank::build_bank(normals, 0.1, 1);
    std::cout << "memory bank: " << bank.rows() << " of " << bank.source_count() << " patch vectors\n";

    // Class k puts its defect on channel k.
    const int classes = 3, shots = 3, queries = 5;
    std::vector<Sample> support, query;
    for (int k = 0; k < classes; ++k)
        for (int i = 0; i < shots + queries; ++i) {
            Sample s{memory_bank::residual_map(bank, random_map(rng, 4.0f, static_cast<std::size_t>(k))).as_map(), k};
            (i < shots ? support : query).push_back(std::move(s));
        }

    contrastive::EmbeddingNet<float> net(contrastive::EmbeddingArch{kChannels, {16, 16}, 16}, 1);
    contrastive::ContrastiveConfig cfg;
    cfg.epochs = 20;
    const auto log = contrastive::finetune(net, SampleSource::in_memory(support), shots, cfg);
    std::cout << "fine-tuning: " << log.records.size() << " steps, final loss " << log.records.back().loss << "\n";

    std::vector<const Tensor<float>*> maps;
    std::vector<int> labels;
    for (const auto& s : support) {
        maps.push_back(&s.map);
        labels.push_back(s.label);
    }
    net.calibrate(contrastive::stack_maps<float>(maps));
    std::vector<std::vector<double>> sup;
    for (const auto& s : support) sup.push_back(contrastive::embed(net, s.map));
    int correct = 0;
    for (const auto& q : query) correct += contrastive::classify_embeddings(sup, labels, contrastive::embed(net, q.map)) == q.label;
    std::cout << "query accuracy: " << correct << "/" << query.size() << "\n";
    return 0;
}
