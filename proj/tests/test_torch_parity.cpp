// Compares the C++ backbone against torchvision on the same random network.
// The fixture files are produced by tools/export_resnet50.py (see CMake).

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>

#include "anoclass/backbone/resnet.hpp"

using namespace anoclass;

namespace {

double max_rel_diff(const Tensor<float>& a, const Tensor<float>& b) {
    double scale = 0, worst = 0;
    for (std::size_t i = 0; i < b.size(); ++i) scale = std::max(scale, std::abs(double(b[i])));
    for (std::size_t i = 0; i < b.size(); ++i) worst = std::max(worst, std::abs(double(a[i]) - b[i]));
    return worst / std::max(scale, 1e-12);
}

const char* fixture_dir() {
    const char* d = std::getenv("ANOCLASS_PARITY_DIR");
    return d ? d : ".";
}

}  // namespace

TEST(TorchParity, Layer2Layer3AndPooledLayer4MatchTorchvision) {
    const std::string dir = fixture_dir();
    const auto net = backbone::Backbone::load(dir + "/parity_weights.anot");
    const auto ref = nn::load_tensors(dir + "/parity_reference.anot");
    const auto& input = ref.at("input");

    const auto [f2, f3] = net.extract(input);
    ASSERT_EQ(f2.tensor.shape(), ref.at("layer2").shape());
    ASSERT_EQ(f3.tensor.shape(), ref.at("layer3").shape());
    EXPECT_LT(max_rel_diff(f2.tensor, ref.at("layer2")), 1e-4);
    EXPECT_LT(max_rel_diff(f3.tensor, ref.at("layer3")), 1e-4);

    const auto pooled = net.pooled_layer4(input);
    const Tensor<float> pooled_t({pooled.size()}, pooled);
    EXPECT_LT(max_rel_diff(pooled_t, ref.at("pooled_layer4")), 1e-4);
}
