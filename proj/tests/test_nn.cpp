#include <gtest/gtest.h>

#include "anoclass/nn/adam.hpp"
#include "anoclass/nn/layers.hpp"
#include "anoclass/nn/tensor_file.hpp"
#include "test_util.hpp"

using namespace anoclass;
using anoclass::testing::max_param_grad_error;
using anoclass::testing::random_tensor;
using anoclass::testing::relative_error;

namespace {

// Scalar probe: sum(y * weights) so every output element carries a distinct gradient.
double probe(const Tensor<double>& y, const Tensor<double>& w) {
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
    return s;
}

template <typename Layer>
double max_input_grad_error(Layer& layer, Tensor<double> x, const Tensor<double>& w) {
    auto y = layer.forward(x, true);
    auto dx = layer.backward(w);
    double worst = 0;
    const double h = 1e-5;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double up = probe(layer.forward(x, true), w);
        x[i] = orig - h;
        const double down = probe(layer.forward(x, true), w);
        x[i] = orig;
        worst = std::max(worst, relative_error(dx[i], (up - down) / (2 * h)));
    }
    return worst;
}

}  // namespace

TEST(Conv2d, KnownValueWithPadding) {
    nn::Conv2d<double> conv(1, 1, 3, 1, 1, false);
    conv.weight().fill(1.0);
    Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
    auto y = conv.forward(x, false);
    // Every output sees the full 2x2 input through the zero-padded 3x3 window.
    for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(y[i], 10.0);
}

TEST(Conv2d, StridedOutputShape) {
    nn::Conv2d<float> conv(3, 8, 7, 2, 3);
    Tensor<float> x({1, 3, 224, 224});
    EXPECT_EQ(conv.infer(x).shape(), (Shape{1, 8, 112, 112}));
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
    for (auto [k, stride, pad] : {std::tuple{3, 1, 1}, std::tuple{3, 2, 1}, std::tuple{1, 1, 0}}) {
        nn::Conv2d<double> conv(2, 3, k, stride, pad);
        Rng rng = make_rng(3);
        conv.init(rng);
        auto x = random_tensor({2, 2, 5, 5}, 11);
        auto y = conv.forward(x, true);
        auto w = random_tensor(y.shape(), 12);
        EXPECT_LT(max_input_grad_error(conv, x, w), 1e-6);

        nn::ParamList<double> params;
        conv.collect(params, "conv");
        nn::zero_grads(params);
        conv.forward(x, true);
        conv.backward(w);
        EXPECT_LT(max_param_grad_error(params, [&] { return probe(conv.forward(x, false), w); }), 1e-6);
    }
}

TEST(BatchNorm2d, TrainGradientsMatchFiniteDifferences) {
    nn::BatchNorm2d<double> bn(3);
    bn.gamma() = random_tensor({3}, 4);
    auto x = random_tensor({4, 3, 2, 2}, 5);
    auto w = random_tensor({4, 3, 2, 2}, 6);
    EXPECT_LT(max_input_grad_error(bn, x, w), 1e-6);

    nn::ParamList<double> params;
    bn.collect(params, "bn");
    nn::zero_grads(params);
    bn.forward(x, true);
    bn.backward(w);
    EXPECT_LT(max_param_grad_error(params, [&] { return probe(bn.forward(x, true), w); }), 1e-6);
}

TEST(BatchNorm2d, TrainOutputIsStandardizedAndRunningStatsMove) {
    nn::BatchNorm2d<double> bn(1);
    Tensor<double> x({4, 1, 1, 1}, {1, 2, 3, 4});
    auto y = bn.forward(x, true);
    double mean = 0;
    for (auto v : y.storage()) mean += v;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(bn.running_mean()[0], 0.25, 1e-12);
    // unbiased variance of {1,2,3,4} is 5/3
    EXPECT_NEAR(bn.running_var()[0], 0.9 + 0.1 * 5.0 / 3.0, 1e-12);
}

TEST(MaxPool2d, RoutesGradientToArgmax) {
    nn::MaxPool2d<double> pool(2, 2);
    Tensor<double> x({1, 1, 2, 2}, {1, 5, 3, 2});
    auto y = pool.forward(x, true);
    ASSERT_EQ(y.size(), 1u);
    EXPECT_EQ(y[0], 5);
    auto dx = pool.backward(Tensor<double>({1, 1, 1, 1}, {2.0}));
    EXPECT_EQ(dx.storage(), (std::vector<double>{0, 2, 0, 0}));
}

TEST(MaxPool2d, SingleCellInputKeepsOneCell) {
    nn::MaxPool2d<float> pool(2, 2);
    Tensor<float> x({1, 2, 1, 1}, {3, -1});
    EXPECT_EQ(pool.infer(x).shape(), (Shape{1, 2, 1, 1}));
    EXPECT_EQ(pool.out_size(7), 3u);
}

TEST(Linear, GradientsMatchFiniteDifferences) {
    nn::Linear<double> fc(4, 3);
    Rng rng = make_rng(1);
    fc.init(rng);
    auto x = random_tensor({5, 4}, 2);
    auto w = random_tensor({5, 3}, 3);
    EXPECT_LT(max_input_grad_error(fc, x, w), 1e-7);
}

TEST(L2Normalize, UnitRowsAndGradient) {
    nn::L2Normalize<double> norm;
    auto x = random_tensor({3, 6}, 7);
    auto y = norm.forward(x, false);
    for (std::size_t r = 0; r < 3; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < 6; ++c) s += y.at(r, c) * y.at(r, c);
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
    EXPECT_LT(max_input_grad_error(norm, x, random_tensor({3, 6}, 8)), 1e-6);
}

TEST(Sigmoid, GradientMatchesFiniteDifferences) {
    nn::Sigmoid<double> sig;
    EXPECT_LT(max_input_grad_error(sig, random_tensor({2, 3}, 9), random_tensor({2, 3}, 10)), 1e-7);
}

TEST(ConvBlock, GradientsMatchFiniteDifferences) {
    nn::ConvBlock<double> block(2, 3);
    Rng rng = make_rng(5);
    block.init(rng);
    auto x = random_tensor({3, 2, 4, 4}, 13);
    auto y = block.forward(x, true);
    auto w = random_tensor(y.shape(), 14);
    nn::ParamList<double> params;
    block.collect(params, "b");
    nn::zero_grads(params);
    block.forward(x, true);
    block.backward(w);
    EXPECT_LT(max_param_grad_error(params, [&] { return probe(block.forward(x, true), w); }), 1e-5);
}

TEST(Adam, FirstStepMovesEachWeightByLearningRate) {
    Tensor<double> v({2}, {1.0, -1.0}), g({2}, {0.5, -3.0});
    nn::Adam<double> opt({{"v", &v, &g}}, {.lr = 0.01});
    opt.step();
    // With bias correction the first update is lr * sign(g).
    EXPECT_NEAR(v[0], 0.99, 1e-9);
    EXPECT_NEAR(v[1], -0.99, 1e-9);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
    Tensor<double> v({3}, {1, 2, 3}), g({3});
    nn::Adam<double> opt({{"v", &v, &g}});
    opt.step();
    EXPECT_EQ(v.storage(), (std::vector<double>{1, 2, 3}));
}

TEST(TensorFile, RoundTripPreservesNamesShapesAndBits) {
    anoclass::testing::TempDir dir("tf");
    nn::TensorMap m;
    m.emplace("a.weight", anoclass::testing::random_tensor_f({2, 3, 1, 1}, 1));
    m.emplace("b", Tensor<float>({1}, {-0.0f}));
    nn::save_tensors(dir / "x.bin", m);
    auto back = nn::load_tensors(dir / "x.bin");
    EXPECT_EQ(back, m);
}

TEST(TensorFile, MissingAndCorruptFilesRaiseLoadError) {
    anoclass::testing::TempDir dir("tf");
    EXPECT_THROW(nn::load_tensors(dir / "nope.bin"), LoadError);
    std::ofstream(dir / "bad.bin") << "ANOTgarbage";
    EXPECT_THROW(nn::load_tensors(dir / "bad.bin"), LoadError);
}
