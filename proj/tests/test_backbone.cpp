#include <gtest/gtest.h>

#include "somdepth/backbone.hpp"
#include "test_util.hpp"

using namespace somdepth;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

EncoderConfig tiny_config() {
    EncoderConfig cfg;
    cfg.stage_channels = {2, 2, 2, 2};
    cfg.convs_per_stage = 2;
    return cfg;
}

}  // namespace

TEST(EncoderConfig, Validation) {
    EncoderConfig bad;
    bad.stage_channels = {16, 8, 32, 64};
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    bad = EncoderConfig();
    bad.convs_per_stage = 0;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    EXPECT_NO_THROW(EncoderConfig().validate());
}

TEST(DenseEncoder, DefaultPyramidShapes) {
    Rng rng(1);
    DenseEncoder enc(3, EncoderConfig(), rng);
    Rng drng(2);
    Tensor img = random_tensor(Shape(1, 3, 64, 64), drng);
    PyramidFeatures f = enc.encode(img);
    EXPECT_EQ(f.f1.shape(), Shape(1, 16, 16, 16));
    EXPECT_EQ(f.f2.shape(), Shape(1, 32, 8, 8));
    EXPECT_EQ(f.f3.shape(), Shape(1, 64, 4, 4));
    EXPECT_EQ(f.f4.shape(), Shape(1, 128, 2, 2));
}

TEST(DenseEncoder, DepthInputShapes) {
    Rng rng(1);
    DenseEncoder enc(1, EncoderConfig(), rng);
    Rng drng(2);
    Tensor depth = random_tensor(Shape(1, 1, 32, 32), drng);
    PyramidFeatures f = enc.encode(depth);
    EXPECT_EQ(f.f1.shape(), Shape(1, 16, 8, 8));
    EXPECT_EQ(f.f2.shape(), Shape(1, 32, 4, 4));
    EXPECT_EQ(f.f3.shape(), Shape(1, 64, 2, 2));
    EXPECT_EQ(f.f4.shape(), Shape(1, 128, 1, 1));
}

TEST(DenseEncoder, DifferentSeedsDiffer) {
    Rng r1(10), r2(11);
    DenseEncoder a(3, tiny_config(), r1);
    DenseEncoder b(3, tiny_config(), r2);
    Rng drng(3);
    Tensor img = random_tensor(Shape(1, 3, 32, 32), drng);
    EXPECT_GT(max_abs_diff(a.encode(img).f1, b.encode(img).f1), 1e-6);
}

TEST(DenseEncoder, IdenticalSeedsBitwiseEqual) {
    Rng r1(10), r2(10);
    DenseEncoder a(3, tiny_config(), r1);
    DenseEncoder b(3, tiny_config(), r2);
    Rng drng(3);
    Tensor img = random_tensor(Shape(1, 3, 32, 32), drng);
    EXPECT_EQ(max_abs_diff(a.encode(img).f4, b.encode(img).f4), 0.0);
}

TEST(DenseEncoder, PyramidShapeLawAcrossSizes) {
    Rng rng(5);
    DenseEncoder enc(3, tiny_config(), rng);
    for (int hw : {32, 64, 96, 128}) {
        Rng drng(hw);
        Tensor img = random_tensor(Shape(1, 3, hw, hw), drng);
        PyramidFeatures f = enc.encode(img);
        EXPECT_EQ(f.f1.shape().height(), hw / 4);
        EXPECT_EQ(f.f2.shape().height(), hw / 8);
        EXPECT_EQ(f.f3.shape().height(), hw / 16);
        EXPECT_EQ(f.f4.shape().height(), hw / 32);
    }
}

TEST(DenseEncoder, RejectsIndivisibleInput) {
    Rng rng(5);
    DenseEncoder enc(3, tiny_config(), rng);
    EXPECT_THROW(enc.encode(Tensor::zeros(Shape(1, 3, 48, 64))), std::invalid_argument);
    EXPECT_THROW(enc.encode(Tensor::zeros(Shape(1, 3, 64, 40))), std::invalid_argument);
}

TEST(DenseEncoder, StageOneAndTwoFeatureShapesAgree) {
    // the depth encoder (1 channel) and image encoder (3 channels) must emit
    // identically shaped pyramids for the latent alignment loss
    Rng r1(7), r2(8);
    DenseEncoder e_d(1, tiny_config(), r1);
    DenseEncoder e_i(3, tiny_config(), r2);
    Rng drng(9);
    Tensor depth = random_tensor(Shape(2, 1, 64, 64), drng);
    Tensor img = random_tensor(Shape(2, 3, 64, 64), drng);
    PyramidFeatures fd = e_d.encode(depth);
    PyramidFeatures fi = e_i.encode(img);
    for (int l = 0; l < 4; ++l) EXPECT_EQ(fd.level(l).shape(), fi.level(l).shape());
}

TEST(FpnDecoder, QuarterResolutionOutput) {
    Rng rng(13);
    DenseEncoder enc(3, EncoderConfig(), rng);
    FpnDecoder dec(EncoderConfig().stage_channels, 16, rng);
    Rng drng(14);
    Tensor img = random_tensor(Shape(1, 3, 64, 64), drng);
    Tensor out = dec.decode(enc.encode(img));
    EXPECT_EQ(out.shape(), Shape(1, 1, 16, 16));
}

TEST(FpnDecoder, ZeroFeaturesGiveHeadBias) {
    Rng rng(15);
    FpnDecoder dec({2, 2, 2, 2}, 2, rng);
    NamedParams params = dec.params("dec");
    for (auto& [name, t] : params) std::fill(t.values().begin(), t.values().end(), 0.0);
    const double b = 0.37;
    dec.head2().bias.values()[0] = b;
    PyramidFeatures f;
    f.f1 = Tensor::zeros(Shape(1, 2, 8, 8));
    f.f2 = Tensor::zeros(Shape(1, 2, 4, 4));
    f.f3 = Tensor::zeros(Shape(1, 2, 2, 2));
    f.f4 = Tensor::zeros(Shape(1, 2, 1, 1));
    Tensor out = dec.decode(f);
    for (double v : out.values()) EXPECT_DOUBLE_EQ(v, b);
    Tensor depth = predict_depth(out);
    for (double v : depth.values()) EXPECT_DOUBLE_EQ(v, std::exp(b));
}

TEST(FpnDecoder, FullBackboneGradientsMatchFiniteDifferences) {
    Rng rng(17);
    DenseEncoder enc(3, tiny_config(), rng);
    FpnDecoder dec({2, 2, 2, 2}, 2, rng);
    Rng drng(18);
    Tensor img = random_tensor(Shape(1, 3, 32, 32), drng);
    const auto build = [&]() {
        Tensor logd = dec.decode(enc.encode(img));
        return mean_all(hadamard(logd, logd));
    };
    NamedParams params;
    enc.collect(params, "enc");
    dec.collect(params, "dec");
    ASSERT_GT(params.size(), 10u);
    {
        ComputeGraph g;
        g.backward(build());
    }
    const auto forward = [&](const Tensor&) { return build().value(); };
    for (auto& [name, t] : params) {
        Tensor fd = finite_difference_grad(forward, t);
        EXPECT_LT(testutil::max_rel_error(t.grad(), fd.values()), 1e-5) << name;
    }
}

TEST(PureDecoder, ShapeAndDeterminism) {
    Rng rng(21);
    DenseEncoder enc(3, tiny_config(), rng);
    PureDecoder dec({2, 2, 2, 2}, 2, rng);
    Rng drng(22);
    Tensor img = random_tensor(Shape(1, 3, 64, 64), drng);
    Tensor out1 = dec.decode(enc.encode(img).f4);
    Tensor out2 = dec.decode(enc.encode(img).f4);
    EXPECT_EQ(out1.shape(), Shape(1, 1, 16, 16));
    EXPECT_EQ(max_abs_diff(out1, out2), 0.0);
}

TEST(PureDecoder, GradientsMatchFiniteDifferences) {
    Rng rng(23);
    PureDecoder dec({2, 2, 2, 2}, 2, rng);
    Rng drng(24);
    Tensor deepest = random_tensor(Shape(1, 2, 2, 2), drng, -1, 1, true);
    const auto build = [&]() {
        Tensor logd = dec.decode(deepest);
        return mean_all(hadamard(logd, logd));
    };
    NamedParams params;
    dec.collect(params, "dec");
    params.emplace_back("input", deepest);
    {
        ComputeGraph g;
        g.backward(build());
    }
    const auto forward = [&](const Tensor&) { return build().value(); };
    for (auto& [name, t] : params) {
        Tensor fd = finite_difference_grad(forward, t);
        EXPECT_LT(testutil::max_rel_error(t.grad(), fd.values()), 1e-5) << name;
    }
}

TEST(PredictDepth, ClosedFormsAndPositivity) {
    Tensor zero = Tensor::zeros(Shape(1, 1, 2, 2));
    Tensor d0 = predict_depth(zero);
    for (double v : d0.values()) EXPECT_DOUBLE_EQ(v, 1.0);

    Tensor ln10 = Tensor::full(Shape(1, 1, 1, 1), std::log(10.0));
    EXPECT_NEAR(predict_depth(ln10).value(), 10.0, 1e-12);

    Rng rng(25);
    Tensor x = random_tensor(Shape(1, 1, 3, 3), rng, -30, 3);
    Tensor d = predict_depth(x);
    for (double v : d.values()) EXPECT_GT(v, 0.0);
}

TEST(PredictDepth, GradientMatchesFiniteDifferences) {
    Rng rng(27);
    Tensor x = random_tensor(Shape(1, 1, 2, 2), rng, -1, 1, true);
    {
        ComputeGraph g;
        g.backward(sum_all(predict_depth(x)));
    }
    Tensor fd = finite_difference_grad(
        [](const Tensor& t) { return sum_all(predict_depth(t)).value(); }, x);
    EXPECT_LT(testutil::max_rel_error(x.grad(), fd.values(), 1e-6), 1e-7);
}
