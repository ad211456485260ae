// Copyright Contributors to the crossmpi project
// SPDX-License-Identifier: Apache-2.0

#include "crossmpi/errors.hpp"
#include "crossmpi/imaging.hpp"
#include "crossmpi/model.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace crossmpi {
namespace {

using model::AlphaMaps;
using model::FeatureVolume;
using testing::max_abs_diff;

geometry::PlaneSweepVolume make_psv(torch::Tensor images) {
    return geometry::PlaneSweepVolume{std::move(images), geometry::SweepResolution::HR};
}

// Random weights for a zero-initialized layer so gradients reach the body.
void randomize(torch::nn::Conv2d &conv, double scale = 0.1) {
    torch::NoGradGuard no_grad;
    conv->weight.normal_(0.0, scale);
    conv->bias.normal_(0.0, scale);
}

TEST(ModelConfig, DefaultsValidate) {
    EXPECT_NO_THROW(model::ModelConfig{}.validate());
    EXPECT_NO_THROW(testing::tiny_config().validate());
}

TEST(ModelConfig, ScaleConstraintIsNamed) {
    auto config = testing::tiny_config();
    config.guided_levels = 2;
    try {
        config.validate();
        FAIL() << "expected InvalidArgument";
    } catch (const InvalidArgument &e) {
        EXPECT_NE(std::string(e.what()).find("attention_scale * 2^guided_levels"), std::string::npos);
    }
}

TEST(ModelConfig, RejectsDegenerateValues) {
    auto config = testing::tiny_config();
    config.d = 1;
    EXPECT_THROW(config.validate(), InvalidArgument);
    config = testing::tiny_config();
    config.beta = 3;
    EXPECT_THROW(config.validate(), InvalidArgument);
    config = testing::tiny_config();
    config.far = config.near;
    EXPECT_THROW(config.validate(), InvalidArgument);
}

TEST(SharedFeatureExtractor, DeterministicAndShaped) {
    torch::manual_seed(0);
    model::SharedFeatureExtractor sfe(3, 6);
    const auto x = torch::rand({2, 3, 10, 12});
    const auto a = sfe->forward(x);
    EXPECT_EQ(a.sizes(), (c10::IntArrayRef{2, 6, 10, 12}));
    EXPECT_TRUE(torch::equal(a, sfe->forward(x)));
    EXPECT_THROW(sfe->forward(torch::rand({1, 4, 10, 12})), InvalidArgument);
}

TEST(SharedFeatureExtractor, SlicesShareOneParameterSet) {
    torch::manual_seed(1);
    model::SharedFeatureExtractor sfe(3, 4);
    const auto x = torch::rand({1, 3, 8, 8});
    const auto y = torch::rand({1, 3, 8, 8});

    sfe->forward(x).sum().backward();
    std::vector<torch::Tensor> gx;
    for (const auto &p : sfe->parameters()) {
        gx.push_back(p.grad().clone());
    }
    sfe->zero_grad();
    sfe->forward(y).sum().backward();
    std::vector<torch::Tensor> gy;
    for (const auto &p : sfe->parameters()) {
        gy.push_back(p.grad().clone());
    }
    sfe->zero_grad();
    sfe->forward(torch::cat({x, y}, 0)).sum().backward();
    const auto params = sfe->parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        EXPECT_LE(max_abs_diff(params[i].grad(), gx[i] + gy[i]), 1e-4);
    }
}

TEST(FeatureVolume, IdenticalSlicesGiveIdenticalFeatures) {
    torch::manual_seed(2);
    model::SharedFeatureExtractor sfe(3, 4);
    const auto slice = torch::rand({1, 3, 9, 7});
    const auto fv = model::extract_feature_volume(sfe, make_psv(slice.expand({5, 3, 9, 7}).contiguous()));
    ASSERT_EQ(fv.values.size(0), 5);
    for (int64_t i = 1; i < 5; ++i) {
        EXPECT_TRUE(torch::equal(fv.values[i], fv.values[0]));
    }
    const auto single = model::extract_feature_volume(sfe, make_psv(slice));
    EXPECT_TRUE(torch::equal(single.values, sfe->forward(slice)));
}

TEST(PlaneAwareAttention, EqualFeaturesGiveUniformWeights) {
    const auto f = torch::randn({3, 4, 4}, torch::kDouble);
    const auto plane = torch::randn({1, 3, 4, 4}, torch::kDouble);
    const auto a = model::plane_aware_attention(f, FeatureVolume{plane.expand({6, 3, 4, 4})});
    EXPECT_LE(max_abs_diff(a.weights, torch::full({6, 4, 4}, 1.0 / 6.0, torch::kDouble)), 1e-12);
}

TEST(PlaneAwareAttention, HandComputedSoftmax) {
    const auto f = torch::ones({1, 1, 1}, torch::kDouble);
    const auto fv = torch::tensor({1.0, 0.0, 0.0}, torch::kDouble).reshape({3, 1, 1, 1});
    const auto a = model::plane_aware_attention(f, FeatureVolume{fv}).weights.flatten();
    const double e = std::exp(1.0);
    EXPECT_NEAR(a[0].item<double>(), e / (e + 2.0), 1e-12);
    EXPECT_NEAR(a[1].item<double>(), 1.0 / (e + 2.0), 1e-12);
    EXPECT_NEAR(a[0].item<double>(), 0.5761, 1e-4);
    EXPECT_NEAR(a[2].item<double>(), 0.2119, 1e-4);
}

TEST(PlaneAwareAttention, MatchesPerPixelLoop) {
    torch::manual_seed(3);
    const auto f = torch::randn({4, 8, 8}, torch::kDouble);
    const auto fv = torch::randn({5, 4, 8, 8}, torch::kDouble);
    const auto a = model::plane_aware_attention(f, FeatureVolume{fv});
    EXPECT_LE(max_abs_diff(a.weights, testing::attention_loop_oracle(f, fv)), 1e-6);
}

TEST(PlaneAwareAttention, ScoresScaleWithPlanesNotPixelPairs) {
    torch::manual_seed(4);
    const int64_t n = 12 * 10;
    model::AttentionTrace t4, t8;
    model::plane_aware_attention(torch::randn({3, 12, 10}), FeatureVolume{torch::randn({4, 3, 12, 10})}, &t4);
    model::plane_aware_attention(torch::randn({3, 12, 10}), FeatureVolume{torch::randn({8, 3, 12, 10})}, &t8);
    EXPECT_EQ(t4.score_elements, n * 4);
    EXPECT_EQ(t8.score_elements, 2 * t4.score_elements);
    for (const auto &shape : t8.shapes) {
        int64_t count_n = 0, numel = 1;
        for (auto s : shape) {
            count_n += s == n ? 1 : 0;
            numel *= s;
        }
        EXPECT_LE(count_n, 1);
        EXPECT_LT(numel, n * n);
    }
}

TEST(PlaneAwareAttention, RejectsMismatchedShapes) {
    EXPECT_THROW(model::plane_aware_attention(torch::randn({3, 4, 4}), FeatureVolume{torch::randn({2, 4, 4, 4})}),
                 InvalidArgument);
    EXPECT_THROW(model::plane_aware_attention(torch::randn({3, 4, 4}), FeatureVolume{torch::randn({2, 3, 4, 5})}),
                 InvalidArgument);
}

TEST(PlaneAwareAttention, GradientMatchesFiniteDifferences) {
    torch::manual_seed(5);
    const auto fv = torch::randn({3, 4, 5, 5}, torch::kDouble);
    const auto w = torch::randn({3, 5, 5}, torch::kDouble);
    const auto check = testing::check_gradient(
        [&](const torch::Tensor &f) { return (model::plane_aware_attention(f, FeatureVolume{fv}).weights * w).sum(); },
        torch::randn({4, 5, 5}, torch::kDouble));
    EXPECT_LE(check.relative_error, 1e-6);
}

class GuidedUpsamplerTest : public ::testing::Test {
protected:
    void SetUp() override {
        torch::manual_seed(6);
        config = testing::tiny_config(4, 4, 3, 8); // s_a = 2, L = 2
        module = model::GuidedUpsampler(config);
        module->to(torch::kDouble);
        i_lr_up = torch::rand({3, 32, 32}, torch::kDouble);
        psv = make_psv(torch::rand({3, 3, 32, 32}, torch::kDouble));
        a_init = AlphaMaps{torch::softmax(torch::randn({3, 8, 8}, torch::kDouble), 0)};
    }
    model::ModelConfig config;
    model::GuidedUpsampler module{nullptr};
    torch::Tensor i_lr_up;
    geometry::PlaneSweepVolume psv;
    AlphaMaps a_init;
};

TEST_F(GuidedUpsamplerTest, GuidancePyramidShapes) {
    const auto g = module->guidance(i_lr_up, psv);
    ASSERT_EQ(g.levels.size(), 3u);
    EXPECT_EQ(g.levels[0].sizes(), (c10::IntArrayRef{1, 4, 8, 8}));
    EXPECT_EQ(g.levels[1].sizes(), (c10::IntArrayRef{1, 4, 16, 16}));
    EXPECT_EQ(g.levels[2].sizes(), (c10::IntArrayRef{1, 4, 32, 32}));
}

TEST_F(GuidedUpsamplerTest, OutputIsNormalizedAtHr) {
    const auto a = model::guided_upsample(module, a_init, module->guidance(i_lr_up, psv));
    EXPECT_EQ(a.weights.sizes(), (c10::IntArrayRef{3, 32, 32}));
    EXPECT_EQ(a.scale, model::AlphaScale::SR);
    EXPECT_LE(max_abs_diff(a.weights.sum(0), torch::ones({32, 32}, torch::kDouble)), 1e-5);
    EXPECT_GE(a.weights.min().item<double>(), 0.0);
}

TEST_F(GuidedUpsamplerTest, GuidancePathIsLive) {
    const auto g = module->guidance(i_lr_up, psv);
    const auto a = model::guided_upsample(module, a_init, g).weights;
    model::GuidanceStack zeroed;
    for (const auto &level : g.levels) {
        zeroed.levels.push_back(torch::zeros_like(level));
    }
    EXPECT_GT(max_abs_diff(a, model::guided_upsample(module, a_init, zeroed).weights), 1e-6);

    const auto w = torch::randn({3, 32, 32}, torch::kDouble);
    const auto check = testing::check_gradient(
        [&](const torch::Tensor &img) {
            return (model::guided_upsample(module, a_init, module->guidance(img, psv)).weights * w).sum();
        },
        i_lr_up);
    EXPECT_GT(check.fd_norm, 0.0);
    EXPECT_LE(check.relative_error, 1e-3);
}

TEST_F(GuidedUpsamplerTest, StartsFromUpsampledInitialAlphas) {
    // With the guidance silenced, a fresh module returns softmax(8 * A_init)
    // replicated over each 4x4 HR block.
    const auto g = module->guidance(i_lr_up, psv);
    model::GuidanceStack zeroed;
    for (const auto &level : g.levels) {
        zeroed.levels.push_back(torch::zeros_like(level));
    }
    auto up = a_init.weights;
    for (int i = 0; i < 2; ++i) {
        up = imaging::resize_nearest(up, imaging::ResizeDirection::Up);
    }
    const auto expected = torch::softmax(8.0 * up, 0);
    EXPECT_LE(max_abs_diff(model::guided_upsample(module, a_init, zeroed).weights, expected), 1e-12);
}

TEST_F(GuidedUpsamplerTest, GradientWithRespectToInitialAlphas) {
    const auto g = module->guidance(i_lr_up, psv);
    const auto w = torch::randn({3, 32, 32}, torch::kDouble);
    const auto check = testing::check_gradient(
        [&](const torch::Tensor &a) { return (model::guided_upsample(module, AlphaMaps{a}, g).weights * w).sum(); },
        a_init.weights);
    EXPECT_LE(check.relative_error, 1e-3);
}

TEST_F(GuidedUpsamplerTest, RejectsMismatches) {
    auto g = module->guidance(i_lr_up, psv);
    EXPECT_THROW(model::guided_upsample(module, AlphaMaps{torch::rand({3, 4, 4}, torch::kDouble)}, g),
                 InvalidArgument);
    g.levels.pop_back();
    EXPECT_THROW(model::guided_upsample(module, a_init, g), InvalidArgument);
    EXPECT_THROW(module->guidance(i_lr_up, make_psv(torch::rand({2, 3, 32, 32}, torch::kDouble))), InvalidArgument);
}

TEST(Compose, OneHotSelectsSliceExactly) {
    torch::manual_seed(7);
    const auto psv = make_psv(torch::rand({4, 3, 6, 5}));
    auto alphas = torch::zeros({4, 6, 5});
    alphas[2].fill_(1.0);
    const auto t = model::synthesize_transfer(model::compose_sr_mpi(psv, AlphaMaps{alphas}));
    EXPECT_TRUE(testing::bit_equal(t, psv.images[2]));
}

TEST(Compose, UniformOverEqualPlanes) {
    const auto image = torch::rand({3, 5, 5}, torch::kDouble);
    const auto psv = make_psv(image.unsqueeze(0).expand({4, 3, 5, 5}).contiguous());
    const auto t = model::synthesize_transfer(
        model::compose_sr_mpi(psv, AlphaMaps{torch::full({4, 5, 5}, 0.25, torch::kDouble)}));
    EXPECT_LE(max_abs_diff(t, image), 1e-12);
}

TEST(Compose, HandComputedWeightedSum) {
    const auto psv = make_psv(torch::stack({torch::zeros({1, 1, 1}), torch::ones({1, 1, 1})}));
    const auto alphas = torch::tensor({0.25f, 0.75f}).reshape({2, 1, 1});
    const auto t = model::synthesize_transfer(model::compose_sr_mpi(psv, AlphaMaps{alphas}));
    EXPECT_FLOAT_EQ(t.item<float>(), 0.75f);
}

TEST(Compose, RejectsMismatch) {
    EXPECT_THROW(model::compose_sr_mpi(make_psv(torch::rand({3, 3, 4, 4})), AlphaMaps{torch::rand({2, 4, 4})}),
                 InvalidArgument);
}

TEST(FuseNet, ZeroTailIsGlobalResidual) {
    torch::manual_seed(8);
    model::FuseNet fuse(3, 4, 2);
    const auto t = torch::rand({3, 8, 8});
    const auto up = torch::rand({3, 8, 8});
    EXPECT_TRUE(torch::equal(fuse->forward(t, up), up));
    EXPECT_THROW(fuse->forward(t, torch::rand({3, 8, 7})), InvalidArgument);
}

TEST(FuseNet, GradientMatchesFiniteDifferences) {
    torch::manual_seed(9);
    model::FuseNet fuse(3, 4, 1);
    randomize(fuse->tail());
    fuse->to(torch::kDouble);
    const auto up = torch::rand({3, 6, 6}, torch::kDouble);
    const auto w = torch::randn({3, 6, 6}, torch::kDouble);
    const auto check = testing::check_gradient(
        [&](const torch::Tensor &t) { return (fuse->forward(t, up) * w).sum(); },
        torch::rand({3, 6, 6}, torch::kDouble));
    EXPECT_GT(check.fd_norm, 0.0);
    EXPECT_LE(check.relative_error, 1e-3);
}

TEST(Depth, OneHotGivesPlaneDepth) {
    const auto planes = geometry::sample_depth_planes(1.0, 8.0, 4);
    auto alphas = torch::zeros({4, 3, 3});
    alphas[1].fill_(1.0);
    const auto depth = model::extract_depth(AlphaMaps{alphas}, planes);
    EXPECT_EQ(depth.sizes(), (c10::IntArrayRef{1, 3, 3}));
    EXPECT_TRUE(torch::equal(depth, torch::full({1, 3, 3}, planes.depths[1], torch::kDouble)));
}

TEST(Depth, TiesPreferTheNearestPlane) {
    const auto planes = geometry::sample_depth_planes(1.0, 8.0, 4);
    const auto alphas = torch::tensor({0.4, 0.1, 0.1, 0.4}).reshape({4, 1, 1});
    EXPECT_EQ(model::extract_depth(AlphaMaps{alphas}, planes).item<double>(), planes.depths[0]);
}

TEST(Depth, ArgmaxPlane) {
    const auto planes = geometry::sample_depth_planes(1.0, 8.0, 3);
    const auto alphas = torch::tensor({0.2, 0.5, 0.3}).reshape({3, 1, 1});
    EXPECT_EQ(model::extract_depth(AlphaMaps{alphas}, planes).item<double>(), planes.depths[1]);
    EXPECT_THROW(model::extract_depth(AlphaMaps{alphas}, geometry::sample_depth_planes(1.0, 8.0, 4)),
                 InvalidArgument);
}

TEST(CrossMpiNet, ForwardShapesAndNormalization) {
    torch::manual_seed(10);
    const auto config = testing::tiny_config();
    model::CrossMpiNet net(config);
    net->to(torch::kDouble);
    const auto tuple = testing::random_tuple(config, 0.05, 1);
    const auto out = net->forward(tuple);
    EXPECT_EQ(out.alphas_init.weights.sizes(), (c10::IntArrayRef{3, 16, 16}));
    EXPECT_EQ(out.alphas.weights.sizes(), (c10::IntArrayRef{3, 32, 32}));
    EXPECT_EQ(out.t_ref.sizes(), (c10::IntArrayRef{3, 32, 32}));
    EXPECT_EQ(out.i_sr.sizes(), (c10::IntArrayRef{3, 32, 32}));
    EXPECT_EQ(out.depth.sizes(), (c10::IntArrayRef{1, 32, 32}));
    EXPECT_LE(max_abs_diff(out.alphas_init.weights.sum(0), torch::ones({16, 16})), 1e-5);
    EXPECT_LE(max_abs_diff(out.alphas.weights.sum(0), torch::ones({32, 32})), 1e-5);
    // FuseNet starts as the identity on the bicubic input.
    EXPECT_TRUE(torch::equal(out.i_sr, imaging::resample_bicubic(tuple.lr, {4, 1})));
}

TEST(CrossMpiNet, AttentionStageStopsEarly) {
    const auto config = testing::tiny_config();
    model::CrossMpiNet net(config);
    const auto out = net->forward(testing::random_tuple(config, 0.05, 2, torch::kFloat),
                                  model::ForwardStage::Attention);
    EXPECT_TRUE(out.alphas_init.weights.defined());
    EXPECT_FALSE(out.alphas.weights.defined());
    EXPECT_FALSE(out.i_sr.defined());
}

TEST(CrossMpiNet, RejectsWrongSizes) {
    const auto config = testing::tiny_config();
    model::CrossMpiNet net(config);
    auto tuple = testing::random_tuple(config, 0.05, 3, torch::kFloat);
    tuple.lr = torch::rand({3, 8, 9});
    try {
        net->forward(tuple);
        FAIL() << "expected InvalidArgument";
    } catch (const InvalidArgument &e) {
        EXPECT_NE(std::string(e.what()).find("I_LR must be 3x8x8"), std::string::npos);
    }
}

TEST(CrossMpiNet, ZeroBaselineUnitScaleTransfersReference) {
    torch::manual_seed(11);
    auto config = testing::tiny_config(12, 12, 4, 1);
    config.attention_scale = 1;
    config.guided_levels = 0;
    model::CrossMpiNet net(config);
    net->to(torch::kDouble);
    auto tuple = testing::random_tuple(config, 0.0, 4);
    tuple.lr = tuple.gt.clone();
    const auto out = net->forward(tuple);
    EXPECT_LE(max_abs_diff(out.t_ref, tuple.ref), 1e-12);
}

TEST(CrossMpiNet, EndToEndGradientMatchesFiniteDifferences) {
    torch::manual_seed(12);
    const auto config = testing::tiny_config();
    model::CrossMpiNet net(config);
    randomize(net->fuse->tail());
    net->to(torch::kDouble);
    const auto tuple = testing::random_tuple(config, 0.05, 5);
    const auto w = torch::randn({3, 32, 32}, torch::kDouble);
    const auto check_lr = testing::check_gradient(
        [&](const torch::Tensor &lr) {
            auto t = tuple;
            t.lr = lr;
            return (net->forward(t).i_sr * w).sum();
        },
        tuple.lr, 32);
    EXPECT_GT(check_lr.fd_norm, 0.0);
    EXPECT_LE(check_lr.relative_error, 1e-3);
    const auto check_ref = testing::check_gradient(
        [&](const torch::Tensor &ref) {
            auto t = tuple;
            t.ref = ref;
            return (net->forward(t).i_sr * w).sum();
        },
        tuple.ref, 32);
    EXPECT_GT(check_ref.fd_norm, 0.0);
    EXPECT_LE(check_ref.relative_error, 1e-3);
}

} // namespace
} // namespace crossmpi
