// Copyright Contributors to the crossmpi project
// SPDX-License-Identifier: Apache-2.0

#include "crossmpi/errors.hpp"
#include "crossmpi/imaging.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace crossmpi {
namespace {

using imaging::ResizeDirection;
using testing::max_abs_diff;

// Closed-form SSIM of two constant images: the variance terms vanish.
double constant_ssim(double a, double b) {
    const double c1 = 0.01 * 0.01;
    return (2.0 * a * b + c1) / (a * a + b * b + c1);
}

TEST(Bicubic, UnitFactorIsIdentity) {
    torch::manual_seed(0);
    const auto image = torch::rand({3, 13, 9});
    EXPECT_TRUE(torch::equal(imaging::resample_bicubic(image, {1, 1}), image));
    EXPECT_TRUE(torch::equal(imaging::resample_bicubic(image, {3, 3}), image));
}

TEST(Bicubic, ConstantsAreFixedPoints) {
    const auto image = torch::full({3, 64, 48}, 0.3, torch::kDouble);
    const auto down = imaging::resample_bicubic(image, {1, 8});
    ASSERT_EQ(down.sizes(), (c10::IntArrayRef{3, 8, 6}));
    EXPECT_LE(max_abs_diff(down, torch::full_like(down, 0.3)), 1e-12);
    const auto up = imaging::resample_bicubic(down, {8, 1});
    EXPECT_LE(max_abs_diff(up, image), 1e-12);
}

TEST(Bicubic, HalvingReproducesLinearRampInterior) {
    const int64_t w = 64;
    const auto ramp = (torch::arange(w, torch::kDouble) / static_cast<double>(w - 1))
                          .expand({1, 8, w})
                          .contiguous();
    const auto half = imaging::resample_bicubic(ramp, {1, 2});
    ASSERT_EQ(half.size(2), w / 2);
    // Output pixel j averages input around 2j + 0.5.
    const auto expected =
        ((torch::arange(w / 2, torch::kDouble) * 2.0 + 0.5) / static_cast<double>(w - 1)).expand({1, 4, w / 2});
    EXPECT_LE(max_abs_diff(half.slice(1, 0, 4).slice(2, 2, w / 2 - 2),
                           expected.slice(2, 2, w / 2 - 2)),
              1e-3);
}

TEST(Bicubic, DifferentiableWithRespectToInput) {
    torch::manual_seed(5);
    const auto weights = torch::rand({3, 16, 16}, torch::kDouble);
    const auto check = testing::check_gradient(
        [&](const torch::Tensor &x) { return (imaging::resample_bicubic(x, {4, 1}) * weights).sum(); },
        0.25 + 0.5 * torch::rand({3, 4, 4}, torch::kDouble));
    EXPECT_LE(check.relative_error, 1e-6);
}

TEST(Bicubic, RejectsBadFactors) {
    const auto image = torch::zeros({3, 4, 4});
    EXPECT_THROW(imaging::resample_bicubic(image, {0, 1}), InvalidArgument);
    EXPECT_THROW(imaging::resample_bicubic(image, {1, 16}), InvalidArgument);
    EXPECT_THROW(imaging::resample_bicubic(torch::zeros({4, 4}), {1, 2}), InvalidArgument);
}

TEST(Nearest, UpReplicates) {
    const auto up = imaging::resize_nearest(torch::full({1, 1}, 7.0), ResizeDirection::Up);
    EXPECT_TRUE(torch::equal(up, torch::full({2, 2}, 7.0)));
}

TEST(Nearest, DownTakesTopLeft) {
    const auto map = torch::tensor({1.0, 2.0, 3.0, 4.0}).reshape({2, 2});
    const auto down = imaging::resize_nearest(map, ResizeDirection::Down);
    ASSERT_EQ(down.numel(), 1);
    EXPECT_EQ(down.item<double>(), 1.0);
}

TEST(Nearest, UpThenDownRoundTrips) {
    torch::manual_seed(1);
    const auto map = torch::rand({4, 5, 7});
    EXPECT_TRUE(torch::equal(
        imaging::resize_nearest(imaging::resize_nearest(map, ResizeDirection::Up), ResizeDirection::Down),
        map));
}

TEST(Nearest, OddSizeRejectedOnDown) {
    EXPECT_THROW(imaging::resize_nearest(torch::zeros({3, 4}), ResizeDirection::Down), InvalidArgument);
}

TEST(Psnr, IdenticalIsInfinite) {
    const auto x = torch::rand({3, 8, 8});
    EXPECT_TRUE(std::isinf(imaging::psnr(x, x)));
    EXPECT_GT(imaging::psnr(x, x), 0.0);
}

TEST(Psnr, UniformDifferenceOfTenthIsTwentyDb) {
    const auto a = torch::full({3, 16, 16}, 0.4, torch::kDouble);
    EXPECT_NEAR(imaging::psnr(a, a + 0.1), 20.0, 1e-9);
}

TEST(Psnr, MaximalErrorIsZeroDb) {
    const auto a = torch::zeros({3, 4, 4});
    EXPECT_NEAR(imaging::psnr(a, torch::ones_like(a)), 0.0, 1e-12);
}

TEST(Psnr, SymmetricAndShapeChecked) {
    torch::manual_seed(2);
    const auto a = torch::rand({3, 9, 9});
    const auto b = torch::rand({3, 9, 9});
    EXPECT_EQ(imaging::psnr(a, b), imaging::psnr(b, a));
    EXPECT_THROW(imaging::psnr(a, torch::rand({3, 9, 8})), InvalidArgument);
}

TEST(Ssim, SelfSimilarityIsOne) {
    torch::manual_seed(3);
    const auto x = torch::rand({3, 24, 24});
    EXPECT_NEAR(imaging::ssim(x, x), 1.0, 1e-12);
}

TEST(Ssim, AntiCorrelatedBinaryTextureIsNegative) {
    torch::manual_seed(4);
    const auto x = (torch::rand({3, 32, 32}) > 0.5).to(torch::kDouble);
    EXPECT_LT(imaging::ssim(x, 1.0 - x), 0.0);
}

TEST(Ssim, ConstantOffsetMatchesClosedForm) {
    const auto a = torch::full({3, 16, 16}, 0.5, torch::kDouble);
    const double value = imaging::ssim(a, a + 0.1);
    EXPECT_NEAR(value, constant_ssim(0.5, 0.6), 1e-9);
    EXPECT_NEAR(value, 0.9843, 1e-3);
}

TEST(Ssim, SymmetricAndBelowOneForDistinctImages) {
    torch::manual_seed(6);
    const auto a = torch::rand({3, 20, 20}, torch::kDouble);
    const auto b = (a + 0.05 * torch::randn_like(a)).clamp(0.0, 1.0);
    EXPECT_NEAR(imaging::ssim(a, b), imaging::ssim(b, a), 1e-12);
    EXPECT_LT(imaging::ssim(a, b), 1.0 - 1e-9);
}

TEST(Ssim, RejectsSmallImages) {
    EXPECT_THROW(imaging::ssim(torch::zeros({3, 10, 10}), torch::zeros({3, 10, 10})), InvalidArgument);
}

} // namespace
} // namespace crossmpi
