// Copyright Contributors to the crossmpi project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/types.h>

#include <cstdint>

// Images throughout the project are [c, H, W] tensors with values in [0, 1],
// channels in RGB order.
namespace crossmpi::imaging {

struct ScaleFactor {
    int64_t numerator = 1;
    int64_t denominator = 1;

    double value() const { return static_cast<double>(numerator) / static_cast<double>(denominator); }
};

enum class ResizeDirection { Up, Down };

// Separable cubic convolution (a = -0.5) with the kernel widened by 1/factor
// when shrinking. Output size is round(size * factor) per axis; result is
// clamped to [0, 1]. Differentiable (applied as two dense matrix products).
torch::Tensor resample_bicubic(const torch::Tensor &image, ScaleFactor factor);

// Same kernel, explicit output size (per-axis factors may differ).
torch::Tensor resample_bicubic_to(const torch::Tensor &image, int64_t out_height,
                                  int64_t out_width);

// Exact 2x nearest-neighbour resize of the last two dims: pixel replication
// going up, top-left subsampling going down.
torch::Tensor resize_nearest(const torch::Tensor &map, ResizeDirection direction);

// 10 log10(1 / MSE) over all elements; +infinity when the inputs are equal.
double psnr(const torch::Tensor &a, const torch::Tensor &b);

// Mean SSIM, 11x11 Gaussian window (sigma 1.5), valid-region filtering,
// C1 = 0.01^2 and C2 = 0.03^2, averaged over channels.
double ssim(const torch::Tensor &a, const torch::Tensor &b);

} // namespace crossmpi::imaging
