// Copyright Contributors to the crossmpi project
// SPDX-License-Identifier: Apache-2.0

#include "crossmpi/imaging.hpp"

#include "crossmpi/errors.hpp"

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace crossmpi::imaging {

namespace {

constexpr double kCubicA = -0.5;

double cubic_kernel(double x) {
    x = std::abs(x);
    if (x <= 1.0) {
        return ((kCubicA + 2.0) * x - (kCubicA + 3.0)) * x * x + 1.0;
    }
    if (x < 2.0) {
        return ((kCubicA * x - 5.0 * kCubicA) * x + 8.0 * kCubicA) * x - 4.0 * kCubicA;
    }
    return 0.0;
}

// Row-stochastic [out, in] matrix; out-of-range taps fold onto the edge pixel.
torch::Tensor resampling_matrix(int64_t in, int64_t out) {
    auto m = torch::zeros({out, in}, torch::kDouble);
    auto acc = m.accessor<double, 2>();
    const double scale = static_cast<double>(out) / static_cast<double>(in);
    const double shrink = std::min(scale, 1.0);
    const double support = 2.0 / shrink;
    for (int64_t j = 0; j < out; ++j) {
        const double center = (static_cast<double>(j) + 0.5) / scale - 0.5;
        const auto first = static_cast<int64_t>(std::ceil(center - support));
        const auto last = static_cast<int64_t>(std::floor(center + support));
        double total = 0.0;
        for (int64_t i = first; i <= last; ++i) {
            const double w = cubic_kernel((static_cast<double>(i) - center) * shrink);
            if (w == 0.0) {
                continue;
            }
            acc[j][std::clamp<int64_t>(i, 0, in - 1)] += w;
            total += w;
        }
        for (int64_t i = 0; i < in; ++i) {
            acc[j][i] /= total;
        }
    }
    return m;
}

void require_image(const torch::Tensor &image, const char *what) {
    if (!image.defined() || image.dim() != 3 || image.numel() == 0) {
        throw InvalidArgument(std::string(what) + " expects a nonempty [c, H, W] image");
    }
}

void require_same_shape(const torch::Tensor &a, const torch::Tensor &b, const char *what) {
    if (!a.defined() || !b.defined() || a.sizes() != b.sizes()) {
        std::ostringstream msg;
        msg << what << ": shape mismatch " << (a.defined() ? a.sizes() : c10::IntArrayRef{})
            << " vs " << (b.defined() ? b.sizes() : c10::IntArrayRef{});
        throw InvalidArgument(msg.str());
    }
}

torch::Tensor gaussian_window(int64_t size, double sigma) {
    auto g = torch::arange(size, torch::kDouble) - static_cast<double>(size - 1) / 2.0;
    g = torch::exp(-(g * g) / (2.0 * sigma * sigma));
    g = g / g.sum();
    return torch::outer(g, g).reshape({1, 1, size, size});
}

} // namespace

torch::Tensor resample_bicubic_to(const torch::Tensor &image, int64_t out_height,
                                  int64_t out_width) {
    require_image(image, "resample_bicubic");
    if (out_height < 1 || out_width < 1) {
        throw InvalidArgument("resample_bicubic output size must be at least 1x1");
    }
    const int64_t in_h = image.size(1);
    const int64_t in_w = image.size(2);
    if (in_h == out_height && in_w == out_width) {
        return image.clone();
    }
    const auto options = image.scalar_type();
    auto out = image;
    if (in_h != out_height) {
        out = torch::matmul(resampling_matrix(in_h, out_height).to(options), out);
    }
    if (in_w != out_width) {
        out = torch::matmul(out, resampling_matrix(in_w, out_width).to(options).t());
    }
    return out.clamp(0.0, 1.0);
}

torch::Tensor resample_bicubic(const torch::Tensor &image, ScaleFactor factor) {
    if (factor.numerator <= 0 || factor.denominator <= 0) {
        throw InvalidArgument("resample factor must be positive");
    }
    require_image(image, "resample_bicubic");
    const auto scaled = [&](int64_t n) {
        // round(n * num / den) in integer arithmetic, halves rounding up
        return (2 * n * factor.numerator + factor.denominator) / (2 * factor.denominator);
    };
    const int64_t out_h = scaled(image.size(1));
    const int64_t out_w = scaled(image.size(2));
    if (out_h < 1 || out_w < 1) {
        throw InvalidArgument("resample factor yields an empty image");
    }
    return resample_bicubic_to(image, out_h, out_w);
}

torch::Tensor resize_nearest(const torch::Tensor &map, ResizeDirection direction) {
    if (!map.defined() || map.dim() < 2) {
        throw InvalidArgument("resize_nearest expects at least two spatial dimensions");
    }
    if (direction == ResizeDirection::Up) {
        return map.repeat_interleave(2, -1).repeat_interleave(2, -2);
    }
    const int64_t h = map.size(-2);
    const int64_t w = map.size(-1);
    if (h % 2 != 0 || w % 2 != 0) {
        std::ostringstream msg;
        msg << "resize_nearest down needs even spatial dims, got " << h << "x" << w;
        throw InvalidArgument(msg.str());
    }
    return map.slice(-2, 0, h, 2).slice(-1, 0, w, 2).contiguous();
}

double psnr(const torch::Tensor &a, const torch::Tensor &b) {
    require_same_shape(a, b, "psnr");
    const double mse = (a.to(torch::kDouble) - b.to(torch::kDouble)).square().mean().item<double>();
    if (mse == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const torch::Tensor &a, const torch::Tensor &b) {
    require_same_shape(a, b, "ssim");
    if (a.dim() != 3) {
        throw InvalidArgument("ssim expects [c, H, W] images");
    }
    constexpr int64_t kWindow = 11;
    if (a.size(1) < kWindow || a.size(2) < kWindow) {
        throw InvalidArgument("ssim needs images of at least 11x11 pixels");
    }
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    const auto window = gaussian_window(kWindow, 1.5);
    const auto x = a.to(torch::kDouble).unsqueeze(1);
    const auto y = b.to(torch::kDouble).unsqueeze(1);
    const auto filter = [&](const torch::Tensor &t) { return torch::conv2d(t, window); };

    const auto mu_x = filter(x);
    const auto mu_y = filter(y);
    const auto sigma_xx = filter(x * x) - mu_x * mu_x;
    const auto sigma_yy = filter(y * y) - mu_y * mu_y;
    const auto sigma_xy = filter(x * y) - mu_x * mu_y;
    const auto map = ((2.0 * mu_x * mu_y + c1) * (2.0 * sigma_xy + c2)) /
                     ((mu_x * mu_x + mu_y * mu_y + c1) * (sigma_xx + sigma_yy + c2));
    return map.mean().item<double>();
}

} // namespace crossmpi::imaging
