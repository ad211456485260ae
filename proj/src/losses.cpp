// Copyright Contributors to the crossmpi project
// SPDX-License-Identifier: Apache-2.0

#include "crossmpi/losses.hpp"

#include "crossmpi/errors.hpp"
#include "crossmpi/safetensors.hpp"

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

namespace crossmpi::losses {

namespace F = torch::nn::functional;

namespace {

void require_same_shape(const torch::Tensor &a, const torch::Tensor &b, const char *what) {
    if (!a.defined() || !b.defined() || a.sizes() != b.sizes()) {
        std::ostringstream msg;
        msg << what << ": shape mismatch " << (a.defined() ? a.sizes() : c10::IntArrayRef{})
            << " vs " << (b.defined() ? b.sizes() : c10::IntArrayRef{});
        throw InvalidArgument(msg.str());
    }
}

// (output channels, convolutions) per VGG-19 stage.
constexpr std::pair<int64_t, int> kVggStages[] = {{64, 2}, {128, 2}, {256, 4}, {512, 4}, {512, 4}};

} // namespace

void LossWeights::validate() const {
    if (!(rec >= 0.0) || !(per >= 0.0) || !(is >= 0.0)) {
        throw InvalidArgument("loss weights must be non-negative");
    }
}

std::vector<double> PerceptualBackbone::layer_weights(int64_t channels, int64_t height,
                                                      int64_t width, torch::ScalarType dtype) {
    torch::NoGradGuard no_grad;
    std::vector<double> weights;
    for (const auto &f : features(torch::zeros({channels, height, width}, dtype))) {
        weights.push_back(1.0 / static_cast<double>(f.numel()));
    }
    return weights;
}

VggBackbone::VggBackbone(VggOptions options) : options_(std::move(options)) {
    if (options_.width_divisor < 1) {
        throw InvalidArgument("vgg width_divisor must be >= 1");
    }
    if (options_.layers.empty()) {
        throw InvalidArgument("perceptual backbone needs at least one layer");
    }
    int64_t in_channels = 3;
    int64_t index = 0;
    for (std::size_t s = 0; s < std::size(kVggStages); ++s) {
        const auto [width, count] = kVggStages[s];
        const int64_t out_channels = std::max<int64_t>(1, width / options_.width_divisor);
        for (int k = 0; k < count; ++k) {
            Conv conv;
            conv.name = "conv" + std::to_string(s + 1) + "_" + std::to_string(k + 1);
            conv.pool_before = s > 0 && k == 0;
            if (conv.pool_before) {
                ++index; // torchvision places a MaxPool2d here
            }
            conv.torchvision_index = index;
            conv.weight = torch::empty({out_channels, in_channels, 3, 3});
            conv.bias = torch::zeros({out_channels});
            convs_.push_back(std::move(conv));
            index += 2; // conv + ReLU
            in_channels = out_channels;
        }
    }

    for (const auto &layer : options_.layers) {
        const auto it = std::find_if(convs_.begin(), convs_.end(),
                                     [&](const Conv &c) { return c.name == layer; });
        if (it == convs_.end()) {
            throw InvalidArgument("unknown perceptual layer '" + layer + "'");
        }
        last_needed_ = std::max(last_needed_, static_cast<std::size_t>(it - convs_.begin()));
    }

    if (!options_.weights.empty() && std::filesystem::exists(options_.weights)) {
        const auto file = safetensors::load(options_.weights);
        for (auto &conv : convs_) {
            const auto prefix = "features." + std::to_string(conv.torchvision_index);
            const auto w = file.tensors.find(prefix + ".weight");
            const auto b = file.tensors.find(prefix + ".bias");
            if (w == file.tensors.end() || b == file.tensors.end()) {
                throw CheckpointError(options_.weights.string() + ": missing " + prefix);
            }
            if (w->second.sizes() != conv.weight.sizes() || b->second.sizes() != conv.bias.sizes()) {
                throw CheckpointError(options_.weights.string() + ": shape mismatch for " + prefix);
            }
            conv.weight = w->second.to(torch::kFloat).clone();
            conv.bias = b->second.to(torch::kFloat).clone();
        }
        pretrained_ = true;
    } else {
        std::clog << "warning: perceptual backbone weights "
                  << (options_.weights.empty() ? std::string("not configured")
                                               : "not found at " + options_.weights.string())
                  << "; using frozen random weights (seed " << options_.seed << ")\n";
        auto gen = at::detail::createCPUGenerator(options_.seed);
        for (auto &conv : convs_) {
            const double fan_in = static_cast<double>(conv.weight.size(1) * 9);
            conv.weight = torch::randn(conv.weight.sizes(), gen, torch::TensorOptions().dtype(torch::kFloat)) *
                          std::sqrt(2.0 / fan_in);
        }
    }
    for (auto &conv : convs_) {
        conv.weight.set_requires_grad(false);
        conv.bias.set_requires_grad(false);
    }
}

void VggBackbone::to(torch::ScalarType dtype) {
    for (auto &conv : convs_) {
        conv.weight = conv.weight.to(dtype);
        conv.bias = conv.bias.to(dtype);
    }
}

std::vector<torch::Tensor> VggBackbone::parameters() const {
    std::vector<torch::Tensor> out;
    for (const auto &conv : convs_) {
        out.push_back(conv.weight);
        out.push_back(conv.bias);
    }
    return out;
}

std::vector<torch::Tensor> VggBackbone::features(const torch::Tensor &image) {
    if (image.dim() != 3 || image.size(0) != 3) {
        throw InvalidArgument("vgg backbone expects a [3, H, W] RGB image");
    }
    const auto opts = image.options();
    const auto mean = torch::tensor({0.485, 0.456, 0.406}, opts).reshape({3, 1, 1});
    const auto stdev = torch::tensor({0.229, 0.224, 0.225}, opts).reshape({3, 1, 1});
    auto x = ((image - mean) / stdev).unsqueeze(0);

    std::vector<torch::Tensor> out;
    for (std::size_t i = 0; i <= last_needed_; ++i) {
        const auto &conv = convs_[i];
        if (conv.pool_before) {
            x = F::max_pool2d(x, F::MaxPool2dFuncOptions(2));
        }
        x = torch::relu(F::conv2d(x, conv.weight, F::Conv2dFuncOptions().bias(conv.bias).padding(1)));
        if (std::find(options_.layers.begin(), options_.layers.end(), conv.name) !=
            options_.layers.end()) {
            out.push_back(x.squeeze(0));
        }
    }
    return out;
}

torch::Tensor reconstruction_loss(const torch::Tensor &i_sr, const torch::Tensor &i_gt) {
    require_same_shape(i_sr, i_gt, "reconstruction_loss");
    return (i_sr - i_gt).abs().mean();
}

torch::Tensor perceptual_loss(const torch::Tensor &i_sr, const torch::Tensor &i_gt,
                              PerceptualBackbone &backbone) {
    require_same_shape(i_sr, i_gt, "perceptual_loss");
    const auto sr_features = backbone.features(i_sr);
    std::vector<torch::Tensor> gt_features;
    {
        torch::NoGradGuard no_grad;
        gt_features = backbone.features(i_gt.detach());
    }
    if (sr_features.size() != gt_features.size() || sr_features.empty()) {
        throw InvalidArgument("perceptual backbone returned inconsistent layer sets");
    }
    auto total = torch::zeros({}, i_sr.options());
    for (std::size_t l = 0; l < sr_features.size(); ++l) {
        const double lambda = 1.0 / static_cast<double>(sr_features[l].numel());
        total = total + lambda * (sr_features[l] - gt_features[l]).abs().sum();
    }
    return total;
}

torch::Tensor composite_attention_sweep(const geometry::PlaneSweepVolume &psv_att,
                                        const model::AlphaMaps &a_init) {
    const auto &colors = psv_att.images;
    const auto &alphas = a_init.weights;
    if (colors.dim() != 4 || alphas.dim() != 3 || colors.size(0) != alphas.size(0) ||
        colors.size(2) != alphas.size(1) || colors.size(3) != alphas.size(2)) {
        std::ostringstream msg;
        msg << "internal supervision: plane sweep " << colors.sizes() << " does not match alphas "
            << alphas.sizes();
        throw InvalidArgument(msg.str());
    }
    const int64_t d = colors.size(0);
    const int64_t c = colors.size(1);
    const int64_t h = colors.size(2);
    const int64_t w = colors.size(3);
    const int64_t n = h * w;
    const auto sweep = colors.permute({2, 3, 1, 0}).reshape({n, c, d});
    const auto weights = alphas.permute({1, 2, 0}).reshape({n, d, 1});
    return torch::bmm(sweep, weights).reshape({h, w, c}).permute({2, 0, 1});
}

torch::Tensor internal_supervision_loss(const geometry::PlaneSweepVolume &psv_att,
                                        const model::AlphaMaps &a_init,
                                        const torch::Tensor &i_lr_att) {
    const auto composite = composite_attention_sweep(psv_att, a_init);
    require_same_shape(composite, i_lr_att, "internal_supervision_loss");
    return (composite - i_lr_att).abs().mean();
}

torch::Tensor total_loss(const torch::Tensor &rec, const torch::Tensor &per,
                         const torch::Tensor &is, const LossWeights &weights) {
    weights.validate();
    for (const auto *t : {&rec, &per, &is}) {
        if (!t->defined() || t->numel() != 1 || !std::isfinite(t->item<double>())) {
            throw InvalidArgument("total_loss: loss components must be finite scalars");
        }
    }
    return weights.rec * rec + weights.per * per + weights.is * is;
}

double total_loss(double rec, double per, double is, const LossWeights &weights) {
    weights.validate();
    if (!std::isfinite(rec) || !std::isfinite(per) || !std::isfinite(is)) {
        throw InvalidArgument("total_loss: loss components must be finite");
    }
    return weights.rec * rec + weights.per * per + weights.is * is;
}

} // namespace crossmpi::losses
