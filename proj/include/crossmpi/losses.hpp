// Copyright Contributors to the crossmpi project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "crossmpi/geometry.hpp"
#include "crossmpi/model.hpp"

#include <torch/nn.h>
#include <torch/types.h>

#include <filesystem>
#include <string>
#include <vector>

namespace crossmpi::losses {

struct LossWeights {
    double rec = 1.0;
    double per = 1.0;
    double is = 0.2;

    void validate() const;
};

// Frozen feature extractor for the perceptual loss. Subclasses return one
// activation per configured layer; the loss weights each layer by the inverse
// of its neuron count.
class PerceptualBackbone {
public:
    virtual ~PerceptualBackbone() = default;

    // image: [c, H, W] -> one [C_l, H_l, W_l] tensor per layer.
    virtual std::vector<torch::Tensor> features(const torch::Tensor &image) = 0;

    // lambda_l = 1 / (C_l * H_l * W_l) for an input of the given size.
    std::vector<double> layer_weights(int64_t channels, int64_t height, int64_t width,
                                      torch::ScalarType dtype = torch::kFloat);
};

// phi(x) = x, one layer.
class IdentityBackbone final : public PerceptualBackbone {
public:
    std::vector<torch::Tensor> features(const torch::Tensor &image) override { return {image}; }
};

struct VggOptions {
    // Layers tapped after their activation, named conv<stage>_<index>.
    std::vector<std::string> layers{"conv1_2", "conv2_2", "conv3_2", "conv4_2", "conv5_2"};
    // Divides every VGG-19 channel width; 1 gives the standard network.
    int64_t width_divisor = 1;
    // Serialized weights (safetensors, torchvision "features.N.weight" names).
    // Empty or missing: deterministic random weights from `seed`.
    std::filesystem::path weights;
    uint64_t seed = 1234;
};

// VGG-19 convolutional trunk with ImageNet input normalization. Never trains.
class VggBackbone final : public PerceptualBackbone {
public:
    explicit VggBackbone(VggOptions options);

    std::vector<torch::Tensor> features(const torch::Tensor &image) override;

    bool pretrained() const { return pretrained_; }
    void to(torch::ScalarType dtype);
    std::vector<torch::Tensor> parameters() const;

private:
    struct Conv {
        std::string name;          // conv<stage>_<index>
        int64_t torchvision_index; // position inside torchvision's `features`
        torch::Tensor weight;
        torch::Tensor bias;
        bool pool_before = false;
    };

    VggOptions options_;
    std::vector<Conv> convs_;
    std::size_t last_needed_ = 0;
    bool pretrained_ = false;
};

// Mean absolute error over all elements.
torch::Tensor reconstruction_loss(const torch::Tensor &i_sr, const torch::Tensor &i_gt);

// sum_l lambda_l * || phi_l(i_sr) - phi_l(i_gt) ||_1. No gradient reaches i_gt.
torch::Tensor perceptual_loss(const torch::Tensor &i_sr, const torch::Tensor &i_gt,
                              PerceptualBackbone &backbone);

// Composite of the attention-scale plane sweep under the initial alphas,
// as an (n x c x d) * (n x d x 1) product. Returns [c, H, W].
torch::Tensor composite_attention_sweep(const geometry::PlaneSweepVolume &psv_att,
                                        const model::AlphaMaps &a_init);

// Mean absolute difference between that composite and the LR view.
torch::Tensor internal_supervision_loss(const geometry::PlaneSweepVolume &psv_att,
                                        const model::AlphaMaps &a_init,
                                        const torch::Tensor &i_lr_att);

// Weighted sum; throws InvalidArgument when any component is non-finite.
torch::Tensor total_loss(const torch::Tensor &rec, const torch::Tensor &per,
                         const torch::Tensor &is, const LossWeights &weights);
double total_loss(double rec, double per, double is, const LossWeights &weights);

} // namespace crossmpi::losses
