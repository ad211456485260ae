// Copyright Contributors to the crossmpi project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "crossmpi/geometry.hpp"
#include "crossmpi/tuple.hpp"

#include <torch/nn.h>
#include <torch/types.h>

#include <cstdint>
#include <vector>

namespace crossmpi::model {

// Architecture hyperparameters. Defaults follow the 8x setting
// (h=384, w=768, c=3, d=32, beta=8); widths are configurable.
struct ModelConfig {
    int64_t h = 384;
    int64_t w = 768;
    int64_t c = 3;
    int64_t d = 32;
    int64_t beta = 8;
    int64_t feature_channels = 64;  // c_e
    int64_t attention_scale = 2;    // attention runs at (s_a h, s_a w)
    int64_t guided_levels = 2;      // L; s_a * 2^L == beta
    int64_t guided_channels = 64;
    int64_t guided_res_blocks = 2;  // per level
    int64_t fusenet_blocks = 8;
    int64_t fusenet_channels = 64;
    double near = 1.0;
    double far = 100.0;

    // Throws InvalidArgument naming the violated constraint.
    void validate() const;

    int64_t hr_height() const { return beta * h; }
    int64_t hr_width() const { return beta * w; }
    int64_t attention_height() const { return attention_scale * h; }
    int64_t attention_width() const { return attention_scale * w; }
    geometry::DepthPlaneSet planes() const;

    bool operator==(const ModelConfig &) const = default;
};

// Per-plane features of a plane sweep volume. values: [d, c_e, H, W].
struct FeatureVolume {
    torch::Tensor values;
};

enum class AlphaScale { Attention, SR };

// Per-pixel plane weights, softmax-normalized over planes. weights: [d, H, W].
struct AlphaMaps {
    torch::Tensor weights;
    AlphaScale scale = AlphaScale::Attention;
};

// d RGBA layers. Colors are the unmodulated plane sweep slices [d, c, H, W];
// alphas are [d, H, W]. Modulation happens in synthesize_transfer.
struct MultiplaneImage {
    torch::Tensor colors;
    torch::Tensor alphas;
};

// Guidance maps G_0 (coarsest, attention scale) .. G_L (HR), each [1, g, H_l, W_l].
struct GuidanceStack {
    std::vector<torch::Tensor> levels;
};

// Shapes of every intermediate plane_aware_attention allocates.
struct AttentionTrace {
    std::vector<std::vector<int64_t>> shapes;
    int64_t score_elements = 0;
};

class ResidualBlockImpl : public torch::nn::Module {
public:
    explicit ResidualBlockImpl(int64_t channels, int64_t dilation = 1);
    torch::Tensor forward(const torch::Tensor &x);

private:
    torch::nn::Conv2d conv1_{nullptr};
    torch::nn::Conv2d conv2_{nullptr};
};
TORCH_MODULE(ResidualBlock);

// Parallel atrous convolutions fused by a 1x1 convolution, with a residual skip.
class ResAsppImpl : public torch::nn::Module {
public:
    ResAsppImpl(int64_t channels, std::vector<int64_t> dilations);
    torch::Tensor forward(const torch::Tensor &x);

private:
    std::vector<torch::nn::Conv2d> branches_;
    torch::nn::Conv2d fuse_{nullptr};
};
TORCH_MODULE(ResAspp);

class SharedFeatureExtractorImpl : public torch::nn::Module {
public:
    SharedFeatureExtractorImpl(int64_t in_channels, int64_t feature_channels);

    // x: [N, c, H, W] -> [N, c_e, H, W].
    torch::Tensor forward(const torch::Tensor &x);

    int64_t in_channels() const { return in_channels_; }
    int64_t feature_channels() const { return feature_channels_; }

private:
    int64_t in_channels_;
    int64_t feature_channels_;
    torch::nn::Conv2d head_{nullptr};
    ResAspp aspp_{nullptr};
    ResidualBlock res_{nullptr};
};
TORCH_MODULE(SharedFeatureExtractor);

class GuidedUpsamplerImpl : public torch::nn::Module {
public:
    explicit GuidedUpsamplerImpl(const ModelConfig &config);

    // Guidance branch: G_L = head(Concat(I_LR_up, PSV_HR)), G_{l-1} = [Res(G_l)] down 2x.
    GuidanceStack guidance(const torch::Tensor &i_lr_up, const geometry::PlaneSweepVolume &psv_hr);

    // Alpha branch: A_l = [Res(Concat(A_{l-1}, G_{l-1}))] up 2x, keeping the
    // plane channels, then Res(Concat(A_L, G_L)), a 1x1 projection to d planes
    // and a softmax over planes at HR.
    AlphaMaps forward(const AlphaMaps &a_init, const GuidanceStack &guidance);

private:
    ModelConfig config_;
    torch::nn::Sequential guide_head_{nullptr};
    std::vector<torch::nn::Sequential> guide_down_; // index k handles level L-k -> L-k-1
    std::vector<torch::nn::Sequential> alpha_up_;   // index k handles level k -> k+1
    torch::nn::Sequential out_block_{nullptr};
    torch::nn::Conv2d out_proj_{nullptr};
};
TORCH_MODULE(GuidedUpsampler);

// Cascaded residual blocks over Concat(T_Ref, I_LR_up) with a global residual
// onto I_LR_up. The final projection starts at zero.
class FuseNetImpl : public torch::nn::Module {
public:
    FuseNetImpl(int64_t image_channels, int64_t channels, int64_t blocks);

    // t_ref, i_lr_up: [c, H, W]. Clamps to [0, 1] only when `inference` is set.
    torch::Tensor forward(const torch::Tensor &t_ref, const torch::Tensor &i_lr_up,
                          bool inference = false);

    torch::nn::Conv2d &tail() { return tail_; }

private:
    int64_t image_channels_;
    torch::nn::Sequential body_{nullptr};
    torch::nn::Conv2d tail_{nullptr};
};
TORCH_MODULE(FuseNet);

FeatureVolume extract_feature_volume(SharedFeatureExtractor &sfe,
                                     const geometry::PlaneSweepVolume &psv);

// Per-pixel softmax over planes of <f_lr(p), fv(p, :, i)>, computed as an
// (n x 1 x c_e) * (n x c_e x d) batched product. f_lr: [c_e, H, W].
AlphaMaps plane_aware_attention(const torch::Tensor &f_lr, const FeatureVolume &fv,
                                AttentionTrace *trace = nullptr);

AlphaMaps guided_upsample(GuidedUpsampler &module, const AlphaMaps &a_init,
                          const GuidanceStack &guidance);

MultiplaneImage compose_sr_mpi(const geometry::PlaneSweepVolume &psv_hr, const AlphaMaps &alphas);

// T(p) = sum_i alpha_i(p) C_i(p). Returns [c, H, W].
torch::Tensor synthesize_transfer(const MultiplaneImage &mpi);

// Plane index with maximal alpha per pixel, lowest index on ties. [H, W] long.
torch::Tensor extract_depth_index(const AlphaMaps &alphas);

// Depth of the argmax plane per pixel. [1, H, W] double.
torch::Tensor extract_depth(const AlphaMaps &alphas, const geometry::DepthPlaneSet &planes);

// Resampled inputs shared by every stage of the forward pass.
struct PreparedInputs {
    geometry::PlaneSweepVolume psv_hr;
    geometry::PlaneSweepVolume psv_attention;
    torch::Tensor i_lr_up;        // beta x bicubic
    torch::Tensor i_lr_attention; // s_a x bicubic
};

enum class ForwardStage {
    Attention, // A_init only
    Transfer,  // adds guided upsampling, T_Ref and depth
    Full,      // adds FuseNet
};

struct ForwardResult {
    AlphaMaps alphas_init;
    AlphaMaps alphas;
    torch::Tensor t_ref;
    torch::Tensor i_sr;
    torch::Tensor depth;
};

class CrossMpiNetImpl : public torch::nn::Module {
public:
    explicit CrossMpiNetImpl(const ModelConfig &config);

    // Builds both plane sweep volumes and the bicubic inputs. Throws
    // InvalidArgument when the tuple does not match the configured sizes.
    PreparedInputs prepare(const data::TrainingTuple &tuple) const;

    ForwardResult forward(const PreparedInputs &inputs, ForwardStage stage = ForwardStage::Full,
                          bool inference = false);
    ForwardResult forward(const data::TrainingTuple &tuple, ForwardStage stage = ForwardStage::Full,
                          bool inference = false);

    const ModelConfig &config() const { return config_; }
    const geometry::DepthPlaneSet &planes() const { return planes_; }

    SharedFeatureExtractor sfe{nullptr};
    GuidedUpsampler guided{nullptr};
    FuseNet fuse{nullptr};

private:
    ModelConfig config_;
    geometry::DepthPlaneSet planes_;
};
TORCH_MODULE(CrossMpiNet);

} // namespace crossmpi::model
