// Copyright Contributors to the crossmpi project
// SPDX-License-Identifier: Apache-2.0

#include "crossmpi/model.hpp"

#include "crossmpi/errors.hpp"
#include "crossmpi/imaging.hpp"

#include <torch/torch.h>

#include <sstream>

namespace crossmpi::model {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace {

constexpr double kLeakySlope = 0.1;
// Initial logit gain on the plane channels of the guided projection.
constexpr double kAlphaGain = 8.0;

nn::Conv2d conv3x3(int64_t in, int64_t out, int64_t dilation = 1) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(dilation).dilation(dilation));
}

nn::Conv2d conv1x1(int64_t in, int64_t out) { return nn::Conv2d(nn::Conv2dOptions(in, out, 1)); }

nn::LeakyReLU leaky() { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(kLeakySlope)); }

torch::Tensor lrelu(const torch::Tensor &x) {
    return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(kLeakySlope));
}

// Input projection followed by `blocks` residual blocks.
nn::Sequential residual_stage(int64_t in, int64_t channels, int64_t blocks) {
    nn::Sequential seq;
    seq->push_back(conv3x3(in, channels));
    seq->push_back(leaky());
    for (int64_t b = 0; b < blocks; ++b) {
        seq->push_back(ResidualBlock(channels));
    }
    return seq;
}

nn::Sequential residual_blocks(int64_t channels, int64_t blocks) {
    nn::Sequential seq;
    for (int64_t b = 0; b < blocks; ++b) {
        seq->push_back(ResidualBlock(channels));
    }
    if (blocks == 0) {
        seq->push_back(nn::Identity());
    }
    return seq;
}

std::string shape_string(const torch::Tensor &t) {
    std::ostringstream out;
    out << t.sizes();
    return out.str();
}

void require(bool ok, const std::string &message) {
    if (!ok) {
        throw InvalidArgument(message);
    }
}

} // namespace

void ModelConfig::validate() const {
    const auto positive = [](int64_t v, const char *name) {
        if (v < 1) {
            throw InvalidArgument(std::string("model config: ") + name + " must be >= 1");
        }
    };
    positive(h, "h");
    positive(w, "w");
    positive(c, "c");
    positive(beta, "beta");
    positive(feature_channels, "feature_channels");
    positive(attention_scale, "attention_scale");
    positive(guided_channels, "guided_channels");
    positive(fusenet_channels, "fusenet_channels");
    if (d < 2) {
        throw InvalidArgument("model config: d must be >= 2");
    }
    if (guided_levels < 0 || guided_res_blocks < 0 || fusenet_blocks < 0) {
        throw InvalidArgument("model config: block and level counts must be >= 0");
    }
    if ((beta & (beta - 1)) != 0) {
        throw InvalidArgument("model config: beta must be a power of 2, got " + std::to_string(beta));
    }
    if (guided_levels > 30 || attention_scale * (int64_t{1} << guided_levels) != beta) {
        std::ostringstream msg;
        msg << "model config: attention_scale * 2^guided_levels must equal beta (" << attention_scale
            << " * 2^" << guided_levels << " != " << beta << ")";
        throw InvalidArgument(msg.str());
    }
    if (!(near > 0.0) || !(far > near)) {
        throw InvalidArgument("model config: depth range needs 0 < near < far");
    }
}

geometry::DepthPlaneSet ModelConfig::planes() const {
    return geometry::sample_depth_planes(near, far, d);
}

// ---------------------------------------------------------------------------

ResidualBlockImpl::ResidualBlockImpl(int64_t channels, int64_t dilation)
    : conv1_(register_module("conv1", conv3x3(channels, channels, dilation))),
      conv2_(register_module("conv2", conv3x3(channels, channels, dilation))) {}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor &x) {
    return x + conv2_->forward(lrelu(conv1_->forward(x)));
}

ResAsppImpl::ResAsppImpl(int64_t channels, std::vector<int64_t> dilations) {
    for (std::size_t i = 0; i < dilations.size(); ++i) {
        branches_.push_back(register_module("branch" + std::to_string(i),
                                            conv3x3(channels, channels, dilations[i])));
    }
    fuse_ = register_module(
        "fuse", conv1x1(channels * static_cast<int64_t>(dilations.size()), channels));
}

torch::Tensor ResAsppImpl::forward(const torch::Tensor &x) {
    std::vector<torch::Tensor> parts;
    parts.reserve(branches_.size());
    for (auto &branch : branches_) {
        parts.push_back(lrelu(branch->forward(x)));
    }
    return x + fuse_->forward(torch::cat(parts, 1));
}

SharedFeatureExtractorImpl::SharedFeatureExtractorImpl(int64_t in_channels,
                                                       int64_t feature_channels)
    : in_channels_(in_channels), feature_channels_(feature_channels),
      head_(register_module("head", conv3x3(in_channels, feature_channels))),
      aspp_(register_module("aspp", ResAspp(feature_channels, std::vector<int64_t>{1, 4, 8}))),
      res_(register_module("res", ResidualBlock(feature_channels))) {}

torch::Tensor SharedFeatureExtractorImpl::forward(const torch::Tensor &x) {
    require(x.dim() == 4 && x.size(1) == in_channels_,
            "shared_feature_extractor expects [N, " + std::to_string(in_channels_) +
                ", H, W] input, got " + shape_string(x));
    return res_->forward(aspp_->forward(lrelu(head_->forward(x))));
}

GuidedUpsamplerImpl::GuidedUpsamplerImpl(const ModelConfig &config) : config_(config) {
    const int64_t g = config.guided_channels;
    const int64_t levels = config.guided_levels;
    const int64_t blocks = config.guided_res_blocks;

    nn::Sequential head;
    head->push_back(conv3x3(config.c * (1 + config.d), g));
    head->push_back(leaky());
    guide_head_ = register_module("guide_head", head);

    for (int64_t k = 0; k < levels; ++k) {
        guide_down_.push_back(
            register_module("guide_down" + std::to_string(k), residual_blocks(g, blocks)));
    }
    // The alpha branch runs its residual blocks directly on Concat(A, G), so
    // the skip connections carry the plane weights through every level. The
    // blocks start as the identity and the projection starts as a scaled
    // identity on the plane channels: at initialization the output is a
    // sharpened nearest-neighbour upsampling of A_init, and training refines
    // it from there rather than from an arbitrary plane assignment.
    const int64_t width = config.d + g;
    for (int64_t k = 0; k < levels; ++k) {
        alpha_up_.push_back(register_module("alpha_up" + std::to_string(k), residual_blocks(width, blocks)));
    }
    out_block_ = register_module("out_block", residual_blocks(width, blocks));
    out_proj_ = register_module("out_proj", conv1x1(width, config.d));

    torch::NoGradGuard no_grad;
    const auto zero_branches = [](nn::Sequential &seq) {
        for (auto &p : seq->named_parameters()) {
            if (p.key().find("conv2.") != std::string::npos) {
                p.value().zero_();
            }
        }
    };
    for (auto &stage : alpha_up_) {
        zero_branches(stage);
    }
    zero_branches(out_block_);
    out_proj_->weight.slice(1, 0, config.d).copy_(
        kAlphaGain * torch::eye(config.d).reshape({config.d, config.d, 1, 1}));
    out_proj_->bias.zero_();
}

GuidanceStack GuidedUpsamplerImpl::guidance(const torch::Tensor &i_lr_up,
                                            const geometry::PlaneSweepVolume &psv_hr) {
    require(i_lr_up.dim() == 3 && psv_hr.images.dim() == 4,
            "guidance expects a [c, H, W] image and a [d, c, H, W] plane sweep");
    require(psv_hr.planes() == config_.d && psv_hr.channels() == config_.c &&
                i_lr_up.size(0) == config_.c,
            "guidance plane/channel count mismatch: image " + shape_string(i_lr_up) +
                ", plane sweep " + shape_string(psv_hr.images));
    require(i_lr_up.size(1) == psv_hr.height() && i_lr_up.size(2) == psv_hr.width(),
            "guidance spatial mismatch: image " + shape_string(i_lr_up) + ", plane sweep " +
                shape_string(psv_hr.images));
    const int64_t levels = config_.guided_levels;
    const int64_t scale = int64_t{1} << levels;
    require(i_lr_up.size(1) % scale == 0 && i_lr_up.size(2) % scale == 0,
            "guidance size must be divisible by 2^guided_levels");

    const auto stacked = psv_hr.images.reshape(
        {psv_hr.planes() * psv_hr.channels(), psv_hr.height(), psv_hr.width()});
    GuidanceStack stack;
    stack.levels.resize(static_cast<std::size_t>(levels + 1));
    stack.levels[static_cast<std::size_t>(levels)] =
        guide_head_->forward(torch::cat({i_lr_up, stacked}, 0).unsqueeze(0));
    for (int64_t k = 0; k < levels; ++k) {
        const auto l = static_cast<std::size_t>(levels - k);
        stack.levels[l - 1] = imaging::resize_nearest(guide_down_[static_cast<std::size_t>(k)]->forward(stack.levels[l]),
                                                      imaging::ResizeDirection::Down);
    }
    return stack;
}

AlphaMaps GuidedUpsamplerImpl::forward(const AlphaMaps &a_init, const GuidanceStack &guidance) {
    const int64_t levels = config_.guided_levels;
    if (static_cast<int64_t>(guidance.levels.size()) != levels + 1) {
        throw InvalidArgument("guided_upsample: expected " + std::to_string(levels + 1) +
                              " guidance levels, got " + std::to_string(guidance.levels.size()));
    }
    const auto &coarse = guidance.levels.front();
    require(a_init.weights.dim() == 3 && a_init.weights.size(0) == config_.d,
            "guided_upsample: initial alphas must be [d, H, W], got " +
                shape_string(a_init.weights));
    require(a_init.weights.size(1) == coarse.size(2) && a_init.weights.size(2) == coarse.size(3),
            "guided_upsample: initial alphas " + shape_string(a_init.weights) +
                " do not match level-0 guidance " + shape_string(coarse));

    auto a = a_init.weights.unsqueeze(0);
    for (int64_t k = 0; k < levels; ++k) {
        const auto &g = guidance.levels[static_cast<std::size_t>(k)];
        const auto refined = alpha_up_[static_cast<std::size_t>(k)]->forward(torch::cat({a, g}, 1));
        a = imaging::resize_nearest(refined.slice(1, 0, config_.d), imaging::ResizeDirection::Up);
    }
    const auto logits =
        out_proj_->forward(out_block_->forward(torch::cat({a, guidance.levels.back()}, 1)));
    return AlphaMaps{torch::softmax(logits, 1).squeeze(0), AlphaScale::SR};
}

FuseNetImpl::FuseNetImpl(int64_t image_channels, int64_t channels, int64_t blocks)
    : image_channels_(image_channels) {
    body_ = register_module("body", residual_stage(2 * image_channels, channels, blocks));
    tail_ = register_module("tail", conv3x3(channels, image_channels));
    torch::NoGradGuard no_grad;
    tail_->weight.zero_();
    tail_->bias.zero_();
}

torch::Tensor FuseNetImpl::forward(const torch::Tensor &t_ref, const torch::Tensor &i_lr_up,
                                   bool inference) {
    require(t_ref.dim() == 3 && t_ref.sizes() == i_lr_up.sizes() &&
                t_ref.size(0) == image_channels_,
            "fuse: expected matching [" + std::to_string(image_channels_) +
                ", H, W] inputs, got " + shape_string(t_ref) + " and " + shape_string(i_lr_up));
    const auto x = torch::cat({t_ref, i_lr_up}, 0).unsqueeze(0);
    auto out = i_lr_up + tail_->forward(body_->forward(x)).squeeze(0);
    if (inference) {
        out = out.clamp(0.0, 1.0);
    }
    return out;
}

// ---------------------------------------------------------------------------

FeatureVolume extract_feature_volume(SharedFeatureExtractor &sfe,
                                     const geometry::PlaneSweepVolume &psv) {
    require(psv.images.defined() && psv.images.dim() == 4,
            "extract_feature_volume expects a [d, c, H, W] plane sweep");
    // The plane axis doubles as the batch axis: one weight set for every slice.
    return FeatureVolume{sfe->forward(psv.images)};
}

AlphaMaps plane_aware_attention(const torch::Tensor &f_lr, const FeatureVolume &fv,
                                AttentionTrace *trace) {
    require(f_lr.dim() == 3 && fv.values.dim() == 4,
            "plane_aware_attention expects f_lr [c_e, H, W] and fv [d, c_e, H, W]");
    const int64_t ce = f_lr.size(0);
    const int64_t h = f_lr.size(1);
    const int64_t w = f_lr.size(2);
    const int64_t d = fv.values.size(0);
    require(fv.values.size(1) == ce && fv.values.size(2) == h && fv.values.size(3) == w,
            "plane_aware_attention shape mismatch: f_lr " + shape_string(f_lr) + ", fv " +
                shape_string(fv.values));
    const int64_t n = h * w;

    const auto query = f_lr.reshape({ce, n}).t().reshape({n, 1, ce});
    const auto keys = fv.values.permute({2, 3, 1, 0}).reshape({n, ce, d});
    const auto scores = torch::bmm(query, keys);   // [n, 1, d]
    const auto attention = torch::softmax(scores, -1);
    const auto alphas = attention.reshape({h, w, d}).permute({2, 0, 1}).contiguous();

    if (trace != nullptr) {
        for (const auto *t : {&query, &keys, &scores, &attention, &alphas}) {
            trace->shapes.emplace_back(t->sizes().begin(), t->sizes().end());
        }
        trace->score_elements = scores.numel();
    }
    return AlphaMaps{alphas, AlphaScale::Attention};
}

AlphaMaps guided_upsample(GuidedUpsampler &module, const AlphaMaps &a_init,
                          const GuidanceStack &guidance) {
    return module->forward(a_init, guidance);
}

MultiplaneImage compose_sr_mpi(const geometry::PlaneSweepVolume &psv_hr, const AlphaMaps &alphas) {
    const auto &colors = psv_hr.images;
    const auto &a = alphas.weights;
    require(colors.dim() == 4 && a.dim() == 3, "compose_sr_mpi expects [d, c, H, W] and [d, H, W]");
    require(colors.size(0) == a.size(0) && colors.size(2) == a.size(1) &&
                colors.size(3) == a.size(2),
            "compose_sr_mpi shape mismatch: plane sweep " + shape_string(colors) + ", alphas " +
                shape_string(a));
    return MultiplaneImage{colors, a};
}

torch::Tensor synthesize_transfer(const MultiplaneImage &mpi) {
    return (mpi.colors * mpi.alphas.unsqueeze(1)).sum(0);
}

torch::Tensor extract_depth_index(const AlphaMaps &alphas) {
    // torch::max keeps the first maximal index, i.e. the nearest plane on ties.
    return std::get<1>(alphas.weights.detach().max(0));
}

torch::Tensor extract_depth(const AlphaMaps &alphas, const geometry::DepthPlaneSet &planes) {
    require(alphas.weights.dim() == 3 &&
                alphas.weights.size(0) == static_cast<int64_t>(planes.size()),
            "extract_depth: alpha plane count does not match the depth plane set");
    const auto table = torch::tensor(planes.depths, torch::kDouble);
    return table.index_select(0, extract_depth_index(alphas).flatten())
        .reshape({1, alphas.weights.size(1), alphas.weights.size(2)});
}

// ---------------------------------------------------------------------------

CrossMpiNetImpl::CrossMpiNetImpl(const ModelConfig &config) : config_(config) {
    config_.validate();
    planes_ = config_.planes();
    sfe = register_module("sfe", SharedFeatureExtractor(config_.c, config_.feature_channels));
    guided = register_module("guided", GuidedUpsampler(config_));
    fuse = register_module("fuse",
                           FuseNet(config_.c, config_.fusenet_channels, config_.fusenet_blocks));
}

PreparedInputs CrossMpiNetImpl::prepare(const data::TrainingTuple &tuple) const {
    const auto expect = [](const torch::Tensor &t, int64_t c, int64_t h, int64_t w,
                           const char *name) {
        if (!t.defined() || t.dim() != 3 || t.size(0) != c || t.size(1) != h || t.size(2) != w) {
            std::ostringstream msg;
            msg << name << " must be " << c << "x" << h << "x" << w << " (c x H x W), got "
                << (t.defined() ? t.sizes() : c10::IntArrayRef{});
            throw InvalidArgument(msg.str());
        }
    };
    expect(tuple.lr, config_.c, config_.h, config_.w, "I_LR");
    expect(tuple.ref, config_.c, config_.hr_height(), config_.hr_width(), "I_Ref");

    PreparedInputs in;
    in.psv_hr = geometry::build_plane_sweep_volume(tuple.ref, tuple.c_lr, tuple.c_ref, planes_,
                                                   config_.hr_height(), config_.hr_width(),
                                                   geometry::SweepResolution::HR);
    in.psv_attention = geometry::build_plane_sweep_volume(
        tuple.ref, tuple.c_lr, tuple.c_ref, planes_, config_.attention_height(),
        config_.attention_width(), geometry::SweepResolution::Attention);
    in.i_lr_up = imaging::resample_bicubic(tuple.lr, {config_.beta, 1});
    in.i_lr_attention = imaging::resample_bicubic(tuple.lr, {config_.attention_scale, 1});
    return in;
}

ForwardResult CrossMpiNetImpl::forward(const PreparedInputs &inputs, ForwardStage stage,
                                       bool inference) {
    ForwardResult out;
    const int64_t d = config_.d;
    // LR view and every plane sweep slice go through the extractor in one batch.
    const auto features =
        sfe->forward(torch::cat({inputs.i_lr_attention.unsqueeze(0), inputs.psv_attention.images}, 0));
    const auto f_lr = features[0];
    const FeatureVolume fv{features.slice(0, 1, 1 + d)};
    out.alphas_init = plane_aware_attention(f_lr, fv);
    if (stage == ForwardStage::Attention) {
        return out;
    }

    const auto guidance = guided->guidance(inputs.i_lr_up, inputs.psv_hr);
    out.alphas = guided->forward(out.alphas_init, guidance);
    out.t_ref = synthesize_transfer(compose_sr_mpi(inputs.psv_hr, out.alphas));
    out.depth = extract_depth(out.alphas, planes_);
    if (stage == ForwardStage::Transfer) {
        return out;
    }
    out.i_sr = fuse->forward(out.t_ref, inputs.i_lr_up, inference);
    return out;
}

ForwardResult CrossMpiNetImpl::forward(const data::TrainingTuple &tuple, ForwardStage stage,
                                       bool inference) {
    return forward(prepare(tuple), stage, inference);
}

} // namespace crossmpi::model
