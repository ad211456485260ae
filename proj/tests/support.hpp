// Copyright Contributors to the crossmpi project
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Oracles and fixtures shared by the unit tests and the acceptance runner.

#include "crossmpi/geometry.hpp"
#include "crossmpi/model.hpp"
#include "crossmpi/tuple.hpp"

#include <torch/torch.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace crossmpi::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string &tag = "crossmpi") {
        std::random_device rd;
        const auto base = std::filesystem::temp_directory_path();
        for (int attempt = 0; attempt < 100; ++attempt) {
            path_ = base / (tag + "-" + std::to_string(rd()) + std::to_string(attempt));
            if (std::filesystem::create_directory(path_)) {
                return;
            }
        }
        throw std::runtime_error("cannot create temporary directory");
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir &) = delete;
    TempDir &operator=(const TempDir &) = delete;
    const std::filesystem::path &path() const { return path_; }
    std::filesystem::path operator/(const std::string &name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline double max_abs_diff(const torch::Tensor &a, const torch::Tensor &b) {
    return (a.to(torch::kDouble) - b.to(torch::kDouble)).abs().max().item<double>();
}

inline bool bit_equal(const torch::Tensor &a, const torch::Tensor &b) {
    return a.scalar_type() == b.scalar_type() && a.sizes() == b.sizes() && torch::equal(a, b);
}

// Per-pixel reference for plane-aware attention: explicit dot products and a
// max-shifted softmax, one pixel at a time. f_lr: [c_e, H, W], fv: [d, c_e, H, W].
inline torch::Tensor attention_loop_oracle(const torch::Tensor &f_lr, const torch::Tensor &fv) {
    const auto f = f_lr.to(torch::kDouble).contiguous();
    const auto v = fv.to(torch::kDouble).contiguous();
    const int64_t d = v.size(0), c = v.size(1), h = v.size(2), w = v.size(3);
    auto out = torch::zeros({d, h, w}, torch::kDouble);
    auto fa = f.accessor<double, 3>();
    auto va = v.accessor<double, 4>();
    auto oa = out.accessor<double, 3>();
    std::vector<double> scores(static_cast<std::size_t>(d));
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            double best = -INFINITY;
            for (int64_t i = 0; i < d; ++i) {
                double s = 0.0;
                for (int64_t k = 0; k < c; ++k) {
                    s += fa[k][y][x] * va[i][k][y][x];
                }
                scores[static_cast<std::size_t>(i)] = s;
                best = std::max(best, s);
            }
            double total = 0.0;
            for (auto &s : scores) {
                s = std::exp(s - best);
                total += s;
            }
            for (int64_t i = 0; i < d; ++i) {
                oa[i][y][x] = scores[static_cast<std::size_t>(i)] / total;
            }
        }
    }
    return out;
}

struct GradientCheck {
    double relative_error = 0.0; // ||g_auto - g_fd||_2 / ||g_fd||_2 over probed entries
    double fd_norm = 0.0;
    int64_t probes = 0;
};

// Compares autograd against central differences of a scalar function at up
// to `max_probes` entries of `input` (double precision expected).
inline GradientCheck check_gradient(const std::function<torch::Tensor(const torch::Tensor &)> &fn,
                                    const torch::Tensor &input, int64_t max_probes = 64,
                                    double eps = 1e-6, uint64_t seed = 0) {
    auto x = input.detach().clone().set_requires_grad(true);
    fn(x).backward();
    const auto g_auto = x.grad().detach().flatten();

    const int64_t n = input.numel();
    std::vector<int64_t> indices;
    if (n <= max_probes) {
        for (int64_t i = 0; i < n; ++i) {
            indices.push_back(i);
        }
    } else {
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<int64_t> pick(0, n - 1);
        for (int64_t i = 0; i < max_probes; ++i) {
            indices.push_back(pick(rng));
        }
    }
    torch::NoGradGuard no_grad;
    double diff2 = 0.0, ref2 = 0.0;
    for (const auto idx : indices) {
        auto plus = input.detach().clone();
        auto minus = input.detach().clone();
        plus.view({-1})[idx] += eps;
        minus.view({-1})[idx] -= eps;
        const double fd = (fn(plus).item<double>() - fn(minus).item<double>()) / (2.0 * eps);
        const double ad = g_auto[idx].item<double>();
        diff2 += (fd - ad) * (fd - ad);
        ref2 += fd * fd;
    }
    GradientCheck out;
    out.fd_norm = std::sqrt(ref2);
    out.relative_error = std::sqrt(diff2) / std::max(out.fd_norm, 1e-300);
    out.probes = static_cast<int64_t>(indices.size());
    return out;
}

// Pinhole camera with square pixels and a centered principal point.
inline geometry::CameraCalibration make_camera(double focal, int64_t width, int64_t height) {
    geometry::CameraCalibration cam;
    cam.intrinsics << focal, 0.0, 0.5 * static_cast<double>(width - 1), 0.0, focal,
        0.5 * static_cast<double>(height - 1), 0.0, 0.0, 1.0;
    cam.width = width;
    cam.height = height;
    return cam;
}

// Tiny model used by gradient checks and fast trainer tests.
inline model::ModelConfig tiny_config(int64_t h = 8, int64_t w = 8, int64_t d = 3, int64_t beta = 4) {
    model::ModelConfig m;
    m.h = h;
    m.w = w;
    m.d = d;
    m.beta = beta;
    m.attention_scale = 2;
    m.guided_levels = beta == 4 ? 1 : (beta == 8 ? 2 : 0);
    if (beta == 2) {
        m.attention_scale = 2;
        m.guided_levels = 0;
    }
    m.feature_channels = 4;
    m.guided_channels = 4;
    m.guided_res_blocks = 1;
    m.fusenet_blocks = 1;
    m.fusenet_channels = 4;
    m.near = 1.0;
    m.far = 8.0;
    return m;
}

// Random tuple matching `config`. The reference camera is shifted by
// `baseline` along x; zero gives a zero-baseline pair with I_Ref == I_GT.
inline data::TrainingTuple random_tuple(const model::ModelConfig &config, double baseline,
                                        uint64_t seed = 0,
                                        torch::ScalarType dtype = torch::kDouble) {
    auto gen = at::detail::createCPUGenerator(seed);
    const auto opts = torch::TensorOptions().dtype(dtype);
    const int64_t hh = config.hr_height(), hw = config.hr_width();
    data::TrainingTuple t;
    t.gt = torch::rand({config.c, hh, hw}, gen, opts) * 0.5 + 0.25;
    t.ref = baseline == 0.0 ? t.gt.clone() : torch::rand({config.c, hh, hw}, gen, opts) * 0.5 + 0.25;
    t.lr = torch::rand({config.c, config.h, config.w}, gen, opts) * 0.5 + 0.25;
    const auto hr_cam = make_camera(static_cast<double>(hw), hw, hh);
    t.c_lr = hr_cam.rescaled(config.w, config.h);
    t.c_ref = hr_cam;
    t.c_ref.translation = Eigen::Vector3d(baseline, 0.0, 0.0);
    t.frame_difference = baseline == 0.0 ? 0 : 1;
    return t;
}

// Attention-scale scene with a single fronto-parallel plane at `plane_index`
// whose disparity between the two views is exactly `shift` pixels. With
// attention scale == beta the attention grid equals the reference grid, so the
// LR view is the reference translated by an integer number of columns (zero
// where the plane leaves the reference frustum).
struct ExactPlaneScene {
    geometry::PlaneSweepVolume psv_attention;
    torch::Tensor i_lr_attention; // [c, H, W]
    int64_t plane_index = 0;
};

inline ExactPlaneScene exact_plane_scene(int64_t size = 16, int64_t d = 4, int64_t plane_index = 1,
                                         int64_t shift = 2, uint64_t seed = 3) {
    auto gen = at::detail::createCPUGenerator(seed);
    const auto ref = torch::rand({3, size, size}, gen, torch::TensorOptions().dtype(torch::kDouble));
    const auto planes = geometry::sample_depth_planes(1.0, 8.0, d);
    const double focal = static_cast<double>(size);
    const double depth = planes.depths[static_cast<std::size_t>(plane_index)];

    const auto hr_cam = make_camera(focal, size, size);
    auto c_ref = hr_cam;
    // A camera at world-to-camera t = (b, 0, 0) sees a point at depth z
    // f * b / z pixels further right than the identity camera.
    c_ref.translation = Eigen::Vector3d(static_cast<double>(shift) * depth / focal, 0.0, 0.0);
    const auto c_lr = hr_cam.rescaled(size / 2, size / 2);

    ExactPlaneScene scene;
    scene.plane_index = plane_index;
    scene.psv_attention = geometry::build_plane_sweep_volume(ref, c_lr, c_ref, planes, size, size,
                                                            geometry::SweepResolution::Attention);
    scene.i_lr_attention = torch::zeros_like(ref);
    scene.i_lr_attention.slice(2, 0, size - shift).copy_(ref.slice(2, shift, size));
    return scene;
}

} // namespace crossmpi::testing
