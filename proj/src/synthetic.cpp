// Copyright Contributors to the crossmpi project
// SPDX-License-Identifier: Apache-2.0

#include "crossmpi/synthetic.hpp"

#include "crossmpi/errors.hpp"
#include "crossmpi/imaging.hpp"

#include <Eigen/LU>
#include <torch/torch.h>

#include <cmath>
#include <limits>

namespace crossmpi::synthetic {

namespace {

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

double lattice_value(int64_t ix, int64_t iy, uint64_t seed) {
    uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ static_cast<uint64_t>(ix));
    h = splitmix64(h ^ static_cast<uint64_t>(iy));
    return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
}

// Smoothly interpolated lattice noise in [0, 1] with unit cell size.
double value_noise(double x, double y, uint64_t seed) {
    const double fx = std::floor(x);
    const double fy = std::floor(y);
    const auto ix = static_cast<int64_t>(fx);
    const auto iy = static_cast<int64_t>(fy);
    const double tx = x - fx;
    const double ty = y - fy;
    const double sx = tx * tx * (3.0 - 2.0 * tx);
    const double sy = ty * ty * (3.0 - 2.0 * ty);
    const double v00 = lattice_value(ix, iy, seed);
    const double v10 = lattice_value(ix + 1, iy, seed);
    const double v01 = lattice_value(ix, iy + 1, seed);
    const double v11 = lattice_value(ix + 1, iy + 1, seed);
    const double top = v00 + sx * (v10 - v00);
    const double bottom = v01 + sx * (v11 - v01);
    return top + sy * (bottom - top);
}

// Texture on a plane, addressed in ground-truth HR pixel units so that
// every plane carries detail at the same image-space frequency.
double texture(double u, double v, uint64_t seed, int channel) {
    const uint64_t s = splitmix64(seed * 8 + static_cast<uint64_t>(channel) + 1);
    const double coarse = value_noise(u / 16.0, v / 16.0, s);
    const double mid = value_noise(u / 6.0, v / 6.0, splitmix64(s ^ 0x2545f491ULL));
    const double fine = value_noise(u / 3.0, v / 3.0, splitmix64(s ^ 0x5bd1e995ULL));
    return 0.1 + 0.8 * (0.3 * coarse + 0.35 * mid + 0.35 * fine);
}

struct Hit {
    const ScenePlane *plane = nullptr;
    double u = 0.0; // ground-truth pixel coordinates of the hit point
    double v = 0.0;
};

class RayCaster {
public:
    RayCaster(const SceneSpec &spec, const geometry::CameraCalibration &camera)
        : spec_(spec), k_gt_(spec.gt_camera.intrinsics) {
        k_inv_ = camera.intrinsics.inverse();
        r_t_ = camera.rotation.transpose();
        center_ = camera.center();
        // The world frame is the ground-truth camera frame.
        r_gt_ = spec.gt_camera.rotation;
        t_gt_ = spec.gt_camera.translation;
    }

    Hit cast(double u, double v) const {
        const Eigen::Vector3d dir = r_t_ * (k_inv_ * Eigen::Vector3d(u, v, 1.0));
        Hit best;
        double best_lambda = std::numeric_limits<double>::infinity();
        for (const auto &plane : spec_.planes) {
            // Plane: z = depth in ground-truth camera coordinates.
            const Eigen::Vector3d c_gt = r_gt_ * center_ + t_gt_;
            const Eigen::Vector3d d_gt = r_gt_ * dir;
            if (std::abs(d_gt.z()) < 1e-12) {
                continue;
            }
            const double lambda = (plane.depth - c_gt.z()) / d_gt.z();
            if (!(lambda > 0.0) || lambda >= best_lambda) {
                continue;
            }
            const Eigen::Vector3d x = c_gt + lambda * d_gt;
            const Eigen::Vector3d p = k_gt_ * (x / x.z());
            if (plane.bounded &&
                !(p.x() >= plane.x0 && p.x() < plane.x1 && p.y() >= plane.y0 && p.y() < plane.y1)) {
                continue;
            }
            best_lambda = lambda;
            best = Hit{&plane, p.x(), p.y()};
        }
        return best;
    }

private:
    const SceneSpec &spec_;
    Eigen::Matrix3d k_gt_;
    Eigen::Matrix3d k_inv_;
    Eigen::Matrix3d r_t_;
    Eigen::Vector3d center_;
    Eigen::Matrix3d r_gt_;
    Eigen::Vector3d t_gt_;
};

geometry::CameraCalibration square_camera(double focal, int64_t width, int64_t height) {
    geometry::CameraCalibration cam;
    cam.intrinsics << focal, 0.0, 0.5 * static_cast<double>(width - 1), 0.0, focal,
        0.5 * static_cast<double>(height - 1), 0.0, 0.0, 1.0;
    cam.width = width;
    cam.height = height;
    return cam;
}

} // namespace

double preset_baseline(const model::ModelConfig &config) {
    // One attention-scale pixel of disparity between neighbouring planes.
    const double focal = static_cast<double>(config.hr_width());
    const double step = (1.0 / config.near - 1.0 / config.far) / static_cast<double>(config.d - 1);
    const double hr_pixels_per_plane =
        static_cast<double>(config.beta) / static_cast<double>(config.attention_scale);
    return hr_pixels_per_plane / (focal * step);
}

SceneSpec make_preset(const std::string &preset, const model::ModelConfig &config,
                      uint64_t texture_seed) {
    config.validate();
    const auto planes = config.planes();
    SceneSpec spec;
    spec.height = config.hr_height();
    spec.width = config.hr_width();
    spec.beta = config.beta;
    const double focal = static_cast<double>(spec.width);
    spec.gt_camera = square_camera(focal, spec.width, spec.height);
    spec.ref_camera = spec.gt_camera;
    spec.ref_camera.translation.x() = preset_baseline(config);

    const auto plane_at = [&](int64_t index, uint64_t salt) {
        ScenePlane p;
        p.plane_index = index;
        p.depth = planes.depths[static_cast<std::size_t>(index)];
        p.texture_seed = splitmix64(texture_seed * 131 + salt);
        return p;
    };

    if (preset == "single_plane") {
        spec.planes.push_back(plane_at(config.d / 2, 1));
    } else if (preset == "two_plane" || preset == "zero_baseline") {
        spec.planes.push_back(plane_at((3 * config.d) / 4, 1));
        auto fg = plane_at((3 * config.d) / 8, 2);
        fg.bounded = true;
        const double w = static_cast<double>(spec.width);
        const double h = static_cast<double>(spec.height);
        fg.x0 = w * 40.0 / 128.0 - 0.5;
        fg.x1 = w * 96.0 / 128.0 - 0.5;
        fg.y0 = h * 28.0 / 128.0 - 0.5;
        fg.y1 = h * 100.0 / 128.0 - 0.5;
        spec.planes.push_back(fg);
        if (preset == "zero_baseline") {
            spec.ref_camera.translation.setZero();
            spec.frame_difference = 0;
        }
    } else {
        throw InvalidArgument("unknown synthetic preset '" + preset + "'");
    }
    return spec;
}

torch::Tensor render_view(const SceneSpec &spec, const geometry::CameraCalibration &camera,
                          int supersample) {
    if (supersample < 1) {
        throw InvalidArgument("supersample must be >= 1");
    }
    camera.validate();
    const RayCaster caster(spec, camera);
    const int64_t h = camera.height;
    const int64_t w = camera.width;
    auto image = torch::zeros({3, h, w}, torch::kDouble);
    auto acc = image.accessor<double, 3>();
    const double inv = 1.0 / static_cast<double>(supersample);
    const double norm = inv * inv;
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            double sum[3] = {0.0, 0.0, 0.0};
            for (int sy = 0; sy < supersample; ++sy) {
                for (int sx = 0; sx < supersample; ++sx) {
                    const double u = static_cast<double>(x) - 0.5 + (sx + 0.5) * inv;
                    const double v = static_cast<double>(y) - 0.5 + (sy + 0.5) * inv;
                    const Hit hit = caster.cast(u, v);
                    if (hit.plane == nullptr) {
                        continue;
                    }
                    for (int c = 0; c < 3; ++c) {
                        sum[c] += texture(hit.u, hit.v, hit.plane->texture_seed, c);
                    }
                }
            }
            for (int c = 0; c < 3; ++c) {
                acc[c][y][x] = sum[c] * norm;
            }
        }
    }
    return image.to(torch::kFloat);
}

DepthRender render_depth(const SceneSpec &spec, const geometry::CameraCalibration &camera) {
    camera.validate();
    const RayCaster caster(spec, camera);
    DepthRender out;
    out.depth = torch::zeros({1, camera.height, camera.width}, torch::kDouble);
    out.plane_index = torch::full({camera.height, camera.width}, -1, torch::kLong);
    auto depth = out.depth.accessor<double, 3>();
    auto index = out.plane_index.accessor<int64_t, 2>();
    for (int64_t y = 0; y < camera.height; ++y) {
        for (int64_t x = 0; x < camera.width; ++x) {
            const Hit hit = caster.cast(static_cast<double>(x), static_cast<double>(y));
            if (hit.plane != nullptr) {
                depth[0][y][x] = hit.plane->depth;
                index[y][x] = hit.plane->plane_index;
            } else {
                depth[0][y][x] = std::numeric_limits<double>::infinity();
            }
        }
    }
    return out;
}

SyntheticScene build_scene(const SceneSpec &spec) {
    if (spec.beta < 1 || spec.width % spec.beta != 0 || spec.height % spec.beta != 0) {
        throw InvalidArgument("synthetic scene size must be divisible by beta");
    }
    SyntheticScene scene;
    scene.spec = spec;
    auto &t = scene.tuple;
    t.gt = render_view(spec, spec.gt_camera);
    t.ref = render_view(spec, spec.ref_camera);
    t.lr = imaging::resample_bicubic(t.gt, {1, spec.beta});
    t.c_lr = spec.gt_camera.rescaled(spec.width / spec.beta, spec.height / spec.beta);
    t.c_ref = spec.ref_camera;
    t.frame_difference = spec.frame_difference;
    t.validate(spec.beta);
    scene.truth = render_depth(spec, spec.gt_camera);
    return scene;
}

torch::Tensor interior_mask(const torch::Tensor &labels, int64_t radius) {
    if (labels.dim() != 2 || radius < 0) {
        throw InvalidArgument("interior_mask expects [H, W] labels and a non-negative radius");
    }
    const auto l = labels.to(torch::kLong).contiguous();
    const int64_t h = l.size(0);
    const int64_t w = l.size(1);
    auto mask = torch::zeros({h, w}, torch::kBool);
    auto m = mask.accessor<bool, 2>();
    const auto a = l.accessor<int64_t, 2>();
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            bool same = true;
            for (int64_t dy = -radius; dy <= radius && same; ++dy) {
                for (int64_t dx = -radius; dx <= radius; ++dx) {
                    const int64_t yy = std::clamp<int64_t>(y + dy, 0, h - 1);
                    const int64_t xx = std::clamp<int64_t>(x + dx, 0, w - 1);
                    if (a[yy][xx] != a[y][x]) {
                        same = false;
                        break;
                    }
                }
            }
            m[y][x] = same;
        }
    }
    return mask;
}

} // namespace crossmpi::synthetic
