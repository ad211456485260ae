// Copyright Contributors to the crossmpi project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <torch/types.h>

#include <cstdint>
#include <vector>

namespace crossmpi::geometry {

// Pinhole camera. Intrinsics are expressed in pixel-index coordinates of the
// camera's native resolution (pixel centers at integer coordinates); the pose
// maps world points into the camera frame, X_cam = R * X_world + t.
struct CameraCalibration {
    Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    int64_t width = 1;
    int64_t height = 1;

    // Throws InvalidArgument when the intrinsics are not upper triangular with
    // a positive diagonal, the rotation is not orthonormal, or the size is empty.
    void validate() const;

    // Same camera observed at a different image resolution. Focal lengths and
    // principal point are rescaled in closed form, so no resampling is implied.
    CameraCalibration rescaled(int64_t new_width, int64_t new_height) const;

    // World-space position of the optical center.
    Eigen::Vector3d center() const { return -rotation.transpose() * translation; }
};

struct DepthPlaneSet {
    std::vector<double> depths; // front to back
    double near = 0.0;
    double far = 0.0;

    std::size_t size() const { return depths.size(); }
};

// 3x3 map from target-view pixel coordinates to source-view pixel coordinates.
struct Homography {
    Eigen::Matrix3d matrix = Eigen::Matrix3d::Identity();

    Eigen::Vector2d apply(double u, double v) const;
};

enum class SweepResolution { HR, LR, Attention };

// d reference-view images resampled onto d depth hypotheses of the target
// view. images: [d, c, H, W].
struct PlaneSweepVolume {
    torch::Tensor images;
    SweepResolution resolution = SweepResolution::HR;

    int64_t planes() const { return images.size(0); }
    int64_t channels() const { return images.size(1); }
    int64_t height() const { return images.size(2); }
    int64_t width() const { return images.size(3); }
};

// Planes spaced uniformly in inverse depth between near and far (inclusive).
DepthPlaneSet sample_depth_planes(double near, double far, int64_t count);

// Homography induced by the plane fronto-parallel to `target` at `depth`.
// Sampling the source image at H * (u, v, 1) renders that plane as seen from
// the target camera. The result is normalized so that H(2,2) = 1 when nonzero.
Homography plane_homography(const CameraCalibration &source, const CameraCalibration &target,
                            double depth);

// Inverse warp with bilinear sampling. image: [c, H, W]. Output pixel (u, v)
// reads the input at H * (u, v, 1) after perspective division; taps outside
// the image contribute zero. Differentiable with respect to `image`.
torch::Tensor warp_image(const torch::Tensor &image, const Homography &h, int64_t out_width,
                         int64_t out_height);

// Warps `reference` (seen by c_ref) onto every plane of `planes`, which are
// fronto-parallel in the c_lr frame. c_lr is rescaled to out_size first.
PlaneSweepVolume build_plane_sweep_volume(const torch::Tensor &reference,
                                          const CameraCalibration &c_lr,
                                          const CameraCalibration &c_ref,
                                          const DepthPlaneSet &planes, int64_t out_height,
                                          int64_t out_width,
                                          SweepResolution tag = SweepResolution::HR);

} // namespace crossmpi::geometry
