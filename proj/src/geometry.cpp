// Copyright Contributors to the crossmpi project
// SPDX-License-Identifier: Apache-2.0

#include "crossmpi/geometry.hpp"

#include "crossmpi/errors.hpp"

#include <Eigen/LU>
#include <torch/torch.h>

#include <array>
#include <cmath>
#include <sstream>

namespace crossmpi::geometry {

namespace {

constexpr double kMinDepth = 1e-12;
constexpr double kMinDeterminant = 1e-12;

} // namespace

void CameraCalibration::validate() const {
    if (width < 1 || height < 1) {
        throw InvalidArgument("camera image size must be positive");
    }
    const auto &k = intrinsics;
    if (k(1, 0) != 0.0 || k(2, 0) != 0.0 || k(2, 1) != 0.0) {
        throw InvalidArgument("camera intrinsics must be upper triangular");
    }
    if (!(k(0, 0) > 0.0 && k(1, 1) > 0.0 && k(2, 2) > 0.0)) {
        throw InvalidArgument("camera intrinsics must have a positive diagonal");
    }
    if (!intrinsics.allFinite() || !rotation.allFinite() || !translation.allFinite()) {
        throw InvalidArgument("camera calibration contains non-finite values");
    }
    const double ortho_err =
        (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (ortho_err > 1e-6 || std::abs(rotation.determinant() - 1.0) > 1e-6) {
        std::ostringstream msg;
        msg << "camera rotation is not a proper rotation (orthonormality error " << ortho_err
            << ", determinant " << rotation.determinant() << ")";
        throw InvalidArgument(msg.str());
    }
}

CameraCalibration CameraCalibration::rescaled(int64_t new_width, int64_t new_height) const {
    if (new_width < 1 || new_height < 1) {
        throw InvalidArgument("rescaled camera size must be positive");
    }
    CameraCalibration out = *this;
    if (new_width == width && new_height == height) {
        return out;
    }
    const double sx = static_cast<double>(new_width) / static_cast<double>(width);
    const double sy = static_cast<double>(new_height) / static_cast<double>(height);
    const Eigen::Matrix3d k = intrinsics / intrinsics(2, 2);
    out.intrinsics = Eigen::Matrix3d::Identity();
    out.intrinsics(0, 0) = k(0, 0) * sx;
    out.intrinsics(0, 1) = k(0, 1) * sx;
    out.intrinsics(0, 2) = (k(0, 2) + 0.5) * sx - 0.5;
    out.intrinsics(1, 1) = k(1, 1) * sy;
    out.intrinsics(1, 2) = (k(1, 2) + 0.5) * sy - 0.5;
    out.width = new_width;
    out.height = new_height;
    return out;
}

Eigen::Vector2d Homography::apply(double u, double v) const {
    const Eigen::Vector3d p = matrix * Eigen::Vector3d(u, v, 1.0);
    return {p.x() / p.z(), p.y() / p.z()};
}

DepthPlaneSet sample_depth_planes(double near, double far, int64_t count) {
    if (!(near > 0.0) || !std::isfinite(near)) {
        throw InvalidArgument("near depth must be positive");
    }
    if (!(far > near) || !std::isfinite(far)) {
        throw InvalidArgument("far depth must exceed near depth");
    }
    if (count < 2) {
        throw InvalidArgument("at least two depth planes are required");
    }
    DepthPlaneSet set;
    set.near = near;
    set.far = far;
    set.depths.resize(static_cast<std::size_t>(count));
    const double inv_near = 1.0 / near;
    const double inv_far = 1.0 / far;
    for (int64_t i = 0; i < count; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(count - 1);
        set.depths[static_cast<std::size_t>(i)] = 1.0 / (inv_near + t * (inv_far - inv_near));
    }
    // Pin the endpoints so they are exact rather than a reciprocal round trip.
    set.depths.front() = near;
    set.depths.back() = far;
    return set;
}

Homography plane_homography(const CameraCalibration &source, const CameraCalibration &target,
                            double depth) {
    if (!(std::abs(depth) > kMinDepth) || !std::isfinite(depth)) {
        throw InvalidArgument("plane depth must be nonzero and finite");
    }
    if (depth < 0.0) {
        throw InvalidArgument("plane depth must be positive");
    }
    source.validate();
    target.validate();

    // Relative pose taking target-frame points into the source frame.
    const Eigen::Matrix3d r_rel = source.rotation * target.rotation.transpose();
    const Eigen::Vector3d t_rel = source.translation - r_rel * target.translation;
    const Eigen::Vector3d normal(0.0, 0.0, 1.0);

    // Points on n^T X = depth satisfy X_src = (R + t n^T / depth) X_tgt.
    const Eigen::Matrix3d plane_map = r_rel + t_rel * normal.transpose() / depth;
    Homography h;
    h.matrix = source.intrinsics * plane_map * target.intrinsics.inverse();
    if (std::abs(h.matrix(2, 2)) > kMinDeterminant) {
        h.matrix /= h.matrix(2, 2);
    }
    return h;
}

torch::Tensor warp_image(const torch::Tensor &image, const Homography &h, int64_t out_width,
                         int64_t out_height) {
    if (!image.defined() || image.dim() != 3 || image.numel() == 0) {
        throw InvalidArgument("warp_image expects a nonempty [c, H, W] image");
    }
    if (out_width < 1 || out_height < 1) {
        throw InvalidArgument("warp_image output size must be positive");
    }
    if (!(std::abs(h.matrix.determinant()) > kMinDeterminant) || !h.matrix.allFinite()) {
        throw InvalidArgument("warp_image requires an invertible homography");
    }

    const int64_t channels = image.size(0);
    const int64_t in_h = image.size(1);
    const int64_t in_w = image.size(2);
    const int64_t n = out_width * out_height;

    // Four bilinear taps per output pixel; invalid taps keep index 0, weight 0.
    auto index = torch::zeros({4, n}, torch::kLong);
    auto weight = torch::zeros({4, n}, torch::kDouble);
    auto idx = index.accessor<int64_t, 2>();
    auto wgt = weight.accessor<double, 2>();

    const Eigen::Matrix3d &m = h.matrix;
    for (int64_t v = 0; v < out_height; ++v) {
        for (int64_t u = 0; u < out_width; ++u) {
            const int64_t p = v * out_width + u;
            const double ud = static_cast<double>(u);
            const double vd = static_cast<double>(v);
            const double hx = m(0, 0) * ud + m(0, 1) * vd + m(0, 2);
            const double hy = m(1, 0) * ud + m(1, 1) * vd + m(1, 2);
            const double hz = m(2, 0) * ud + m(2, 1) * vd + m(2, 2);
            if (!(hz > kMinDepth)) {
                continue;
            }
            const double x = hx / hz;
            const double y = hy / hz;
            if (!(x > -1.0 && y > -1.0 && x < static_cast<double>(in_w) &&
                  y < static_cast<double>(in_h))) {
                continue;
            }
            const double x0 = std::floor(x);
            const double y0 = std::floor(y);
            const double fx = x - x0;
            const double fy = y - y0;
            const std::array<int64_t, 4> xs{static_cast<int64_t>(x0), static_cast<int64_t>(x0) + 1,
                                            static_cast<int64_t>(x0),
                                            static_cast<int64_t>(x0) + 1};
            const std::array<int64_t, 4> ys{static_cast<int64_t>(y0), static_cast<int64_t>(y0),
                                            static_cast<int64_t>(y0) + 1,
                                            static_cast<int64_t>(y0) + 1};
            const std::array<double, 4> ws{(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy),
                                           (1.0 - fx) * fy, fx * fy};
            for (int k = 0; k < 4; ++k) {
                if (xs[k] < 0 || ys[k] < 0 || xs[k] >= in_w || ys[k] >= in_h) {
                    continue;
                }
                idx[k][p] = ys[k] * in_w + xs[k];
                wgt[k][p] = ws[k];
            }
        }
    }

    const auto flat = image.reshape({channels, in_h * in_w});
    const auto w = weight.to(image.scalar_type());
    auto out = flat.index_select(1, index[0]) * w[0];
    for (int k = 1; k < 4; ++k) {
        out = out + flat.index_select(1, index[k]) * w[k];
    }
    return out.reshape({channels, out_height, out_width});
}

PlaneSweepVolume build_plane_sweep_volume(const torch::Tensor &reference,
                                          const CameraCalibration &c_lr,
                                          const CameraCalibration &c_ref,
                                          const DepthPlaneSet &planes, int64_t out_height,
                                          int64_t out_width, SweepResolution tag) {
    if (planes.depths.empty()) {
        throw InvalidArgument("plane sweep needs at least one depth plane");
    }
    if (!reference.defined() || reference.dim() != 3) {
        throw InvalidArgument("plane sweep reference must be a [c, H, W] image");
    }
    if (reference.size(1) != c_ref.height || reference.size(2) != c_ref.width) {
        std::ostringstream msg;
        msg << "reference image is " << reference.size(2) << "x" << reference.size(1)
            << " but its calibration describes " << c_ref.width << "x" << c_ref.height;
        throw InvalidArgument(msg.str());
    }
    const CameraCalibration target = c_lr.rescaled(out_width, out_height);
    std::vector<torch::Tensor> slices;
    slices.reserve(planes.size());
    for (const double depth : planes.depths) {
        const Homography h = plane_homography(c_ref, target, depth);
        slices.push_back(warp_image(reference, h, out_width, out_height));
    }
    return PlaneSweepVolume{torch::stack(slices), tag};
}

} // namespace crossmpi::geometry
