// Copyright Contributors to the crossmpi project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "crossmpi/geometry.hpp"
#include "crossmpi/model.hpp"
#include "crossmpi/tuple.hpp"

#include <Eigen/Core>
#include <torch/types.h>

#include <cstdint>
#include <string>
#include <vector>

// Analytic test scenes: textured planes fronto-parallel to the ground-truth
// camera, rendered by ray casting with box-filtered supersampling. Because the
// geometry is known exactly they serve as oracles for the plane sweep, the
// compositing path and the overfit runs.
namespace crossmpi::synthetic {

struct ScenePlane {
    double depth = 1.0;
    // Index of `depth` inside the model's plane set, -1 when off-grid.
    int64_t plane_index = -1;
    // Extent in continuous pixel coordinates of the ground-truth view at HR
    // (pixel centers at integers). Unbounded planes fill the whole view.
    bool bounded = false;
    double x0 = 0.0, x1 = 0.0, y0 = 0.0, y1 = 0.0;
    uint64_t texture_seed = 0;
};

struct SceneSpec {
    int64_t height = 128; // HR size of both views
    int64_t width = 128;
    int64_t beta = 4;
    geometry::CameraCalibration gt_camera;  // world frame == ground-truth camera
    geometry::CameraCalibration ref_camera;
    std::vector<ScenePlane> planes;         // any order; closest visible wins
    int64_t frame_difference = 1;
};

// single_plane: one unbounded plane at the middle plane index.
// two_plane: an unbounded background at index 3d/4 and a foreground rectangle at
//   index 3d/8; the reference camera is displaced horizontally.
// zero_baseline: the two_plane content with the reference at the same pose.
// Focal length equals the HR width.
SceneSpec make_preset(const std::string &preset, const model::ModelConfig &config,
                      uint64_t texture_seed);

// Horizontal displacement making the HR disparity of a plane equal to
// focal * baseline / depth; used by the presets.
double preset_baseline(const model::ModelConfig &config);

// [3, cam.height, cam.width] float image in [0, 1].
torch::Tensor render_view(const SceneSpec &spec, const geometry::CameraCalibration &camera,
                          int supersample = 4);

// Per-pixel depth and plane index of the closest surface along each pixel-center ray.
struct DepthRender {
    torch::Tensor depth;       // [1, H, W] double
    torch::Tensor plane_index; // [H, W] long (-1 when the surface is off-grid)
};
DepthRender render_depth(const SceneSpec &spec, const geometry::CameraCalibration &camera);

struct SyntheticScene {
    SceneSpec spec;
    data::TrainingTuple tuple;
    DepthRender truth; // at HR in the ground-truth view
};

// Renders GT and reference, derives I_LR = bicubic(GT, 1 / beta).
SyntheticScene build_scene(const SceneSpec &spec);

// True where every pixel within `radius` (Chebyshev) carries the same label.
torch::Tensor interior_mask(const torch::Tensor &labels, int64_t radius);

} // namespace crossmpi::synthetic
