// Copyright Contributors to the crossmpi project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "crossmpi/geometry.hpp"
#include "crossmpi/tuple.hpp"

#include <Eigen/Core>
#include <torch/types.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace crossmpi::data {

// Intrinsics as fractions of image width (fx, cx) and height (fy, cy).
struct NormalizedIntrinsics {
    double fx = 0.0;
    double fy = 0.0;
    double cx = 0.0;
    double cy = 0.0;
};

struct FrameEntry {
    int64_t frame_id = 0;
    NormalizedIntrinsics intrinsics;
    Eigen::Matrix<double, 3, 4> pose = Eigen::Matrix<double, 3, 4>::Zero(); // world-to-camera [R|t]
};

struct SequenceRecord {
    std::string id;     // file stem
    std::string source; // header line
    std::vector<FrameEntry> frames;
};

// Camera-trajectory text layout: a header line, then one line per frame with
// 19 fields: timestamp, fx fy cx cy (normalized), two unused zeros, and the
// 3x4 world-to-camera pose row-major. Blank lines are ignored. Any failure is
// a ParseError naming the line.
SequenceRecord parse_sequence_text(std::string_view text, const std::string &id,
                                   const std::string &source_name = "<memory>");
SequenceRecord parse_sequence_file(const std::filesystem::path &path);

// Pixel-space calibration of a frame decoded at width x height. The rotation
// is projected onto the nearest proper rotation to absorb print rounding.
geometry::CameraCalibration frame_calibration(const FrameEntry &frame, int64_t width,
                                              int64_t height);

// PNG in (8 or 16 bit, gray/RGB, alpha dropped) as an RGB [3, H, W] float
// tensor in [0, 1]. PNG out at 8 or 16 bits; 1- or 3-channel tensors.
torch::Tensor load_png(const std::filesystem::path &path);
void save_png(const std::filesystem::path &path, const torch::Tensor &image, int bit_depth = 8);

struct CalibratedImage {
    torch::Tensor image;
    geometry::CameraCalibration calibration;
};

// Center crop to the aspect ratio of out_width x out_height, then bicubic
// resize; the calibration follows in closed form.
CalibratedImage center_crop_resize(const CalibratedImage &input, int64_t out_height,
                                   int64_t out_width);

// Frames are read from frames_dir/<frame_id>.png. out_height/out_width is the
// ground-truth (reference) resolution and must be divisible by beta.
TrainingTuple assemble_tuple(const SequenceRecord &record, const std::filesystem::path &frames_dir,
                             std::size_t target_index, std::size_t ref_index, int64_t beta,
                             int64_t out_height, int64_t out_width);

struct CameraPair {
    geometry::CameraCalibration lr;
    geometry::CameraCalibration ref;
};

// Two lines, "lr" and "ref", each: width height fx fy cx cy r11..r33 t1 t2 t3
// (pixel intrinsics at that camera's native size, world-to-camera pose).
CameraPair parse_pair_calibration(const std::filesystem::path &path);
void write_pair_calibration(const std::filesystem::path &path, const CameraPair &pair);

// scene_dir/{wide,tele}/NNNN.png plus scene_dir/calibration.txt holding
//   beta <b>
//   size <width> <height>
//   pair <index> <wide fx fy cx cy> <tele fx fy cx cy> <r11..r33> <t1 t2 t3>
// The wide image is ground truth (its camera defines the world frame) and the
// telephoto image is the reference.
TrainingTuple load_optical_zoom_pair(const std::filesystem::path &scene_dir,
                                     std::size_t pair_index);
std::vector<std::size_t> optical_zoom_pair_indices(const std::filesystem::path &scene_dir);

} // namespace crossmpi::data
