// Copyright Contributors to the crossmpi project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "crossmpi/geometry.hpp"

#include <torch/types.h>

#include <cstdint>

namespace crossmpi::data {

// One cross-scale sample: a low-resolution view, a high-resolution reference,
// both calibrations, and the high-resolution ground truth of the LR view.
// c_lr is expressed at the LR resolution, c_ref at the reference resolution.
struct TrainingTuple {
    torch::Tensor lr;  // [c, h, w]
    torch::Tensor ref; // [c, beta*h, beta*w]
    torch::Tensor gt;  // [c, beta*h, beta*w]
    geometry::CameraCalibration c_lr;
    geometry::CameraCalibration c_ref;
    int64_t frame_difference = 0;

    // Throws DataError unless every image has the shape implied by beta and
    // the calibrations match their images.
    void validate(int64_t beta) const;

    TrainingTuple to(torch::ScalarType dtype) const;
};

} // namespace crossmpi::data
