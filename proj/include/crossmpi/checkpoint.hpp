// Copyright Contributors to the crossmpi project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "crossmpi/model.hpp"

#include <torch/nn.h>
#include <torch/optim.h>
#include <torch/types.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace crossmpi::data {

inline constexpr int64_t kCheckpointFormatVersion = 1;

// Everything needed to resume training or run inference. Stored as one
// safetensors file: parameters under "param/<name>", Adam moments under
// "optim/<name>/{exp_avg,exp_avg_sq,step}", the torch generator under
// "rng/torch" and the scalars plus the model config in the metadata table.
struct Checkpoint {
    int64_t format_version = kCheckpointFormatVersion;
    model::ModelConfig config;
    std::map<std::string, torch::Tensor> parameters;
    std::map<std::string, torch::Tensor> optimizer_state;
    int stage = 0;           // 0 before training, then 1..3
    int64_t iteration = 0;   // iterations completed within `stage`
    bool stage_complete = false;
    uint64_t seed = 0;
    torch::Tensor rng_state; // optional
};

void save_checkpoint(const Checkpoint &state, const std::filesystem::path &path);

// Throws CheckpointError on corruption, missing keys, a different format
// version (naming both) or, when `expected` is given, a model config that
// differs from it (naming the fields).
Checkpoint load_checkpoint(const std::filesystem::path &path,
                           const model::ModelConfig *expected = nullptr);

// Detached copies of every named parameter.
std::map<std::string, torch::Tensor> collect_parameters(const torch::nn::Module &module);

// Copies values into the module. The name sets must match exactly.
void apply_parameters(torch::nn::Module &module, const std::map<std::string, torch::Tensor> &values);

// Adam moments keyed "<param>/exp_avg", "<param>/exp_avg_sq" and "<param>/step".
// Parameters the optimizer has not stepped yet are omitted.
std::map<std::string, torch::Tensor>
capture_adam_state(torch::optim::Adam &optimizer,
                   const std::map<std::string, torch::Tensor> &named_parameters);
void restore_adam_state(torch::optim::Adam &optimizer,
                        const std::map<std::string, torch::Tensor> &named_parameters,
                        const std::map<std::string, torch::Tensor> &state);

} // namespace crossmpi::data
