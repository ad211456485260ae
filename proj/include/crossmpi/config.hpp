// Copyright Contributors to the crossmpi project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "crossmpi/losses.hpp"
#include "crossmpi/model.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace crossmpi::config {

// Optimizer and length of one training stage.
struct StageSettings {
    int64_t iterations = 2000;
    double learning_rate = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    int64_t batch_size = 1;
    bool operator==(const StageSettings &) const = default;
};

// Three stages run in order: initial alphas, guided upsampling, full network.
struct TrainSchedule {
    std::array<StageSettings, 3> stages{StageSettings{2000}, StageSettings{1000}, StageSettings{2000}};
    // Keep the shared feature extractor fixed while the upsampler trains.
    bool freeze_features_in_stage2 = false;

    static TrainSchedule desk();
    static TrainSchedule full(); // 816.2k / 326k / 472k iterations

    const StageSettings &stage(int index) const; // index 1..3
    void validate() const;
    bool operator==(const TrainSchedule &) const = default;
};

enum class DataKind { Synthetic, Sequences, OpticalZoom };

struct DataConfig {
    DataKind kind = DataKind::Synthetic;
    // Synthetic scenes: single_plane, two_plane or zero_baseline.
    std::string preset = "two_plane";
    uint64_t texture_seed = 7;
    // Root directory for sequences (root/sequences/*.txt, root/frames/<id>/<frame>.png)
    // or an optical-zoom scene. Empty falls back to $CROSSMPI_DATA_ROOT.
    std::filesystem::path root;
    int64_t frame_diff_min = 1;
    int64_t frame_diff_max = 10;
    std::vector<int64_t> eval_frame_diffs{9, 11, 15, 19, 23};
};

struct RunConfig {
    model::ModelConfig model;
    TrainSchedule schedule;
    losses::LossWeights loss_weights;
    losses::VggOptions perceptual;
    DataConfig data;
    std::filesystem::path output_dir = "run";
    uint64_t seed = 0;
    int64_t log_every = 100;
    int64_t checkpoint_every = 500;

    // Throws ConfigError naming the offending field.
    void validate() const;
};

const char *to_string(DataKind kind);

// Strict JSON parsing: unknown keys and wrongly typed values are errors.
// Missing keys keep their defaults.
RunConfig parse_run_config(const std::string &text, const std::string &source = "<memory>");
RunConfig load_run_config(const std::filesystem::path &path);
std::string dump_run_config(const RunConfig &config);

// ModelConfig <-> JSON text, used inside checkpoints.
std::string dump_model_config(const model::ModelConfig &config);
model::ModelConfig parse_model_config(const std::string &text, const std::string &source = "<memory>");

// Names of fields whose values differ, in declaration order.
std::vector<std::string> model_config_differences(const model::ModelConfig &a,
                                                  const model::ModelConfig &b);

// Data root after applying the environment default.
std::filesystem::path resolve_data_root(const DataConfig &data);

} // namespace crossmpi::config
