// Copyright Contributors to the crossmpi project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

// Command implementations behind the `crossmpi` executable. Every command
// validates all of its inputs before creating the output directory, prints
// "error: ..." on failure and returns a nonzero exit code.
namespace crossmpi::cli {

struct TrainArgs {
    std::filesystem::path config;
    std::optional<std::filesystem::path> out;
    std::optional<uint64_t> seed;
    std::optional<int64_t> beta;
    std::optional<int64_t> planes;
    std::optional<std::vector<int64_t>> frame_diffs; // training range: min and max of the list
    std::optional<std::filesystem::path> checkpoint; // resume point
};

struct InferArgs {
    std::filesystem::path checkpoint;
    std::filesystem::path lr;
    std::filesystem::path ref;
    std::filesystem::path calibration; // "lr"/"ref" camera file
    std::filesystem::path out;
    bool alphas = false; // also write alpha_<i>.png per plane
};

enum class EvalMode { Model, Bicubic, Oracle };

struct EvalArgs {
    std::optional<std::filesystem::path> checkpoint;
    std::optional<std::filesystem::path> config; // sizes when no checkpoint is given
    std::filesystem::path data;                  // empty: $CROSSMPI_DATA_ROOT
    std::vector<int64_t> frame_diffs{9, 11, 15, 19, 23};
    std::optional<std::filesystem::path> out;
    std::optional<int64_t> beta;
    EvalMode mode = EvalMode::Model;
};

struct DebugPsvArgs {
    std::filesystem::path lr;
    std::filesystem::path ref;
    std::filesystem::path calibration;
    std::filesystem::path out;
    int64_t planes = 32;
    double near = 1.0;
    double far = 100.0;
    std::optional<int64_t> beta;
};

int cmd_train(const TrainArgs &args, std::ostream &out, std::ostream &err);
int cmd_infer(const InferArgs &args, std::ostream &out, std::ostream &err);
int cmd_eval(const EvalArgs &args, std::ostream &out, std::ostream &err);
int cmd_debug_psv(const DebugPsvArgs &args, std::ostream &out, std::ostream &err);

// Parses argv (argv[0] is the program name) and dispatches.
int run(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

// File name of plane slice i in debug-psv output.
std::string psv_slice_name(std::size_t index, double depth);

} // namespace crossmpi::cli
