// Copyright Contributors to the crossmpi project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "crossmpi/checkpoint.hpp"
#include "crossmpi/config.hpp"
#include "crossmpi/data.hpp"
#include "crossmpi/losses.hpp"
#include "crossmpi/model.hpp"
#include "crossmpi/tuple.hpp"

#include <torch/nn.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace crossmpi::train {

using TuplePtr = std::shared_ptr<const data::TrainingTuple>;

// Supplies training tuples. Draws are a pure function of their arguments so
// a run is reproducible and resumable without saving sampler state.
class DataSource {
public:
    virtual ~DataSource() = default;
    virtual TuplePtr draw(uint64_t seed, int stage, int64_t iteration, int64_t batch_index) = 0;
    // Tuple kept out of training for the periodic PSNR log.
    virtual TuplePtr held_out() = 0;
};

// Cycles through a fixed list of tuples in a seeded order.
class FixedSource final : public DataSource {
public:
    FixedSource(std::vector<TuplePtr> tuples, TuplePtr held_out);
    TuplePtr draw(uint64_t seed, int stage, int64_t iteration, int64_t batch_index) override;
    TuplePtr held_out() override { return held_out_; }

private:
    std::vector<TuplePtr> tuples_;
    TuplePtr held_out_;
};

// Random frame pairs from root/sequences/*.txt with frames in
// root/frames/<sequence id>/<frame id>.png; frame differences are drawn
// uniformly from [diff_min, diff_max].
class SequenceSource final : public DataSource {
public:
    SequenceSource(const std::filesystem::path &root, const model::ModelConfig &config,
                   int64_t diff_min, int64_t diff_max);
    TuplePtr draw(uint64_t seed, int stage, int64_t iteration, int64_t batch_index) override;
    TuplePtr held_out() override { return held_out_; }

private:
    std::filesystem::path root_;
    model::ModelConfig config_;
    int64_t diff_min_;
    int64_t diff_max_;
    std::vector<data::SequenceRecord> records_;
    TuplePtr held_out_;
};

// Builds the source named by the data section. Fails with DataError before
// touching the file system for writing.
std::unique_ptr<DataSource> make_data_source(const config::RunConfig &config);

// Stateless counter-based mixing used for data order.
uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b, uint64_t c);

struct LossRecord {
    int stage = 0;
    int64_t iteration = 0; // 1-based count of completed iterations in the stage
    double loss = 0.0;
    double l_is = 0.0;
    double l_transfer = 0.0; // stage 2: L1(T_Ref, I_GT)
    double l_rec = 0.0;      // stage 3
    double l_per = 0.0;      // stage 3
    std::optional<double> heldout_psnr;
};

struct StageResult {
    int stage = 0;
    std::vector<LossRecord> history; // every iteration run by this call
    bool complete = false;
    // Stage 3 only: parameters whose gradient was zero on every batch.
    std::vector<std::string> dead_parameters;
};

struct TrainerOptions {
    // Stop after this many iterations within the current call (<0: run to the end).
    int64_t stop_after = -1;
    // Write checkpoints and the JSONL log into config.output_dir.
    bool write_files = true;
    std::function<void(const LossRecord &)> on_record;
};

// Owns the model and drives the three training stages:
//   1. shared feature extractor under the internal supervision loss;
//   2. adds the guided upsampler, L1(T_Ref, I_GT) + lambda_is * L_is;
//   3. every parameter under the weighted total loss.
class Trainer {
public:
    Trainer(config::RunConfig config, std::unique_ptr<DataSource> source,
            std::shared_ptr<losses::PerceptualBackbone> backbone = nullptr,
            TrainerOptions options = {});

    // Stage n > 1 needs `prior` to be a completed stage n-1 checkpoint; a
    // stage-n checkpoint that is not complete resumes where it stopped.
    StageResult run_stage(int stage, const data::Checkpoint *prior = nullptr);

    // Runs stages in order starting from `resume` (or from scratch) and
    // returns the final state. Stops early when stop_after is reached.
    data::Checkpoint run(const data::Checkpoint *resume = nullptr);

    data::Checkpoint snapshot() const;
    model::CrossMpiNet &model() { return model_; }
    const config::RunConfig &config() const { return config_; }
    const std::vector<StageResult> &results() const { return results_; }

    // Trainable parameters of a stage, keyed by module path.
    std::map<std::string, torch::Tensor> stage_parameters(int stage) const;

    static std::filesystem::path stage_checkpoint_path(const std::filesystem::path &dir, int stage);
    static std::filesystem::path log_path(const std::filesystem::path &dir);

private:
    struct Components {
        torch::Tensor loss;
        torch::Tensor l_is, l_transfer, l_rec, l_per;
    };
    const model::PreparedInputs &prepared(const TuplePtr &tuple);
    Components stage_loss(int stage, const data::TrainingTuple &tuple,
                          const model::PreparedInputs &inputs);
    double heldout_psnr();
    void write_log(const LossRecord &record);
    void dump_nonfinite(int stage, int64_t iteration, const data::TrainingTuple &tuple,
                        const std::string &what);

    config::RunConfig config_;
    std::unique_ptr<DataSource> source_;
    std::shared_ptr<losses::PerceptualBackbone> backbone_;
    TrainerOptions options_;
    model::CrossMpiNet model_{nullptr};
    std::vector<std::pair<TuplePtr, std::shared_ptr<model::PreparedInputs>>> cache_;
    std::vector<StageResult> results_;
    std::map<std::string, torch::Tensor> optimizer_state_;
    int stage_ = 0;
    int64_t iteration_ = 0;
    bool stage_complete_ = false;
    int64_t budget_used_ = 0;
};

} // namespace crossmpi::train
