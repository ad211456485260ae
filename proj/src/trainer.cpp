// Copyright Contributors to the crossmpi project
// SPDX-License-Identifier: Apache-2.0

#include "crossmpi/trainer.hpp"

#include "crossmpi/data.hpp"
#include "crossmpi/errors.hpp"
#include "crossmpi/imaging.hpp"
#include "crossmpi/safetensors.hpp"
#include "crossmpi/synthetic.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace crossmpi::train {

namespace fs = std::filesystem;

namespace {

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

bool starts_with(const std::string &s, const std::string &prefix) { return s.rfind(prefix, 0) == 0; }

model::ForwardStage forward_stage(int stage) {
    switch (stage) {
    case 1:
        return model::ForwardStage::Attention;
    case 2:
        return model::ForwardStage::Transfer;
    default:
        return model::ForwardStage::Full;
    }
}

double scalar(const torch::Tensor &t) { return t.defined() ? t.item<double>() : 0.0; }

void check_tuple_size(const data::TrainingTuple &t, const model::ModelConfig &m,
                      const std::string &what) {
    if (t.lr.size(1) != m.h || t.lr.size(2) != m.w || t.gt.size(1) != m.hr_height() ||
        t.gt.size(2) != m.hr_width()) {
        std::ostringstream msg;
        msg << what << ": images are " << t.gt.size(2) << "x" << t.gt.size(1) << " (LR "
            << t.lr.size(2) << "x" << t.lr.size(1) << ") but the model expects " << m.hr_width()
            << "x" << m.hr_height() << " (LR " << m.w << "x" << m.h << ")";
        throw DataError(msg.str());
    }
}

} // namespace

uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b, uint64_t c) {
    uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ b);
    return splitmix64(h ^ c);
}

// ---- data sources -------------------------------------------------------------

FixedSource::FixedSource(std::vector<TuplePtr> tuples, TuplePtr held_out)
    : tuples_(std::move(tuples)), held_out_(std::move(held_out)) {
    if (tuples_.empty()) {
        throw DataError("training data source is empty");
    }
    if (!held_out_) {
        held_out_ = tuples_.back();
    }
}

TuplePtr FixedSource::draw(uint64_t seed, int stage, int64_t iteration, int64_t batch_index) {
    if (tuples_.size() == 1) {
        return tuples_.front();
    }
    const auto h = mix_seed(seed, static_cast<uint64_t>(stage), static_cast<uint64_t>(iteration),
                            static_cast<uint64_t>(batch_index));
    return tuples_[h % tuples_.size()];
}

SequenceSource::SequenceSource(const fs::path &root, const model::ModelConfig &config,
                               int64_t diff_min, int64_t diff_max)
    : root_(root), config_(config), diff_min_(diff_min), diff_max_(diff_max) {
    const auto seq_dir = root_ / "sequences";
    if (!fs::is_directory(seq_dir)) {
        throw DataError("dataset directory " + seq_dir.string() + " does not exist");
    }
    std::vector<fs::path> files;
    for (const auto &entry : fs::directory_iterator(seq_dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".txt") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    for (const auto &file : files) {
        try {
            auto record = data::parse_sequence_file(file);
            if (static_cast<int64_t>(record.frames.size()) > diff_min_) {
                records_.push_back(std::move(record));
            }
        } catch (const ParseError &e) {
            throw DataError(e.what());
        }
    }
    if (records_.empty()) {
        throw DataError("no sequence under " + seq_dir.string() + " is long enough for frame difference " +
                        std::to_string(diff_min_));
    }
    const auto &last = records_.back();
    held_out_ = std::make_shared<const data::TrainingTuple>(data::assemble_tuple(
        last, root_ / "frames" / last.id, 0, static_cast<std::size_t>(diff_min_), config_.beta,
        config_.hr_height(), config_.hr_width()));
}

TuplePtr SequenceSource::draw(uint64_t seed, int stage, int64_t iteration, int64_t batch_index) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<uint64_t>(stage), static_cast<uint64_t>(iteration),
                                 static_cast<uint64_t>(batch_index)));
    const auto &record =
        records_[std::uniform_int_distribution<std::size_t>(0, records_.size() - 1)(rng)];
    const auto n = static_cast<int64_t>(record.frames.size());
    const int64_t diff = std::uniform_int_distribution<int64_t>(diff_min_, std::min(diff_max_, n - 1))(rng);
    const int64_t target = std::uniform_int_distribution<int64_t>(0, n - 1 - diff)(rng);
    return std::make_shared<const data::TrainingTuple>(data::assemble_tuple(
        record, root_ / "frames" / record.id, static_cast<std::size_t>(target),
        static_cast<std::size_t>(target + diff), config_.beta, config_.hr_height(),
        config_.hr_width()));
}

std::unique_ptr<DataSource> make_data_source(const config::RunConfig &config) {
    const auto &data = config.data;
    switch (data.kind) {
    case config::DataKind::Synthetic: {
        const auto scene =
            synthetic::build_scene(synthetic::make_preset(data.preset, config.model, data.texture_seed));
        const auto held =
            synthetic::build_scene(synthetic::make_preset(data.preset, config.model, data.texture_seed + 1));
        return std::make_unique<FixedSource>(
            std::vector<TuplePtr>{std::make_shared<const data::TrainingTuple>(scene.tuple)},
            std::make_shared<const data::TrainingTuple>(held.tuple));
    }
    case config::DataKind::Sequences: {
        const auto root = config::resolve_data_root(data);
        if (root.empty()) {
            throw DataError("no data root given (data.root or CROSSMPI_DATA_ROOT)");
        }
        return std::make_unique<SequenceSource>(root, config.model, data.frame_diff_min,
                                                data.frame_diff_max);
    }
    case config::DataKind::OpticalZoom: {
        const auto root = config::resolve_data_root(data);
        if (root.empty()) {
            throw DataError("no data root given (data.root or CROSSMPI_DATA_ROOT)");
        }
        std::vector<TuplePtr> tuples;
        for (const auto index : data::optical_zoom_pair_indices(root)) {
            auto tuple = data::load_optical_zoom_pair(root, index);
            check_tuple_size(tuple, config.model, "optical zoom pair " + std::to_string(index));
            tuples.push_back(std::make_shared<const data::TrainingTuple>(std::move(tuple)));
        }
        if (tuples.empty()) {
            throw DataError("optical zoom scene " + root.string() + " lists no pairs");
        }
        auto held = tuples.back();
        return std::make_unique<FixedSource>(std::move(tuples), std::move(held));
    }
    }
    throw DataError("unknown data kind");
}

// ---- trainer ----------------------------------------------------------------

Trainer::Trainer(config::RunConfig config, std::unique_ptr<DataSource> source,
                 std::shared_ptr<losses::PerceptualBackbone> backbone, TrainerOptions options)
    : config_(std::move(config)), source_(std::move(source)), backbone_(std::move(backbone)),
      options_(std::move(options)) {
    config_.validate();
    if (!source_) {
        throw DataError("trainer needs a data source");
    }
    torch::manual_seed(config_.seed);
    model_ = model::CrossMpiNet(config_.model);
    model_->train();
}

fs::path Trainer::stage_checkpoint_path(const fs::path &dir, int stage) {
    return dir / ("stage" + std::to_string(stage) + ".safetensors");
}

fs::path Trainer::log_path(const fs::path &dir) { return dir / "train_log.jsonl"; }

std::map<std::string, torch::Tensor> Trainer::stage_parameters(int stage) const {
    std::vector<std::string> prefixes;
    switch (stage) {
    case 1:
        prefixes = {"sfe."};
        break;
    case 2:
        prefixes = {"guided."};
        if (!config_.schedule.freeze_features_in_stage2) {
            prefixes.push_back("sfe.");
        }
        break;
    case 3:
        prefixes = {"sfe.", "guided.", "fuse."};
        break;
    default:
        throw ScheduleError("stage must be 1, 2 or 3, got " + std::to_string(stage));
    }
    std::map<std::string, torch::Tensor> out;
    for (const auto &item : model_->named_parameters(true)) {
        for (const auto &p : prefixes) {
            if (starts_with(item.key(), p)) {
                out.emplace(item.key(), item.value());
            }
        }
    }
    return out;
}

const model::PreparedInputs &Trainer::prepared(const TuplePtr &tuple) {
    for (const auto &[t, inputs] : cache_) {
        if (t == tuple) {
            return *inputs;
        }
    }
    if (cache_.size() >= 16) {
        cache_.erase(cache_.begin());
    }
    cache_.emplace_back(tuple, std::make_shared<model::PreparedInputs>(model_->prepare(*tuple)));
    return *cache_.back().second;
}

Trainer::Components Trainer::stage_loss(int stage, const data::TrainingTuple &tuple,
                                        const model::PreparedInputs &inputs) {
    const auto &w = config_.loss_weights;
    const auto result = model_->forward(inputs, forward_stage(stage));
    Components c;
    c.l_is = losses::internal_supervision_loss(inputs.psv_attention, result.alphas_init,
                                               inputs.i_lr_attention);
    if (stage == 1) {
        c.loss = c.l_is;
        return c;
    }
    if (stage == 2) {
        c.l_transfer = losses::reconstruction_loss(result.t_ref, tuple.gt);
        c.loss = c.l_transfer + w.is * c.l_is;
        return c;
    }
    c.l_rec = losses::reconstruction_loss(result.i_sr, tuple.gt);
    if (w.per > 0.0) {
        if (!backbone_) {
            backbone_ = std::make_shared<losses::VggBackbone>(config_.perceptual);
        }
        c.l_per = losses::perceptual_loss(result.i_sr, tuple.gt, *backbone_);
    } else {
        c.l_per = torch::zeros({}, result.i_sr.options());
    }
    c.loss = losses::total_loss(c.l_rec, c.l_per, c.l_is, w);
    return c;
}

double Trainer::heldout_psnr() {
    torch::NoGradGuard no_grad;
    const auto tuple = source_->held_out();
    const auto result = model_->forward(prepared(tuple), model::ForwardStage::Full, true);
    return imaging::psnr(result.i_sr, tuple->gt);
}

void Trainer::write_log(const LossRecord &r) {
    if (!options_.write_files) {
        return;
    }
    nlohmann::ordered_json j{{"stage", r.stage},       {"iteration", r.iteration},
                             {"loss", r.loss},         {"l_is", r.l_is},
                             {"l_transfer", r.l_transfer}, {"l_rec", r.l_rec},
                             {"l_per", r.l_per}};
    if (r.heldout_psnr) {
        if (std::isfinite(*r.heldout_psnr)) {
            j["heldout_psnr"] = *r.heldout_psnr;
        } else {
            j["heldout_psnr"] = "inf";
        }
    }
    fs::create_directories(config_.output_dir);
    std::ofstream out(log_path(config_.output_dir), std::ios::app);
    out << j.dump() << '\n';
}

void Trainer::dump_nonfinite(int stage, int64_t iteration, const data::TrainingTuple &tuple,
                             const std::string &what) {
    std::ostringstream msg;
    msg << "non-finite loss in stage " << stage << " at iteration " << iteration + 1 << " (" << what
        << ")";
    if (options_.write_files) {
        safetensors::TensorFile dump;
        dump.tensors["lr"] = tuple.lr;
        dump.tensors["ref"] = tuple.ref;
        dump.tensors["gt"] = tuple.gt;
        dump.metadata["stage"] = std::to_string(stage);
        dump.metadata["iteration"] = std::to_string(iteration + 1);
        dump.metadata["error"] = what;
        dump.metadata["frame_difference"] = std::to_string(tuple.frame_difference);
        fs::create_directories(config_.output_dir);
        const auto path = config_.output_dir / ("nonfinite_stage" + std::to_string(stage) + "_iter" +
                                                std::to_string(iteration + 1) + ".safetensors");
        safetensors::save(dump, path);
        msg << "; offending batch written to " << path.string();
    }
    throw TrainingError(msg.str());
}

data::Checkpoint Trainer::snapshot() const {
    data::Checkpoint c;
    c.config = config_.model;
    c.parameters = data::collect_parameters(*model_);
    c.optimizer_state = optimizer_state_;
    c.stage = stage_;
    c.iteration = iteration_;
    c.stage_complete = stage_complete_;
    c.seed = config_.seed;
    c.rng_state = at::detail::getDefaultCPUGenerator().get_state();
    return c;
}

StageResult Trainer::run_stage(int stage, const data::Checkpoint *prior) {
    const auto &settings = config_.schedule.stage(stage);
    bool resume = false;
    if (prior != nullptr) {
        const auto diffs = config::model_config_differences(config_.model, prior->config);
        if (!diffs.empty()) {
            throw CheckpointError("checkpoint model config differs in field '" + diffs.front() + "'");
        }
        if (prior->stage == stage && !prior->stage_complete) {
            resume = true;
        } else if (!(prior->stage == stage - 1 && (prior->stage_complete || stage == 1))) {
            std::ostringstream msg;
            msg << "stage " << stage << " cannot start from a stage " << prior->stage
                << (prior->stage_complete ? " (complete)" : " (incomplete)") << " checkpoint";
            throw ScheduleError(msg.str());
        }
        data::apply_parameters(*model_, prior->parameters);
        if (prior->rng_state.defined()) {
            auto generator = at::detail::getDefaultCPUGenerator();
            generator.set_state(prior->rng_state);
        }
    } else if (stage > 1) {
        throw ScheduleError("stage " + std::to_string(stage) + " requires a completed stage " +
                            std::to_string(stage - 1) + " checkpoint");
    }

    const auto named = stage_parameters(stage);
    std::vector<torch::Tensor> params;
    for (const auto &[name, p] : named) {
        params.push_back(p);
    }
    torch::optim::Adam optimizer(
        params, torch::optim::AdamOptions(settings.learning_rate)
                    .betas(std::make_tuple(settings.beta1, settings.beta2)));
    if (resume) {
        data::restore_adam_state(optimizer, named, prior->optimizer_state);
    }

    // Parameters outside the stage must not accumulate gradients.
    for (auto &p : model_->parameters()) {
        p.set_requires_grad(false);
    }
    for (auto &p : params) {
        p.set_requires_grad(true);
    }

    StageResult result;
    result.stage = stage;
    stage_ = stage;
    stage_complete_ = false;
    iteration_ = resume ? prior->iteration : 0;
    optimizer_state_ = resume ? prior->optimizer_state : std::map<std::string, torch::Tensor>{};
    std::map<std::string, bool> alive;

    for (int64_t it = iteration_; it < settings.iterations; ++it) {
        if (options_.stop_after >= 0 && budget_used_ >= options_.stop_after) {
            break;
        }
        optimizer.zero_grad();
        LossRecord record;
        record.stage = stage;
        record.iteration = it + 1;
        const double inv_batch = 1.0 / static_cast<double>(settings.batch_size);
        for (int64_t b = 0; b < settings.batch_size; ++b) {
            const auto tuple = source_->draw(config_.seed, stage, it, b);
            Components c;
            try {
                c = stage_loss(stage, *tuple, prepared(tuple));
            } catch (const InvalidArgument &e) {
                // total_loss rejects non-finite components.
                dump_nonfinite(stage, it, *tuple, e.what());
            }
            const double value = c.loss.item<double>();
            if (!std::isfinite(value)) {
                dump_nonfinite(stage, it, *tuple, "loss = " + std::to_string(value));
            }
            (c.loss * inv_batch).backward();
            record.loss += value * inv_batch;
            record.l_is += scalar(c.l_is) * inv_batch;
            record.l_transfer += scalar(c.l_transfer) * inv_batch;
            record.l_rec += scalar(c.l_rec) * inv_batch;
            record.l_per += scalar(c.l_per) * inv_batch;
        }
        if (stage == 3) {
            for (const auto &[name, p] : named) {
                const auto &g = p.grad();
                if (g.defined() && g.ne(0).any().item<bool>()) {
                    alive[name] = true;
                }
            }
        }
        optimizer.step();
        iteration_ = it + 1;
        ++budget_used_;

        const bool last = iteration_ == settings.iterations;
        if (iteration_ % config_.log_every == 0 || last) {
            record.heldout_psnr = heldout_psnr();
            write_log(record);
        }
        result.history.push_back(record);
        if (options_.on_record) {
            options_.on_record(record);
        }
        if (options_.write_files && !last && iteration_ % config_.checkpoint_every == 0) {
            optimizer_state_ = data::capture_adam_state(optimizer, named);
            data::save_checkpoint(snapshot(), stage_checkpoint_path(config_.output_dir, stage));
        }
    }

    result.complete = iteration_ == settings.iterations;
    stage_complete_ = result.complete;
    optimizer_state_ = data::capture_adam_state(optimizer, named);
    if (stage == 3) {
        for (const auto &[name, p] : named) {
            if (!alive.count(name)) {
                result.dead_parameters.push_back(name);
            }
        }
    }
    for (auto &p : model_->parameters()) {
        p.set_requires_grad(true);
    }
    if (options_.write_files) {
        data::save_checkpoint(snapshot(), stage_checkpoint_path(config_.output_dir, stage));
    }
    results_.push_back(result);
    return result;
}

data::Checkpoint Trainer::run(const data::Checkpoint *resume) {
    int first = 1;
    data::Checkpoint current;
    const data::Checkpoint *prior = resume;
    if (resume != nullptr) {
        first = resume->stage_complete ? resume->stage + 1 : std::max(resume->stage, 1);
        if (first > 3) {
            data::apply_parameters(*model_, resume->parameters);
            stage_ = resume->stage;
            iteration_ = resume->iteration;
            stage_complete_ = true;
            return snapshot();
        }
    }
    for (int s = first; s <= 3; ++s) {
        const auto result = run_stage(s, prior);
        current = snapshot();
        prior = &current;
        if (!result.complete) {
            break;
        }
    }
    return current;
}

} // namespace crossmpi::train
