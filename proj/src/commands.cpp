// Copyright Contributors to the crossmpi project
// SPDX-License-Identifier: Apache-2.0

#include "crossmpi/cli.hpp"

#include "crossmpi/checkpoint.hpp"
#include "crossmpi/config.hpp"
#include "crossmpi/data.hpp"
#include "crossmpi/errors.hpp"
#include "crossmpi/geometry.hpp"
#include "crossmpi/imaging.hpp"
#include "crossmpi/model.hpp"
#include "crossmpi/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

namespace crossmpi::cli {

namespace fs = std::filesystem;

namespace {

struct Failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void fail(const std::string &message) { throw Failure(message); }

// Changing beta keeps the attention scale and re-derives the level count
// when that is possible; otherwise validation reports the constraint.
void override_beta(model::ModelConfig &m, int64_t beta) {
    m.beta = beta;
    if (m.attention_scale > 0 && beta % m.attention_scale == 0) {
        int64_t ratio = beta / m.attention_scale;
        int64_t levels = 0;
        while (ratio > 1 && ratio % 2 == 0) {
            ratio /= 2;
            ++levels;
        }
        if (ratio == 1) {
            m.guided_levels = levels;
        }
    }
}

void validate_model(const model::ModelConfig &m) {
    try {
        m.validate();
    } catch (const InvalidArgument &e) {
        throw ConfigError(e.what());
    }
}

std::string size_text(int64_t w, int64_t h) { return std::to_string(w) + "x" + std::to_string(h); }

void expect_image_size(const torch::Tensor &image, int64_t w, int64_t h, const std::string &what,
                       const std::string &expected_by) {
    if (image.size(2) != w || image.size(1) != h) {
        fail(what + " is " + size_text(image.size(2), image.size(1)) + " but " + expected_by +
             " expects " + size_text(w, h));
    }
}

torch::Tensor read_image(const fs::path &path, const std::string &what) {
    if (!fs::exists(path)) {
        fail(what + " " + path.string() + " does not exist");
    }
    return data::load_png(path);
}

void ensure_output_dir(const fs::path &dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        fail("cannot create output directory " + dir.string() + ": " + ec.message());
    }
}

nlohmann::ordered_json metric_json(double v) {
    if (std::isfinite(v)) {
        return v;
    }
    return v > 0 ? "inf" : "-inf";
}

std::string metric_text(double v, int precision) {
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    std::ostringstream s;
    s << std::fixed << std::setprecision(precision) << v;
    return s.str();
}

template <class Fn> int guarded(std::ostream &err, Fn &&fn) {
    try {
        return fn();
    } catch (const std::exception &e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

} // namespace

std::string psv_slice_name(std::size_t index, double depth) {
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), "psv_%03zu_depth_%.4f.png", index, depth);
    return buffer;
}

// ---- train ------------------------------------------------------------------

int cmd_train(const TrainArgs &args, std::ostream &out, std::ostream &err) {
    return guarded(err, [&] {
        auto cfg = config::load_run_config(args.config);
        if (args.out) {
            cfg.output_dir = *args.out;
        }
        if (args.seed) {
            cfg.seed = *args.seed;
        }
        if (args.beta) {
            override_beta(cfg.model, *args.beta);
        }
        if (args.planes) {
            cfg.model.d = *args.planes;
        }
        if (args.frame_diffs) {
            if (args.frame_diffs->empty()) {
                fail("--frame-diffs needs at least one value");
            }
            cfg.data.frame_diff_min = *std::min_element(args.frame_diffs->begin(), args.frame_diffs->end());
            cfg.data.frame_diff_max = *std::max_element(args.frame_diffs->begin(), args.frame_diffs->end());
        }
        cfg.validate();

        std::optional<data::Checkpoint> resume;
        if (args.checkpoint) {
            resume = data::load_checkpoint(*args.checkpoint, &cfg.model);
        }
        auto source = train::make_data_source(cfg);

        ensure_output_dir(cfg.output_dir);
        {
            std::ofstream copy(cfg.output_dir / "config.json");
            copy << config::dump_run_config(cfg);
        }
        train::Trainer trainer(cfg, std::move(source));
        const auto final_state = trainer.run(resume ? &*resume : nullptr);
        for (const auto &r : trainer.results()) {
            out << "stage " << r.stage << ": " << r.history.size() << " iterations";
            if (!r.history.empty()) {
                out << ", final loss " << r.history.back().loss;
                if (r.history.back().heldout_psnr) {
                    out << ", held-out PSNR " << metric_text(*r.history.back().heldout_psnr, 3) << " dB";
                }
            }
            out << (r.complete ? "" : " (stopped early)") << '\n';
        }
        if (final_state.stage == 3 && final_state.stage_complete) {
            data::save_checkpoint(final_state, cfg.output_dir / "final.safetensors");
            out << "wrote " << (cfg.output_dir / "final.safetensors").string() << '\n';
        }
        return 0;
    });
}

// ---- infer ------------------------------------------------------------------

int cmd_infer(const InferArgs &args, std::ostream &out, std::ostream &err) {
    return guarded(err, [&] {
        const auto state = data::load_checkpoint(args.checkpoint);
        const auto &m = state.config;
        const auto lr = read_image(args.lr, "LR image");
        const auto ref = read_image(args.ref, "reference image");
        if (!fs::exists(args.calibration)) {
            fail("calibration file " + args.calibration.string() + " does not exist");
        }
        const auto cams = data::parse_pair_calibration(args.calibration);
        expect_image_size(lr, m.w, m.h, "LR image", "the checkpoint model");
        expect_image_size(ref, m.hr_width(), m.hr_height(), "reference image", "the checkpoint model");
        expect_image_size(lr, cams.lr.width, cams.lr.height, "LR image", "the calibration file");
        expect_image_size(ref, cams.ref.width, cams.ref.height, "reference image", "the calibration file");

        model::CrossMpiNet net(m);
        data::apply_parameters(*net, state.parameters);
        net->eval();
        data::TrainingTuple tuple;
        tuple.lr = lr;
        tuple.ref = ref;
        tuple.c_lr = cams.lr;
        tuple.c_ref = cams.ref;
        model::ForwardResult result;
        {
            torch::NoGradGuard no_grad;
            result = net->forward(tuple, model::ForwardStage::Full, true);
        }

        ensure_output_dir(args.out);
        data::save_png(args.out / "I_SR.png", result.i_sr, 16);
        data::save_png(args.out / "T_Ref.png", result.t_ref.clamp(0.0, 1.0), 16);
        const double inv_near = 1.0 / m.near;
        const double inv_far = 1.0 / m.far;
        const auto shown = ((1.0 / result.depth) - inv_far) / (inv_near - inv_far);
        data::save_png(args.out / "depth.png", shown, 16);
        {
            std::ofstream txt(args.out / "depth.txt");
            txt << std::setprecision(17);
            const auto depth = result.depth.accessor<double, 3>();
            for (int64_t y = 0; y < result.depth.size(1); ++y) {
                for (int64_t x = 0; x < result.depth.size(2); ++x) {
                    txt << (x ? " " : "") << depth[0][y][x];
                }
                txt << '\n';
            }
        }
        if (args.alphas) {
            for (int64_t i = 0; i < m.d; ++i) {
                char name[32];
                std::snprintf(name, sizeof(name), "alpha_%03lld.png", static_cast<long long>(i));
                data::save_png(args.out / name, result.alphas.weights[i].unsqueeze(0), 16);
            }
        }
        out << "wrote I_SR.png, T_Ref.png, depth.png, depth.txt" << (args.alphas ? " and alpha slices" : "")
            << " to " << args.out.string() << '\n';
        return 0;
    });
}

// ---- eval -------------------------------------------------------------------

int cmd_eval(const EvalArgs &args, std::ostream &out, std::ostream &err) {
    return guarded(err, [&] {
        std::optional<data::Checkpoint> state;
        model::ModelConfig m;
        if (args.checkpoint) {
            state = data::load_checkpoint(*args.checkpoint);
            m = state->config;
        } else if (args.config) {
            m = config::load_run_config(*args.config).model;
        } else if (args.mode == EvalMode::Model) {
            fail("model evaluation needs --checkpoint");
        } else {
            fail("eval needs --checkpoint or --config to fix the image sizes");
        }
        if (args.mode == EvalMode::Model && !state) {
            fail("model evaluation needs --checkpoint");
        }
        if (args.beta) {
            if (state && *args.beta != m.beta) {
                fail("--beta " + std::to_string(*args.beta) + " does not match the checkpoint beta " +
                     std::to_string(m.beta));
            }
            override_beta(m, *args.beta);
        }
        validate_model(m);
        if (args.frame_diffs.empty()) {
            fail("--frame-diffs needs at least one value");
        }
        for (const auto diff : args.frame_diffs) {
            if (diff < 0) {
                fail("frame differences must be non-negative");
            }
        }
        config::DataConfig data_cfg;
        data_cfg.root = args.data;
        const auto root = config::resolve_data_root(data_cfg);
        if (root.empty()) {
            fail("no dataset given (--data or CROSSMPI_DATA_ROOT)");
        }
        const auto seq_dir = root / "sequences";
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
        std::vector<data::SequenceRecord> records;
        for (const auto &f : files) {
            records.push_back(data::parse_sequence_file(f));
        }

        model::CrossMpiNet net{nullptr};
        if (args.mode == EvalMode::Model) {
            net = model::CrossMpiNet(m);
            data::apply_parameters(*net, state->parameters);
            net->eval();
        }

        struct Item {
            std::string sequence;
            int64_t diff;
            double psnr;
            double ssim;
        };
        std::vector<Item> items;
        std::vector<int64_t> diffs = args.frame_diffs;
        for (const auto diff : diffs) {
            for (const auto &record : records) {
                if (static_cast<int64_t>(record.frames.size()) <= diff) {
                    continue;
                }
                const auto tuple = data::assemble_tuple(record, root / "frames" / record.id, 0,
                                                        static_cast<std::size_t>(diff), m.beta,
                                                        m.hr_height(), m.hr_width());
                torch::Tensor prediction;
                switch (args.mode) {
                case EvalMode::Oracle:
                    prediction = tuple.gt;
                    break;
                case EvalMode::Bicubic:
                    prediction = imaging::resample_bicubic(tuple.lr, {m.beta, 1});
                    break;
                case EvalMode::Model: {
                    torch::NoGradGuard no_grad;
                    prediction = net->forward(tuple, model::ForwardStage::Full, true).i_sr;
                    break;
                }
                }
                items.push_back({record.id, diff, imaging::psnr(prediction, tuple.gt),
                                 imaging::ssim(prediction, tuple.gt)});
            }
        }

        // Aggregate in the order the frame differences were given.
        std::ostringstream report;
        std::ostringstream details;
        std::ostringstream table;
        table << std::setw(10) << "frame_diff" << std::setw(7) << "items" << std::setw(10) << "psnr"
              << std::setw(9) << "ssim" << '\n';
        for (const auto diff : diffs) {
            int64_t count = 0;
            double psnr_sum = 0.0;
            double ssim_sum = 0.0;
            for (const auto &item : items) {
                if (item.diff == diff) {
                    ++count;
                    psnr_sum += item.psnr;
                    ssim_sum += item.ssim;
                }
            }
            nlohmann::ordered_json row{{"frame_diff", diff}, {"items", count}};
            table << std::setw(10) << diff << std::setw(7) << count;
            if (count == 0) {
                row["status"] = "absent";
                table << std::setw(10) << "-" << std::setw(9) << "-" << "  (absent)\n";
            } else {
                const double psnr = psnr_sum / static_cast<double>(count);
                const double ssim = ssim_sum / static_cast<double>(count);
                row["psnr"] = metric_json(psnr);
                row["ssim"] = metric_json(ssim);
                table << std::setw(10) << metric_text(psnr, 3) << std::setw(9) << metric_text(ssim, 4)
                      << '\n';
            }
            report << row.dump() << '\n';
        }
        for (const auto &item : items) {
            nlohmann::ordered_json row{{"frame_diff", item.diff},
                                       {"sequence", item.sequence},
                                       {"psnr", metric_json(item.psnr)},
                                       {"ssim", metric_json(item.ssim)}};
            details << row.dump() << '\n';
        }

        out << table.str();
        if (args.out) {
            ensure_output_dir(*args.out);
            std::ofstream(*args.out / "eval_report.jsonl") << report.str();
            std::ofstream(*args.out / "eval_items.jsonl") << details.str();
        }
        return 0;
    });
}

// ---- debug-psv --------------------------------------------------------------

int cmd_debug_psv(const DebugPsvArgs &args, std::ostream &out, std::ostream &err) {
    return guarded(err, [&] {
        const auto lr = read_image(args.lr, "LR image");
        const auto ref = read_image(args.ref, "reference image");
        if (!fs::exists(args.calibration)) {
            fail("calibration file " + args.calibration.string() + " does not exist");
        }
        const auto cams = data::parse_pair_calibration(args.calibration);
        expect_image_size(lr, cams.lr.width, cams.lr.height, "LR image", "the calibration file");
        expect_image_size(ref, cams.ref.width, cams.ref.height, "reference image", "the calibration file");
        const int64_t beta = ref.size(2) / lr.size(2);
        if (beta < 1 || beta * lr.size(2) != ref.size(2) || beta * lr.size(1) != ref.size(1)) {
            fail("reference size " + size_text(ref.size(2), ref.size(1)) +
                 " is not an integer multiple of the LR size " + size_text(lr.size(2), lr.size(1)));
        }
        if (args.beta && *args.beta != beta) {
            fail("--beta " + std::to_string(*args.beta) + " does not match the image sizes (beta " +
                 std::to_string(beta) + ")");
        }
        const auto planes = geometry::sample_depth_planes(args.near, args.far, args.planes);
        const auto psv = geometry::build_plane_sweep_volume(ref, cams.lr, cams.ref, planes,
                                                            ref.size(1), ref.size(2));
        ensure_output_dir(args.out);
        for (std::size_t i = 0; i < planes.size(); ++i) {
            data::save_png(args.out / psv_slice_name(i, planes.depths[i]),
                           psv.images[static_cast<int64_t>(i)], 16);
        }
        out << "wrote " << planes.size() << " plane sweep slices to " << args.out.string() << '\n';
        return 0;
    });
}

// ---- argument parsing ---------------------------------------------------------

int run(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
    CLI::App app{"Cross-scale reference-based super-resolution with multiplane images"};
    app.require_subcommand(1);

    TrainArgs train;
    uint64_t seed = 0;
    int64_t beta = 0;
    int64_t planes = 0;
    std::vector<int64_t> diffs;
    std::string checkpoint;
    std::string out_dir;
    auto *train_cmd = app.add_subcommand("train", "Run the three-stage training schedule");
    train_cmd->add_option("--config", train.config, "JSON run configuration")->required();
    train_cmd->add_option("--out", out_dir, "Output directory (overrides output_dir)");
    auto *seed_opt = train_cmd->add_option("--seed", seed, "Random seed");
    auto *beta_opt = train_cmd->add_option("--beta", beta, "Resolution gap");
    auto *planes_opt = train_cmd->add_option("--planes", planes, "Number of depth planes");
    auto *diff_opt = train_cmd->add_option("--frame-diffs", diffs, "Training frame differences")
                         ->delimiter(',');
    train_cmd->add_option("--checkpoint", checkpoint, "Resume from this checkpoint");

    InferArgs infer;
    auto *infer_cmd = app.add_subcommand("infer", "Super-resolve one LR image");
    infer_cmd->add_option("--checkpoint", infer.checkpoint)->required();
    infer_cmd->add_option("--lr", infer.lr, "Low-resolution PNG")->required();
    infer_cmd->add_option("--ref", infer.ref, "Reference PNG")->required();
    infer_cmd->add_option("--calibration", infer.calibration, "Camera file (lr/ref lines)")->required();
    infer_cmd->add_option("--out", infer.out, "Output directory")->required();
    infer_cmd->add_flag("--alphas", infer.alphas, "Also write per-plane alpha maps");

    EvalArgs eval;
    std::string eval_mode = "auto";
    std::string eval_config;
    std::string eval_checkpoint;
    std::string eval_out;
    int64_t eval_beta = 0;
    std::vector<int64_t> eval_diffs;
    auto *eval_cmd = app.add_subcommand("eval", "Per-frame-difference PSNR/SSIM report");
    eval_cmd->add_option("--checkpoint", eval_checkpoint);
    eval_cmd->add_option("--config", eval_config, "Run configuration supplying the model sizes");
    eval_cmd->add_option("--data", eval.data, "Dataset root (default $CROSSMPI_DATA_ROOT)");
    auto *eval_diff_opt = eval_cmd->add_option("--frame-diffs", eval_diffs)->delimiter(',');
    eval_cmd->add_option("--out", eval_out, "Directory for eval_report.jsonl and eval_items.jsonl");
    auto *eval_beta_opt = eval_cmd->add_option("--beta", eval_beta);
    eval_cmd->add_option("--mode", eval_mode, "model, bicubic, oracle or auto")
        ->check(CLI::IsMember({"auto", "model", "bicubic", "oracle"}));

    DebugPsvArgs psv;
    int64_t psv_beta = 0;
    auto *psv_cmd = app.add_subcommand("debug-psv", "Write every plane sweep slice");
    psv_cmd->add_option("--lr", psv.lr)->required();
    psv_cmd->add_option("--ref", psv.ref)->required();
    psv_cmd->add_option("--calibration", psv.calibration)->required();
    psv_cmd->add_option("--out", psv.out)->required();
    psv_cmd->add_option("--planes", psv.planes, "Number of depth planes");
    psv_cmd->add_option("--near", psv.near);
    psv_cmd->add_option("--far", psv.far);
    auto *psv_beta_opt = psv_cmd->add_option("--beta", psv_beta);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        return app.exit(e, out, err);
    }

    if (train_cmd->parsed()) {
        if (!out_dir.empty()) {
            train.out = out_dir;
        }
        if (seed_opt->count()) {
            train.seed = seed;
        }
        if (beta_opt->count()) {
            train.beta = beta;
        }
        if (planes_opt->count()) {
            train.planes = planes;
        }
        if (diff_opt->count()) {
            train.frame_diffs = diffs;
        }
        if (!checkpoint.empty()) {
            train.checkpoint = checkpoint;
        }
        return cmd_train(train, out, err);
    }
    if (infer_cmd->parsed()) {
        return cmd_infer(infer, out, err);
    }
    if (eval_cmd->parsed()) {
        if (!eval_checkpoint.empty()) {
            eval.checkpoint = eval_checkpoint;
        }
        if (!eval_config.empty()) {
            eval.config = eval_config;
        }
        if (!eval_out.empty()) {
            eval.out = eval_out;
        }
        if (eval_beta_opt->count()) {
            eval.beta = eval_beta;
        }
        if (eval_diff_opt->count()) {
            eval.frame_diffs = eval_diffs;
        }
        if (eval_mode == "auto") {
            eval.mode = eval.checkpoint ? EvalMode::Model : EvalMode::Bicubic;
        } else {
            eval.mode = eval_mode == "model"     ? EvalMode::Model
                        : eval_mode == "bicubic" ? EvalMode::Bicubic
                                                 : EvalMode::Oracle;
        }
        return cmd_eval(eval, out, err);
    }
    if (psv_cmd->parsed()) {
        if (psv_beta_opt->count()) {
            psv.beta = psv_beta;
        }
        return cmd_debug_psv(psv, out, err);
    }
    return 2;
}

} // namespace crossmpi::cli
