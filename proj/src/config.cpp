// Copyright Contributors to the crossmpi project
// SPDX-License-Identifier: Apache-2.0

#include "crossmpi/config.hpp"

#include "crossmpi/errors.hpp"

#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace crossmpi::config {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// Reads fields of one JSON object, remembering which keys were consumed so
// that leftovers can be reported as unknown.
class ObjectReader {
public:
    ObjectReader(const json &object, std::string path) : object_(object), path_(std::move(path)) {
        if (!object_.is_object()) {
            throw ConfigError(where() + " must be an object");
        }
    }

    template <class T> void read(const char *key, T &out) {
        seen_.insert(key);
        const auto it = object_.find(key);
        if (it == object_.end()) {
            return;
        }
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!it->is_boolean()) {
                    throw ConfigError("");
                }
            } else if constexpr (std::is_integral_v<T>) {
                if (!it->is_number_integer()) {
                    throw ConfigError("");
                }
                if constexpr (std::is_unsigned_v<T>) {
                    if (it->is_number_integer() && !it->is_number_unsigned() && it->get<int64_t>() < 0) {
                        throw ConfigError("");
                    }
                }
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!it->is_number()) {
                    throw ConfigError("");
                }
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!it->is_string()) {
                    throw ConfigError("");
                }
            }
            out = it->get<T>();
        } catch (const std::exception &) {
            throw ConfigError(where(key) + " has the wrong type (" + it->type_name() + ")");
        }
    }

    void read_path(const char *key, std::filesystem::path &out) {
        std::string text = out.string();
        read(key, text);
        out = text;
    }

    void read_int_list(const char *key, std::vector<int64_t> &out) {
        seen_.insert(key);
        const auto it = object_.find(key);
        if (it == object_.end()) {
            return;
        }
        if (!it->is_array()) {
            throw ConfigError(where(key) + " must be an array of integers");
        }
        out.clear();
        for (const auto &v : *it) {
            if (!v.is_number_integer()) {
                throw ConfigError(where(key) + " must be an array of integers");
            }
            out.push_back(v.get<int64_t>());
        }
    }

    void read_string_list(const char *key, std::vector<std::string> &out) {
        seen_.insert(key);
        const auto it = object_.find(key);
        if (it == object_.end()) {
            return;
        }
        if (!it->is_array()) {
            throw ConfigError(where(key) + " must be an array of strings");
        }
        out.clear();
        for (const auto &v : *it) {
            if (!v.is_string()) {
                throw ConfigError(where(key) + " must be an array of strings");
            }
            out.push_back(v.get<std::string>());
        }
    }

    // Returns the sub-object or nullptr when absent.
    const json *child(const char *key) {
        seen_.insert(key);
        const auto it = object_.find(key);
        return it == object_.end() ? nullptr : &*it;
    }

    std::string child_path(const char *key) const { return path_.empty() ? key : path_ + "." + key; }

    void finish() const {
        for (const auto &[key, value] : object_.items()) {
            if (!seen_.count(key)) {
                throw ConfigError("unknown key '" + child_path(key.c_str()) + "'");
            }
        }
    }

private:
    std::string where(const char *key = nullptr) const {
        if (key == nullptr) {
            return path_.empty() ? std::string("config") : "'" + path_ + "'";
        }
        return "'" + child_path(key) + "'";
    }

    const json &object_;
    std::string path_;
    std::set<std::string> seen_;
};

void read_model(const json &j, const std::string &path, model::ModelConfig &m) {
    ObjectReader r(j, path);
    r.read("h", m.h);
    r.read("w", m.w);
    r.read("c", m.c);
    r.read("d", m.d);
    r.read("beta", m.beta);
    r.read("feature_channels", m.feature_channels);
    r.read("attention_scale", m.attention_scale);
    r.read("guided_levels", m.guided_levels);
    r.read("guided_channels", m.guided_channels);
    r.read("guided_res_blocks", m.guided_res_blocks);
    r.read("fusenet_blocks", m.fusenet_blocks);
    r.read("fusenet_channels", m.fusenet_channels);
    r.read("near", m.near);
    r.read("far", m.far);
    r.finish();
}

ordered_json model_json(const model::ModelConfig &m) {
    return ordered_json{{"h", m.h},
                        {"w", m.w},
                        {"c", m.c},
                        {"d", m.d},
                        {"beta", m.beta},
                        {"feature_channels", m.feature_channels},
                        {"attention_scale", m.attention_scale},
                        {"guided_levels", m.guided_levels},
                        {"guided_channels", m.guided_channels},
                        {"guided_res_blocks", m.guided_res_blocks},
                        {"fusenet_blocks", m.fusenet_blocks},
                        {"fusenet_channels", m.fusenet_channels},
                        {"near", m.near},
                        {"far", m.far}};
}

void read_stage(const json &j, const std::string &path, StageSettings &s) {
    ObjectReader r(j, path);
    r.read("iterations", s.iterations);
    r.read("learning_rate", s.learning_rate);
    r.read("beta1", s.beta1);
    r.read("beta2", s.beta2);
    r.read("batch_size", s.batch_size);
    r.finish();
}

ordered_json stage_json(const StageSettings &s) {
    return ordered_json{{"iterations", s.iterations},
                        {"learning_rate", s.learning_rate},
                        {"beta1", s.beta1},
                        {"beta2", s.beta2},
                        {"batch_size", s.batch_size}};
}

DataKind parse_kind(const std::string &text) {
    if (text == "synthetic") {
        return DataKind::Synthetic;
    }
    if (text == "sequences") {
        return DataKind::Sequences;
    }
    if (text == "optical_zoom") {
        return DataKind::OpticalZoom;
    }
    throw ConfigError("'data.kind' must be synthetic, sequences or optical_zoom, got '" + text + "'");
}

json parse_json(const std::string &text, const std::string &source) {
    try {
        return json::parse(text);
    } catch (const json::parse_error &e) {
        throw ConfigError(source + ": invalid JSON (" + e.what() + ")");
    }
}

} // namespace

TrainSchedule TrainSchedule::desk() { return TrainSchedule{}; }

TrainSchedule TrainSchedule::full() {
    TrainSchedule s;
    s.stages[0].iterations = 816200;
    s.stages[1].iterations = 326000;
    s.stages[2].iterations = 472000;
    return s;
}

const StageSettings &TrainSchedule::stage(int index) const {
    if (index < 1 || index > 3) {
        throw ScheduleError("stage must be 1, 2 or 3, got " + std::to_string(index));
    }
    return stages[static_cast<std::size_t>(index - 1)];
}

void TrainSchedule::validate() const {
    for (int i = 0; i < 3; ++i) {
        const auto &s = stages[static_cast<std::size_t>(i)];
        const std::string name = "schedule.stage" + std::to_string(i + 1);
        if (s.iterations < 1) {
            throw ConfigError(name + ".iterations must be > 0");
        }
        if (!(s.learning_rate > 0.0)) {
            throw ConfigError(name + ".learning_rate must be > 0");
        }
        if (!(s.beta1 >= 0.0 && s.beta1 < 1.0) || !(s.beta2 >= 0.0 && s.beta2 < 1.0)) {
            throw ConfigError(name + ": beta1 and beta2 must lie in [0, 1)");
        }
        if (s.batch_size < 1) {
            throw ConfigError(name + ".batch_size must be >= 1");
        }
    }
}

void RunConfig::validate() const {
    try {
        model.validate();
        loss_weights.validate();
    } catch (const InvalidArgument &e) {
        throw ConfigError(e.what());
    }
    schedule.validate();
    if (perceptual.width_divisor < 1) {
        throw ConfigError("'perceptual.width_divisor' must be >= 1");
    }
    if (perceptual.layers.empty()) {
        throw ConfigError("'perceptual.layers' must not be empty");
    }
    if (data.kind == DataKind::Synthetic && data.preset != "single_plane" &&
        data.preset != "two_plane" && data.preset != "zero_baseline") {
        throw ConfigError("'data.preset' must be single_plane, two_plane or zero_baseline");
    }
    if (data.frame_diff_min < 0 || data.frame_diff_max < data.frame_diff_min) {
        throw ConfigError("'data.frame_diff_min..frame_diff_max' must be a non-empty range of "
                          "non-negative integers");
    }
    for (const auto diff : data.eval_frame_diffs) {
        if (diff < 0) {
            throw ConfigError("'data.eval_frame_diffs' entries must be non-negative");
        }
    }
    if (output_dir.empty()) {
        throw ConfigError("'output_dir' must not be empty");
    }
    if (log_every < 1 || checkpoint_every < 1) {
        throw ConfigError("'log_every' and 'checkpoint_every' must be >= 1");
    }
}

const char *to_string(DataKind kind) {
    switch (kind) {
    case DataKind::Synthetic:
        return "synthetic";
    case DataKind::Sequences:
        return "sequences";
    case DataKind::OpticalZoom:
        return "optical_zoom";
    }
    return "?";
}

RunConfig parse_run_config(const std::string &text, const std::string &source) {
    const json root = parse_json(text, source);
    RunConfig cfg;
    try {
        ObjectReader r(root, "");
        if (const auto *m = r.child("model")) {
            read_model(*m, "model", cfg.model);
        }
        if (const auto *s = r.child("schedule")) {
            ObjectReader sr(*s, "schedule");
            if (const auto *preset = sr.child("preset")) {
                if (!preset->is_string() ||
                    (preset->get<std::string>() != "desk" && preset->get<std::string>() != "full")) {
                    throw ConfigError("'schedule.preset' must be \"desk\" or \"full\"");
                }
                cfg.schedule = preset->get<std::string>() == "full" ? TrainSchedule::full()
                                                                    : TrainSchedule::desk();
            }
            const char *names[] = {"stage1", "stage2", "stage3"};
            for (std::size_t i = 0; i < 3; ++i) {
                if (const auto *st = sr.child(names[i])) {
                    read_stage(*st, sr.child_path(names[i]), cfg.schedule.stages[i]);
                }
            }
            sr.read("freeze_features_in_stage2", cfg.schedule.freeze_features_in_stage2);
            sr.finish();
        }
        if (const auto *w = r.child("loss_weights")) {
            ObjectReader wr(*w, "loss_weights");
            wr.read("rec", cfg.loss_weights.rec);
            wr.read("per", cfg.loss_weights.per);
            wr.read("is", cfg.loss_weights.is);
            wr.finish();
        }
        if (const auto *p = r.child("perceptual")) {
            ObjectReader pr(*p, "perceptual");
            pr.read_string_list("layers", cfg.perceptual.layers);
            pr.read("width_divisor", cfg.perceptual.width_divisor);
            pr.read_path("weights", cfg.perceptual.weights);
            pr.read("seed", cfg.perceptual.seed);
            pr.finish();
        }
        if (const auto *d = r.child("data")) {
            ObjectReader dr(*d, "data");
            std::string kind = to_string(cfg.data.kind);
            dr.read("kind", kind);
            cfg.data.kind = parse_kind(kind);
            dr.read("preset", cfg.data.preset);
            dr.read("texture_seed", cfg.data.texture_seed);
            dr.read_path("root", cfg.data.root);
            dr.read("frame_diff_min", cfg.data.frame_diff_min);
            dr.read("frame_diff_max", cfg.data.frame_diff_max);
            dr.read_int_list("eval_frame_diffs", cfg.data.eval_frame_diffs);
            dr.finish();
        }
        r.read_path("output_dir", cfg.output_dir);
        r.read("seed", cfg.seed);
        r.read("log_every", cfg.log_every);
        r.read("checkpoint_every", cfg.checkpoint_every);
        r.finish();
    } catch (const ConfigError &e) {
        throw ConfigError(source + ": " + e.what());
    }
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_run_config(buffer.str(), path.string());
}

std::string dump_run_config(const RunConfig &c) {
    ordered_json perceptual{{"layers", c.perceptual.layers},
                            {"width_divisor", c.perceptual.width_divisor},
                            {"weights", c.perceptual.weights.string()},
                            {"seed", c.perceptual.seed}};
    ordered_json data{{"kind", to_string(c.data.kind)},
                      {"preset", c.data.preset},
                      {"texture_seed", c.data.texture_seed},
                      {"root", c.data.root.string()},
                      {"frame_diff_min", c.data.frame_diff_min},
                      {"frame_diff_max", c.data.frame_diff_max},
                      {"eval_frame_diffs", c.data.eval_frame_diffs}};
    ordered_json out{
        {"model", model_json(c.model)},
        {"schedule",
         {{"stage1", stage_json(c.schedule.stages[0])},
          {"stage2", stage_json(c.schedule.stages[1])},
          {"stage3", stage_json(c.schedule.stages[2])},
          {"freeze_features_in_stage2", c.schedule.freeze_features_in_stage2}}},
        {"loss_weights", {{"rec", c.loss_weights.rec}, {"per", c.loss_weights.per}, {"is", c.loss_weights.is}}},
        {"perceptual", perceptual},
        {"data", data},
        {"output_dir", c.output_dir.string()},
        {"seed", c.seed},
        {"log_every", c.log_every},
        {"checkpoint_every", c.checkpoint_every}};
    return out.dump(2) + "\n";
}

std::string dump_model_config(const model::ModelConfig &config) { return model_json(config).dump(); }

model::ModelConfig parse_model_config(const std::string &text, const std::string &source) {
    model::ModelConfig m;
    try {
        read_model(parse_json(text, source), "model", m);
    } catch (const ConfigError &e) {
        throw ConfigError(source + ": " + e.what());
    }
    return m;
}

std::vector<std::string> model_config_differences(const model::ModelConfig &a,
                                                  const model::ModelConfig &b) {
    const auto ja = model_json(a);
    const auto jb = model_json(b);
    std::vector<std::string> out;
    for (const auto &[key, value] : ja.items()) {
        if (jb.at(key) != value) {
            out.push_back(key);
        }
    }
    return out;
}

std::filesystem::path resolve_data_root(const DataConfig &data) {
    if (!data.root.empty()) {
        return data.root;
    }
    if (const char *env = std::getenv("CROSSMPI_DATA_ROOT"); env != nullptr && *env != '\0') {
        return env;
    }
    return {};
}

} // namespace crossmpi::config
