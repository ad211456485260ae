// Copyright Contributors to the crossmpi project
// SPDX-License-Identifier: Apache-2.0

#include "crossmpi/checkpoint.hpp"

#include "crossmpi/config.hpp"
#include "crossmpi/errors.hpp"
#include "crossmpi/safetensors.hpp"

#include <torch/torch.h>

#include <sstream>

namespace crossmpi::data {

namespace {

constexpr const char *kParamPrefix = "param/";
constexpr const char *kOptimPrefix = "optim/";
constexpr const char *kRngKey = "rng/torch";

const std::string &require_metadata(const safetensors::TensorFile &file, const std::string &key,
                                    const std::string &source) {
    const auto it = file.metadata.find(key);
    if (it == file.metadata.end()) {
        throw CheckpointError(source + ": missing metadata key '" + key + "'");
    }
    return it->second;
}

int64_t parse_integer(const std::string &text, const std::string &key, const std::string &source) {
    try {
        std::size_t used = 0;
        const long long value = std::stoll(text, &used);
        if (used != text.size()) {
            throw std::invalid_argument(text);
        }
        return value;
    } catch (const std::exception &) {
        throw CheckpointError(source + ": metadata '" + key + "' is not an integer ('" + text + "')");
    }
}

bool starts_with(const std::string &s, const char *prefix) { return s.rfind(prefix, 0) == 0; }

} // namespace

void save_checkpoint(const Checkpoint &state, const std::filesystem::path &path) {
    safetensors::TensorFile file;
    for (const auto &[name, tensor] : state.parameters) {
        file.tensors.emplace(kParamPrefix + name, tensor);
    }
    for (const auto &[name, tensor] : state.optimizer_state) {
        file.tensors.emplace(kOptimPrefix + name, tensor);
    }
    if (state.rng_state.defined()) {
        file.tensors.emplace(kRngKey, state.rng_state);
    }
    file.metadata["format_version"] = std::to_string(state.format_version);
    file.metadata["model_config"] = config::dump_model_config(state.config);
    file.metadata["stage"] = std::to_string(state.stage);
    file.metadata["iteration"] = std::to_string(state.iteration);
    file.metadata["stage_complete"] = state.stage_complete ? "1" : "0";
    file.metadata["seed"] = std::to_string(state.seed);
    if (auto parent = path.parent_path(); !parent.empty()) {
        std::filesystem::create_directories(parent);
    }
    safetensors::save(file, path);
}

Checkpoint load_checkpoint(const std::filesystem::path &path, const model::ModelConfig *expected) {
    const std::string source = path.string();
    const auto file = safetensors::load(path);

    Checkpoint state;
    state.format_version =
        parse_integer(require_metadata(file, "format_version", source), "format_version", source);
    if (state.format_version != kCheckpointFormatVersion) {
        std::ostringstream msg;
        msg << source << ": checkpoint format version " << state.format_version
            << " is not supported (expected version " << kCheckpointFormatVersion << ")";
        throw CheckpointError(msg.str());
    }
    try {
        state.config = config::parse_model_config(require_metadata(file, "model_config", source), source);
    } catch (const ConfigError &e) {
        throw CheckpointError(std::string("invalid model config in checkpoint: ") + e.what());
    }
    state.stage = static_cast<int>(parse_integer(require_metadata(file, "stage", source), "stage", source));
    state.iteration = parse_integer(require_metadata(file, "iteration", source), "iteration", source);
    state.stage_complete =
        parse_integer(require_metadata(file, "stage_complete", source), "stage_complete", source) != 0;
    state.seed = static_cast<uint64_t>(
        parse_integer(require_metadata(file, "seed", source), "seed", source));
    if (state.stage < 0 || state.stage > 3 || state.iteration < 0) {
        throw CheckpointError(source + ": stage/iteration out of range");
    }

    for (const auto &[name, tensor] : file.tensors) {
        if (starts_with(name, kParamPrefix)) {
            state.parameters.emplace(name.substr(std::char_traits<char>::length(kParamPrefix)), tensor);
        } else if (starts_with(name, kOptimPrefix)) {
            state.optimizer_state.emplace(name.substr(std::char_traits<char>::length(kOptimPrefix)),
                                          tensor);
        } else if (name == kRngKey) {
            state.rng_state = tensor;
        } else {
            throw CheckpointError(source + ": unexpected tensor '" + name + "'");
        }
    }
    if (state.parameters.empty()) {
        throw CheckpointError(source + ": checkpoint holds no parameters");
    }

    if (expected != nullptr) {
        const auto diffs = config::model_config_differences(*expected, state.config);
        if (!diffs.empty()) {
            std::string fields;
            for (const auto &d : diffs) {
                fields += (fields.empty() ? "" : ", ") + d;
            }
            throw CheckpointError(source + ": model config mismatch in field(s) " + fields);
        }
    }
    return state;
}

std::map<std::string, torch::Tensor> collect_parameters(const torch::nn::Module &module) {
    std::map<std::string, torch::Tensor> out;
    for (const auto &item : module.named_parameters(true)) {
        out.emplace(item.key(), item.value().detach().clone());
    }
    return out;
}

void apply_parameters(torch::nn::Module &module, const std::map<std::string, torch::Tensor> &values) {
    auto named = module.named_parameters(true);
    for (const auto &[name, value] : values) {
        if (named.find(name) == nullptr) {
            throw CheckpointError("checkpoint parameter '" + name + "' does not exist in the model");
        }
    }
    torch::NoGradGuard no_grad;
    for (auto &item : named) {
        const auto it = values.find(item.key());
        if (it == values.end()) {
            throw CheckpointError("checkpoint is missing parameter '" + item.key() + "'");
        }
        if (it->second.sizes() != item.value().sizes()) {
            std::ostringstream msg;
            msg << "checkpoint parameter '" << item.key() << "' has shape " << it->second.sizes()
                << ", model expects " << item.value().sizes();
            throw CheckpointError(msg.str());
        }
        item.value().copy_(it->second.to(item.value().scalar_type()));
    }
}

std::map<std::string, torch::Tensor>
capture_adam_state(torch::optim::Adam &optimizer,
                   const std::map<std::string, torch::Tensor> &named_parameters) {
    std::map<std::string, torch::Tensor> out;
    const auto &state = optimizer.state();
    for (const auto &[name, param] : named_parameters) {
        const auto it = state.find(param.unsafeGetTensorImpl());
        if (it == state.end()) {
            continue;
        }
        const auto &adam = static_cast<const torch::optim::AdamParamState &>(*it->second);
        out.emplace(name + "/exp_avg", adam.exp_avg().detach().clone());
        out.emplace(name + "/exp_avg_sq", adam.exp_avg_sq().detach().clone());
        out.emplace(name + "/step", torch::tensor(adam.step(), torch::kLong));
    }
    return out;
}

void restore_adam_state(torch::optim::Adam &optimizer,
                        const std::map<std::string, torch::Tensor> &named_parameters,
                        const std::map<std::string, torch::Tensor> &state) {
    for (const auto &[key, value] : state) {
        const auto slash = key.rfind('/');
        if (slash == std::string::npos || named_parameters.count(key.substr(0, slash)) == 0) {
            throw CheckpointError("optimizer state '" + key + "' does not match a trainable parameter");
        }
    }
    for (const auto &[name, param] : named_parameters) {
        const auto m = state.find(name + "/exp_avg");
        const auto v = state.find(name + "/exp_avg_sq");
        const auto s = state.find(name + "/step");
        const int present = (m != state.end()) + (v != state.end()) + (s != state.end());
        if (present == 0) {
            continue;
        }
        if (present != 3) {
            throw CheckpointError("incomplete optimizer state for '" + name + "'");
        }
        if (m->second.sizes() != param.sizes() || v->second.sizes() != param.sizes()) {
            throw CheckpointError("optimizer state shape mismatch for '" + name + "'");
        }
        auto adam = std::make_unique<torch::optim::AdamParamState>();
        adam->step(s->second.item<int64_t>());
        adam->exp_avg(m->second.to(param.scalar_type()).clone());
        adam->exp_avg_sq(v->second.to(param.scalar_type()).clone());
        optimizer.state()[param.unsafeGetTensorImpl()] = std::move(adam);
    }
}

} // namespace crossmpi::data
