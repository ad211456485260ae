// Copyright Contributors to the crossmpi project
// SPDX-License-Identifier: Apache-2.0

#include "crossmpi/safetensors.hpp"

#include "crossmpi/errors.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace crossmpi::safetensors {

namespace {

using nlohmann::json;

struct DtypeInfo {
    const char *name;
    torch::ScalarType type;
};

constexpr DtypeInfo kDtypes[] = {
    {"F64", torch::kDouble}, {"F32", torch::kFloat}, {"I64", torch::kLong},
    {"I32", torch::kInt},    {"U8", torch::kByte},   {"BOOL", torch::kBool},
};

const char *dtype_name(torch::ScalarType type) {
    for (const auto &info : kDtypes) {
        if (info.type == type) {
            return info.name;
        }
    }
    throw CheckpointError(std::string("safetensors: unsupported dtype ") + c10::toString(type));
}

torch::ScalarType dtype_from_name(const std::string &name, const std::string &source) {
    for (const auto &info : kDtypes) {
        if (name == info.name) {
            return info.type;
        }
    }
    throw CheckpointError(source + ": unsupported tensor dtype '" + name + "'");
}

} // namespace

std::string serialize(const TensorFile &file) {
    json header = json::object();
    std::string data;
    for (const auto &[name, tensor] : file.tensors) {
        if (name == "__metadata__") {
            throw CheckpointError("safetensors: reserved tensor name __metadata__");
        }
        const auto t = tensor.detach().cpu().contiguous();
        const auto begin = data.size();
        const auto bytes = static_cast<std::size_t>(t.numel()) * t.element_size();
        data.append(static_cast<const char *>(t.data_ptr()), bytes);
        header[name] = {{"dtype", dtype_name(t.scalar_type())},
                        {"shape", t.sizes().vec()},
                        {"data_offsets", {begin, data.size()}}};
    }
    if (!file.metadata.empty()) {
        header["__metadata__"] = file.metadata;
    }
    std::string text = header.dump();
    while (text.size() % 8 != 0) {
        text.push_back(' ');
    }

    std::string out;
    out.reserve(8 + text.size() + data.size());
    const uint64_t length = text.size();
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((length >> (8 * i)) & 0xff));
    }
    out += text;
    out += data;
    return out;
}

TensorFile deserialize(const std::string &bytes, const std::string &source) {
    if (bytes.size() < 8) {
        throw CheckpointError(source + ": file too short for a tensor header");
    }
    uint64_t length = 0;
    for (int i = 0; i < 8; ++i) {
        length |= static_cast<uint64_t>(static_cast<unsigned char>(bytes[i])) << (8 * i);
    }
    if (length > bytes.size() - 8) {
        throw CheckpointError(source + ": header length exceeds file size (corrupt file)");
    }
    json header;
    try {
        header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(length));
    } catch (const json::exception &e) {
        throw CheckpointError(source + ": unreadable tensor header (" + e.what() + ")");
    }
    if (!header.is_object()) {
        throw CheckpointError(source + ": tensor header is not an object");
    }
    const std::size_t data_begin = 8 + length;
    const std::size_t data_size = bytes.size() - data_begin;

    TensorFile file;
    try {
        for (const auto &[name, entry] : header.items()) {
            if (name == "__metadata__") {
                file.metadata = entry.get<std::map<std::string, std::string>>();
                continue;
            }
            const auto type = dtype_from_name(entry.at("dtype").get<std::string>(), source);
            const auto shape = entry.at("shape").get<std::vector<int64_t>>();
            const auto offsets = entry.at("data_offsets").get<std::vector<uint64_t>>();
            int64_t numel = 1;
            for (const auto s : shape) {
                if (s < 0) {
                    throw CheckpointError(source + ": negative dimension in tensor '" + name + "'");
                }
                numel *= s;
            }
            const auto element = static_cast<uint64_t>(c10::elementSize(type));
            if (offsets.size() != 2 || offsets[0] > offsets[1] || offsets[1] > data_size ||
                offsets[1] - offsets[0] != static_cast<uint64_t>(numel) * element) {
                throw CheckpointError(source + ": bad byte range for tensor '" + name + "'");
            }
            auto tensor = torch::empty(shape, torch::TensorOptions().dtype(type));
            if (numel > 0) {
                std::memcpy(tensor.data_ptr(), bytes.data() + data_begin + offsets[0],
                            offsets[1] - offsets[0]);
            }
            file.tensors.emplace(name, std::move(tensor));
        }
    } catch (const json::exception &e) {
        throw CheckpointError(source + ": malformed tensor header (" + e.what() + ")");
    }
    return file;
}

void save(const TensorFile &file, const std::filesystem::path &path) {
    const std::string bytes = serialize(file);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw CheckpointError("cannot open " + tmp.string() + " for writing");
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            std::filesystem::remove(tmp);
            throw CheckpointError("failed writing " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

TensorFile load(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CheckpointError("cannot open " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return deserialize(buffer.str(), path.string());
}

} // namespace crossmpi::safetensors
