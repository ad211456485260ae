// Copyright Contributors to the crossmpi project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/types.h>

#include <filesystem>
#include <map>
#include <string>

// Minimal reader/writer for the safetensors layout: an 8-byte little-endian
// header length, a JSON header mapping names to dtype/shape/byte ranges plus
// a string-to-string "__metadata__" table, then the raw tensor bytes. Names
// are written in sorted order so identical contents give identical bytes.
namespace crossmpi::safetensors {

struct TensorFile {
    std::map<std::string, torch::Tensor> tensors;
    std::map<std::string, std::string> metadata;
};

std::string serialize(const TensorFile &file);
TensorFile deserialize(const std::string &bytes, const std::string &source = "<memory>");

// Writes to a sibling temporary file and renames it into place.
void save(const TensorFile &file, const std::filesystem::path &path);
TensorFile load(const std::filesystem::path &path);

} // namespace crossmpi::safetensors
