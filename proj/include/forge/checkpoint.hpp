// Copyright (c) 2026 The loraforge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "forge/tensor.hpp"

namespace forge {

// Binary tensor container: 8-byte magic, u32 format version, u64 header
// length, JSON header describing the named arrays (shape, dtype, offset,
// crc32) plus free-form metadata, then the raw little-endian f32 payload.
// Files are written via temp-file-then-rename for crash consistency.
inline constexpr char kContainerMagic[8] = {'F', 'O', 'R', 'G', 'E', 'B', 'I', 'N'};
inline constexpr std::uint32_t kContainerVersion = 1;

struct Container {
    std::map<std::string, Tensor<float>> arrays;
    std::string meta_json;  // serialized JSON object; empty means "{}"

    void put(const std::string& name, Tensor<float> t);
    const Tensor<float>& get(const std::string& name) const;
    bool has(const std::string& name) const { return arrays.count(name) > 0; }
};

void save_container(const Container& c, const std::filesystem::path& path);
Container load_container(const std::filesystem::path& path);

// FNV-1a content hash of a whole file, hex-encoded; used by manifests.
std::string file_hash(const std::filesystem::path& path);

// Atomic text write (temp file + rename).
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

}  // namespace forge
