// Copyright (c) 2026 The loraforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "forge/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "forge/common.hpp"
#include "forge/hash.hpp"

namespace forge {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "container payloads are little-endian; big-endian hosts are unsupported");

void Container::put(const std::string& name, Tensor<float> t) {
    if (arrays.count(name)) throw ContractError("container already holds array '" + name + "'");
    arrays.emplace(name, std::move(t));
}

const Tensor<float>& Container::get(const std::string& name) const {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw ArtifactError("container is missing array '" + name + "'");
    return it->second;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ArtifactError("cannot open '" + tmp.string() + "' for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw ArtifactError("short write to '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArtifactError("missing file '" + path.string() + "'");
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return content;
}

void save_container(const Container& c, const std::filesystem::path& path) {
    json header;
    header["arrays"] = json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, tensor] : c.arrays) {
        const auto bytes = static_cast<std::uint64_t>(tensor.size()) * sizeof(float);
        json entry;
        entry["name"] = name;
        entry["shape"] = tensor.shape();
        entry["dtype"] = "f32";
        entry["offset"] = offset;
        entry["crc32"] = hex32(crc32(tensor.data(), static_cast<std::size_t>(bytes)));
        header["arrays"].push_back(entry);
        offset += bytes;
    }
    header["meta"] = c.meta_json.empty() ? json::object() : json::parse(c.meta_json);
    const std::string header_bytes = header.dump();

    std::string blob;
    blob.reserve(24 + header_bytes.size() + offset);
    blob.append(kContainerMagic, sizeof(kContainerMagic));
    const std::uint32_t version = kContainerVersion;
    blob.append(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::uint64_t header_len = header_bytes.size();
    blob.append(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    blob.append(header_bytes);
    for (const auto& [name, tensor] : c.arrays)
        blob.append(reinterpret_cast<const char*>(tensor.data()),
                    static_cast<std::size_t>(tensor.size()) * sizeof(float));
    write_file_atomic(path, blob);
}

Container load_container(const std::filesystem::path& path) {
    const std::string blob = read_file(path);
    const auto fail = [&](const std::string& why) -> ArtifactError {
        return ArtifactError("corrupt container '" + path.string() + "': " + why);
    };
    if (blob.size() < 20) throw fail("truncated preamble");
    if (std::memcmp(blob.data(), kContainerMagic, sizeof(kContainerMagic)) != 0)
        throw fail("bad magic");
    std::uint32_t version = 0;
    std::memcpy(&version, blob.data() + 8, sizeof(version));
    if (version != kContainerVersion) throw fail("unsupported version " + std::to_string(version));
    std::uint64_t header_len = 0;
    std::memcpy(&header_len, blob.data() + 12, sizeof(header_len));
    if (blob.size() < 20 + header_len) throw fail("truncated header");
    json header;
    try {
        header = json::parse(blob.substr(20, header_len));
    } catch (const json::exception& e) {
        throw fail(std::string("header is not valid JSON: ") + e.what());
    }
    const std::size_t payload_start = 20 + static_cast<std::size_t>(header_len);

    Container c;
    c.meta_json = header.value("meta", json::object()).dump();
    for (const auto& entry : header.at("arrays")) {
        const std::string name = entry.at("name").get<std::string>();
        const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
        if (entry.at("dtype").get<std::string>() != "f32") throw fail("unsupported dtype");
        const auto offset = entry.at("offset").get<std::uint64_t>();
        const auto count = static_cast<std::size_t>(shape_size(shape));
        const std::size_t begin = payload_start + static_cast<std::size_t>(offset);
        const std::size_t bytes = count * sizeof(float);
        if (begin + bytes > blob.size()) throw fail("array '" + name + "' exceeds payload");
        const std::string expected = entry.at("crc32").get<std::string>();
        const std::string actual = hex32(crc32(blob.data() + begin, bytes));
        if (expected != actual)
            throw fail("array '" + name + "' checksum mismatch, expected " + expected + " got " +
                       actual);
        std::vector<float> values(count);
        std::memcpy(values.data(), blob.data() + begin, bytes);
        c.arrays.emplace(name, Tensor<float>(shape, std::move(values)));
    }
    return c;
}

std::string file_hash(const std::filesystem::path& path) {
    const std::string blob = read_file(path);
    return hex64(fnv1a64(blob.data(), blob.size()));
}

}  // namespace forge
