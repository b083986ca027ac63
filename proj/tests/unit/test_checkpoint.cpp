// Copyright (c) 2026 The loraforge Authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "forge/checkpoint.hpp"
#include "forge/rng.hpp"

using namespace forge;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    auto dir = fs::temp_directory_path() / "forge_ckpt_test";
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("container round trip preserves bytes and metadata") {
    Rng rng(1);
    Container c;
    c.put("a", Tensor<float>::randn({3, 4}, rng));
    c.put("b/nested", Tensor<float>::randn({7}, rng));
    c.meta_json = R"({"kind":"test","rank":8})";

    const auto path = temp_dir() / "round_trip.ckpt";
    save_container(c, path);
    auto loaded = load_container(path);

    CHECK(loaded.get("a").bitwise_equal(c.get("a")));
    CHECK(loaded.get("b/nested").bitwise_equal(c.get("b/nested")));
    CHECK(loaded.meta_json.find("\"rank\":8") != std::string::npos);
    CHECK_THROWS_AS(loaded.get("missing"), ArtifactError);
}

TEST_CASE("container writes are deterministic") {
    Rng rng(2);
    Container c;
    c.put("w", Tensor<float>::randn({5, 5}, rng));
    const auto p1 = temp_dir() / "det1.ckpt";
    const auto p2 = temp_dir() / "det2.ckpt";
    save_container(c, p1);
    save_container(c, p2);
    CHECK(read_file(p1) == read_file(p2));
    CHECK(file_hash(p1) == file_hash(p2));
}

TEST_CASE("corrupt payload is detected with a named checksum") {
    Rng rng(3);
    Container c;
    c.put("w", Tensor<float>::randn({4, 4}, rng));
    const auto path = temp_dir() / "corrupt.ckpt";
    save_container(c, path);

    std::string blob = read_file(path);
    blob[blob.size() - 1] ^= 0x01;  // flip one payload bit
    write_file_atomic(path, blob);

    CHECK_THROWS_AS(load_container(path), ArtifactError);
    try {
        load_container(path);
    } catch (const ArtifactError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("checksum") != std::string::npos);
        CHECK(msg.find(path.string()) != std::string::npos);
    }
}

TEST_CASE("missing file raises artifact error") {
    CHECK_THROWS_AS(load_container(temp_dir() / "does_not_exist.ckpt"), ArtifactError);
}
