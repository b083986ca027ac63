// Copyright (c) 2026 The loraforge Authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>

#include "forge/checkpoint.hpp"
#include "forge/corpus.hpp"

using namespace forge;
namespace fs = std::filesystem;

namespace {

CorpusConfig fast_config() {
    CorpusConfig cfg;
    cfg.seed = 7;
    cfg.pretrain_steps = 300;
    cfg.evolve_steps = 120;
    cfg.lora_steps = 350;
    return cfg;
}

fs::path temp_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / "forge_corpus_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("task suite is deterministic and balanced") {
    auto a = make_task_suite(1);
    auto b = make_task_suite(1);
    REQUIRE(a.size() == 6);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].task_id == b[i].task_id);
        CHECK(a[i].prompt_text == b[i].prompt_text);
        auto da = sample_task_dataset(a[i], 128, 3);
        auto db = sample_task_dataset(b[i], 128, 3);
        CHECK(da.inputs.bitwise_equal(db.inputs));
        CHECK(da.labels == db.labels);
    }

    // majority-class predictor sits at chance on balanced sets
    for (const auto& spec : a) {
        auto eval = task_eval_split(spec, 512);
        int ones = 0;
        for (int y : eval.labels) ones += y;
        const double majority = std::max(ones, 512 - ones) / 512.0;
        CHECK(majority == doctest::Approx(0.5).epsilon(0.1));
        CHECK(std::abs(majority - 0.5) < 0.05);
    }
}

TEST_CASE("pretraining basics") {
    auto cfg = fast_config();
    auto suite = make_task_suite(cfg.seed);

    // zero steps: the recorded initialization comes back untouched
    CorpusConfig zero_cfg = cfg;
    zero_cfg.pretrain_steps = 0;
    auto frozen = pretrain_base(zero_cfg, suite);
    Rng init_rng = Rng::stream(cfg.seed, "base-init");
    auto reference = init_mlp<float>(cfg.arch_meta(), "t0", init_rng);
    for (std::size_t i = 0; i < frozen.layers.size(); ++i)
        CHECK(frozen.layers[i].value.bitwise_equal(reference.layers[i].value));

    // determinism of the trained snapshot
    auto m1 = pretrain_base(cfg, suite);
    auto m2 = pretrain_base(cfg, suite);
    for (std::size_t i = 0; i < m1.layers.size(); ++i)
        CHECK(m1.layers[i].value.bitwise_equal(m2.layers[i].value));

    // zero-shot strictly above chance, below 0.9 on each task
    for (const auto& spec : suite) {
        const double acc = eval_zero_shot(m1, spec, cfg);
        CHECK(acc > 0.5);
        CHECK(acc < 0.9);
    }
}

TEST_CASE("evolution changes weights and builds five versions") {
    auto cfg = fast_config();
    auto suite = make_task_suite(cfg.seed);
    auto t0 = pretrain_base(cfg, suite);

    CorpusConfig degenerate = cfg;
    degenerate.evolve_steps = 0;
    CHECK_THROWS_AS(evolve_base(t0, 1, degenerate, suite), ConfigError);

    std::vector<BaseModel<float>> chain{t0};
    for (int k = 1; k <= 4; ++k) chain.push_back(evolve_base(chain.back(), k, cfg, suite));
    CHECK(chain.size() == 5);
    CHECK(chain.back().version_id == "t4");
    CHECK(chain.back().lineage_string() == "t0>t1>t2>t3>t4");
    for (std::size_t k = 0; k + 1 < chain.size(); ++k)
        for (std::size_t i = 0; i < t0.layers.size(); ++i) {
            const auto delta =
                (chain[k + 1].layers[i].value.vec() - chain[k].layers[i].value.vec()).norm();
            CHECK(delta > 0.0f);
        }
}

TEST_CASE("finetune_lora improves over zero-shot across ranks") {
    auto cfg = fast_config();
    auto suite = make_task_suite(cfg.seed);
    auto base = pretrain_base(cfg, suite);

    auto entry = finetune_lora(base, suite[0], cfg.rank, 1, cfg);
    CHECK(entry.rank == 8);  // default rank
    CHECK(entry.eval_accuracy >= entry.zero_shot + 0.05);

    // quick rank sweep: every rank in the ablation grid is trainable
    CorpusConfig sweep_cfg = cfg;
    sweep_cfg.lora_steps = 150;
    for (int r : {2, 4, 8, 16, 32}) {
        auto e = finetune_lora(base, suite[2], r, 1, sweep_cfg);
        CHECK(e.eval_accuracy > e.zero_shot);
    }
}

TEST_CASE("build_corpus S=1 yields 18 training entries and reloads exactly") {
    auto cfg = fast_config();
    cfg.seeds_per_cell = 1;
    cfg.heldout_versions.clear();  // keep the unit test light
    const auto dir = temp_dir("s1");
    auto manifest = build_corpus(cfg, dir);

    int training = 0;
    for (const auto& e : manifest.entries)
        if (!e.heldout) ++training;
    CHECK(training == 18);

    // every entry reloads and re-evaluates to its recorded accuracy exactly
    auto suite = make_task_suite(cfg.seed);
    for (const auto& e : manifest.entries) {
        auto base = load_base_model(dir / manifest.base_files.at(e.base_version));
        auto adapter = load_adapter(dir / e.file);
        const TaskSpec* spec = nullptr;
        for (const auto& s : suite)
            if (s.task_id == e.task_id) spec = &s;
        REQUIRE(spec != nullptr);
        CHECK(eval_adapter(base, adapter, *spec, cfg) == e.eval_accuracy);
        CHECK(e.eval_accuracy >= e.zero_shot + 0.05);
    }
}

TEST_CASE("corpus build is reproducible and manifest hash tracks content") {
    auto cfg = fast_config();
    cfg.seeds_per_cell = 1;
    cfg.train_versions = {"t0"};
    cfg.heldout_versions.clear();
    cfg.task_filter = {"moons", "ring"};

    const auto d1 = temp_dir("rep1");
    const auto d2 = temp_dir("rep2");
    build_corpus(cfg, d1);
    build_corpus(cfg, d2);
    CHECK(read_file(d1 / "manifest.json") == read_file(d2 / "manifest.json"));

    // flipping one checkpoint byte changes the recomputed manifest hash
    auto manifest = load_manifest(d1 / "manifest.json");
    const auto target = d1 / manifest.entries.front().file;
    std::string blob = read_file(target);
    blob[blob.size() - 1] ^= 0x01;
    write_file_atomic(target, blob);
    CHECK(file_hash(target) != manifest.entries.front().hash);
}
