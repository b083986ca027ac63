// Copyright (c) 2026 The loraforge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "forge/lora.hpp"
#include "forge/model.hpp"
#include "forge/tasks.hpp"

namespace forge {

// Ranks above this cannot be hosted by the toy architecture's target layers.
inline constexpr int kMaxLoraRank = 32;

struct CorpusConfig {
    std::uint64_t seed = 1;
    int input_dim = kTaskInputDim;
    int hidden_dim = 32;
    int classes = kTaskClasses;
    int train_examples = 512;
    int eval_examples = 512;
    int batch = 64;
    int pretrain_steps = 900;
    int evolve_steps = 300;
    int lora_steps = 500;
    double pretrain_lr = 3e-3;
    double evolve_lr = 1.5e-3;
    double lora_lr = 1e-2;
    int rank = 8;
    int seeds_per_cell = 4;
    std::vector<std::string> train_versions = {"t0", "t1", "t2"};
    std::vector<std::string> heldout_versions = {"t3", "t4"};
    std::vector<std::string> task_filter;  // empty means all six tasks

    ArchMeta arch_meta() const {
        ArchMeta meta;
        meta.input_dim = input_dim;
        meta.hidden_dims = {hidden_dim, hidden_dim};
        meta.output_dim = classes;
        return meta;
    }
};

int version_index(const std::string& version_id);  // "t3" -> 3

// Pretrains the t0 base on the task-input mixture with the generic version-0
// label rule. pretrain_steps == 0 yields the recorded random initialization.
BaseModel<float> pretrain_base(const CorpusConfig& cfg, const std::vector<TaskSpec>& suite);

// Continual training of the previous snapshot on the next version's shifted
// stream. Zero-step (or otherwise weight-preserving) evolution is rejected.
BaseModel<float> evolve_base(const BaseModel<float>& prev, int next_index, const CorpusConfig& cfg,
                             const std::vector<TaskSpec>& suite);

struct CorpusEntry {
    LoraAdapter<float> adapter;
    std::string base_version;
    std::string task_id;
    int seed = 0;
    int rank = 0;
    double eval_accuracy = 0.0;
    double zero_shot = 0.0;
    bool heldout = false;
};

// Trains one adapter with the base frozen; records held-out accuracy and the
// base's zero-shot accuracy for the same task.
CorpusEntry finetune_lora(const BaseModel<float>& base, const TaskSpec& task, int rank, int seed,
                          const CorpusConfig& cfg);

double eval_zero_shot(const BaseModel<float>& base, const TaskSpec& task, const CorpusConfig& cfg);
double eval_adapter(const BaseModel<float>& base, const LoraAdapter<float>& adapter,
                    const TaskSpec& task, const CorpusConfig& cfg);

// Checkpoint IO for bases and adapters (binary container files).
void save_base_model(const BaseModel<float>& model, const std::filesystem::path& path);
BaseModel<float> load_base_model(const std::filesystem::path& path);
void save_adapter(const LoraAdapter<float>& adapter, const std::filesystem::path& path);
LoraAdapter<float> load_adapter(const std::filesystem::path& path);

struct ManifestEntry {
    std::string base_version;
    std::string task_id;
    int seed = 0;
    int rank = 0;
    std::string file;  // relative to the corpus directory
    std::string hash;
    double eval_accuracy = 0.0;
    double zero_shot = 0.0;
    bool heldout = false;
};

struct CorpusManifest {
    std::uint64_t seed = 0;
    std::string config_echo;  // serialized corpus config JSON
    std::vector<std::string> task_ids;
    std::map<std::string, std::string> task_prompts;
    std::vector<std::string> versions;                    // build order t0..tN
    std::map<std::string, std::string> base_files;        // version -> relative path
    std::map<std::string, std::string> base_hashes;       // version -> content hash
    std::map<std::string, double> base_final_loss;        // version -> last training loss
    std::map<std::string, std::map<std::string, double>> zero_shot;  // version -> task -> acc
    std::vector<ManifestEntry> entries;
    std::string manifest_hash;  // hash over all referenced checkpoint hashes

    const ManifestEntry* find(const std::string& version, const std::string& task, int seed) const;
    std::vector<const ManifestEntry*> cell(const std::string& version, const std::string& task,
                                           bool include_heldout) const;
};

std::string corpus_config_json(const CorpusConfig& cfg);
CorpusConfig corpus_config_from_json(const std::string& text);

// Builds bases (train + held-out versions), trains every (version, task, seed)
// adapter cell, persists checkpoints under `dir` and writes manifest.json.
CorpusManifest build_corpus(const CorpusConfig& cfg, const std::filesystem::path& dir);

void save_manifest(const CorpusManifest& manifest, const std::filesystem::path& path);
CorpusManifest load_manifest(const std::filesystem::path& path);

}  // namespace forge
