// Copyright (c) 2026 The loraforge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "forge/rng.hpp"
#include "forge/tensor.hpp"

namespace forge {

inline constexpr int kTaskInputDim = 32;
inline constexpr int kTaskClasses = 2;

enum class TaskFamily {
    Moons,          // two interleaved crescents
    XorQuadrants,   // sign(x0) xor sign(x1)
    Blobs,          // two Gaussian clusters
    Parity,         // parity of thresholds over three coordinates
    RingVsDisk,     // inner disk vs outer annulus
    LinDistract,    // linear rule buried in strong distractor noise
};

struct TaskSpec {
    std::string task_id;
    TaskFamily family;
    int input_dim = kTaskInputDim;
    std::uint64_t dataset_seed = 0;  // derived from the suite seed and task_id
    std::string prompt_text;         // description plus serialized few-shot examples
    std::string metric = "accuracy";
};

struct LabeledSet {
    Tensor<float> inputs;    // [n, input_dim]
    std::vector<int> labels; // values in [0, kTaskClasses)
};

// Six deterministic binary synthetic tasks. Same seed, same suite, bitwise.
std::vector<TaskSpec> make_task_suite(std::uint64_t seed);

// Balanced sample of n points; deterministic given (spec, salt).
LabeledSet sample_task_dataset(const TaskSpec& spec, int n, std::uint64_t salt);

// Canonical named splits used by fine-tuning and evaluation.
LabeledSet task_train_split(const TaskSpec& spec, int n);
LabeledSet task_eval_split(const TaskSpec& spec, int n);

// Pretraining label rule shared by all versions of a base-model lineage.
// Inputs drawn from the task mixture receive a label from a generic rule
// whose features overlap each task's concept only partially; coefficients
// and a latent-plane rotation drift with the version index, which is how
// continual "evolution" shifts both data and labels between versions.
struct GenericLabeler {
    int version_index = 0;
    double rotation = 0.0;  // applied to the first two coordinates
    double lin0 = 0.0, lin1 = 0.0;
    double xor_w = 0.0, parity_w = 0.0, radial_w = 0.0, bend_w = 0.0;
    double bias = 0.0;

    double score(const float* x) const;
    int label(const float* x) const { return score(x) > 0.0 ? 1 : 0; }
};

GenericLabeler labeler_for_version(std::uint64_t suite_seed, int version_index);

// Inputs pooled across all task distributions (no task labels), transformed
// by the version's latent-plane rotation.
LabeledSet sample_pretrain_batch(const std::vector<TaskSpec>& suite, const GenericLabeler& labeler,
                                 int n, Rng& rng);

}  // namespace forge
