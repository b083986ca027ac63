// Copyright (c) 2026 The loraforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "forge/tasks.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "forge/common.hpp"

namespace forge {

namespace {

constexpr double kDistractorStd = 0.3;
constexpr double kLinDistractStd = 1.0;

void fill_distractors(float* x, int dim, int first, double stddev, Rng& rng) {
    for (int d = first; d < dim; ++d) x[d] = static_cast<float>(stddev * rng.normal());
}

// Draws one point of the requested class into x[0..dim).
void sample_point(TaskFamily family, int label, float* x, int dim, Rng& rng) {
    int signal_dims = 2;
    double distractor_std = kDistractorStd;
    switch (family) {
        case TaskFamily::Moons: {
            const double theta = rng.uniform(0.0, std::numbers::pi);
            double x0 = std::cos(theta) - 0.5;
            double x1 = std::sin(theta) - 0.25;
            if (label == 1) {
                x0 = 0.5 - std::cos(theta);
                x1 = 0.25 - std::sin(theta);
            }
            x[0] = static_cast<float>(x0 + 0.1 * rng.normal());
            x[1] = static_cast<float>(x1 + 0.1 * rng.normal());
            break;
        }
        case TaskFamily::XorQuadrants: {
            auto margin_uniform = [&]() {
                double v;
                do {
                    v = rng.uniform(-1.2, 1.2);
                } while (std::abs(v) < 0.15);
                return v;
            };
            double x0 = margin_uniform();
            double x1 = margin_uniform();
            if (((x0 > 0.0) != (x1 > 0.0)) != (label == 1)) x0 = -x0;
            x[0] = static_cast<float>(x0);
            x[1] = static_cast<float>(x1);
            break;
        }
        case TaskFamily::Blobs: {
            const double cx = label == 1 ? 0.7 : -0.7;
            x[0] = static_cast<float>(cx + 0.45 * rng.normal());
            x[1] = static_cast<float>(cx + 0.45 * rng.normal());
            x[2] = static_cast<float>(cx + 0.45 * rng.normal());
            signal_dims = 3;
            break;
        }
        case TaskFamily::Parity: {
            auto margin_uniform = [&]() {
                double v;
                do {
                    v = rng.uniform(-1.0, 1.0);
                } while (std::abs(v) < 0.2);
                return v;
            };
            double v0 = margin_uniform();
            double v1 = margin_uniform();
            double v2 = margin_uniform();
            const int parity = ((v0 > 0) ? 1 : 0) ^ ((v1 > 0) ? 1 : 0) ^ ((v2 > 0) ? 1 : 0);
            if (parity != label) v2 = -v2;
            x[0] = static_cast<float>(v0);
            x[1] = static_cast<float>(v1);
            x[2] = static_cast<float>(v2);
            signal_dims = 3;
            break;
        }
        case TaskFamily::RingVsDisk: {
            const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const double r = label == 1 ? rng.uniform(1.0, 1.45) : rng.uniform(0.25, 0.7);
            x[0] = static_cast<float>(r * std::cos(theta));
            x[1] = static_cast<float>(r * std::sin(theta));
            break;
        }
        case TaskFamily::LinDistract: {
            double x0, x1, s;
            do {
                x0 = rng.uniform(-1.2, 1.2);
                x1 = rng.uniform(-1.2, 1.2);
                s = 0.9 * x0 + 0.35 * x1;
            } while (std::abs(s) < 0.1);
            if ((s > 0.0) != (label == 1)) {
                x0 = -x0;
                x1 = -x1;
            }
            x[0] = static_cast<float>(x0);
            x[1] = static_cast<float>(x1);
            distractor_std = kLinDistractStd;
            break;
        }
    }
    fill_distractors(x, dim, signal_dims, distractor_std, rng);
}

std::string family_description(TaskFamily family) {
    switch (family) {
        case TaskFamily::Moons:
            return "two-moons task: classify points from two interleaved crescent-shaped clusters";
        case TaskFamily::XorQuadrants:
            return "xor-of-quadrants task: the class is the exclusive-or of the signs of the "
                   "first two coordinates";
        case TaskFamily::Blobs:
            return "gaussian-blobs task: separate two Gaussian clusters on the main diagonal of the "
                   "first three coordinates";
        case TaskFamily::Parity:
            return "parity-of-thresholds task: the class is the parity of how many of the first "
                   "three coordinates exceed zero";
        case TaskFamily::RingVsDisk:
            return "ring-vs-disk task: points on an inner disk versus an outer ring";
        case TaskFamily::LinDistract:
            return "linear-with-distractors task: a linear rule on two coordinates hidden among "
                   "strong distractor dimensions";
    }
    return {};
}

std::string few_shot_examples(const TaskSpec& spec) {
    Rng rng = Rng::stream(spec.dataset_seed, "prompt-examples");
    std::string out;
    char buf[96];
    for (int i = 0; i < 4; ++i) {
        const int label = i % 2;
        float x[kTaskInputDim] = {};
        sample_point(spec.family, label, x, spec.input_dim, rng);
        std::snprintf(buf, sizeof(buf), " (x0=%.2f, x1=%.2f) -> class %d;",
                      static_cast<double>(x[0]), static_cast<double>(x[1]), label);
        out += buf;
    }
    return out;
}

}  // namespace

std::vector<TaskSpec> make_task_suite(std::uint64_t seed) {
    const std::pair<const char*, TaskFamily> families[] = {
        {"moons", TaskFamily::Moons},     {"xor", TaskFamily::XorQuadrants},
        {"blobs", TaskFamily::Blobs},     {"parity", TaskFamily::Parity},
        {"ring", TaskFamily::RingVsDisk}, {"lindist", TaskFamily::LinDistract},
    };
    std::vector<TaskSpec> suite;
    for (const auto& [task_id, family] : families) {
        TaskSpec spec;
        spec.task_id = task_id;
        spec.family = family;
        spec.input_dim = kTaskInputDim;
        spec.dataset_seed = fnv1a64(task_id) ^ (seed * 0x9E3779B97F4A7C15ULL);
        spec.prompt_text = "LoRA adapter for the " + family_description(family) +
                           ". Examples:" + few_shot_examples(spec);
        suite.push_back(std::move(spec));
    }
    return suite;
}

LabeledSet sample_task_dataset(const TaskSpec& spec, int n, std::uint64_t salt) {
    if (n <= 0) throw ConfigError("dataset size must be positive");
    Rng rng = Rng::stream(spec.dataset_seed, "data/" + std::to_string(salt));
    LabeledSet set;
    set.inputs = Tensor<float>({n, spec.input_dim});
    set.labels.resize(static_cast<std::size_t>(n));
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    rng.shuffle(order);
    for (int i = 0; i < n; ++i) {
        const int label = i % 2;  // balanced by construction
        const int row = order[static_cast<std::size_t>(i)];
        sample_point(spec.family, label,
                     set.inputs.data() + static_cast<Index>(row) * spec.input_dim, spec.input_dim,
                     rng);
        set.labels[static_cast<std::size_t>(row)] = label;
    }
    return set;
}

LabeledSet task_train_split(const TaskSpec& spec, int n) { return sample_task_dataset(spec, n, 1); }
LabeledSet task_eval_split(const TaskSpec& spec, int n) { return sample_task_dataset(spec, n, 2); }

double GenericLabeler::score(const float* x) const {
    const double x0 = x[0];
    const double x1 = x[1];
    const double x2 = x[2];
    double s = lin0 * x0 + lin1 * x1;
    s += xor_w * std::tanh(3.0 * x0 * x1);
    s += parity_w * std::tanh(5.0 * x0 * x1 * x2);
    s += radial_w * (1.0 - (x0 * x0 + x1 * x1));
    s += bend_w * std::sin(2.5 * x0);
    return s + bias;
}

GenericLabeler labeler_for_version(std::uint64_t suite_seed, int version_index) {
    GenericLabeler lab;
    lab.version_index = version_index;
    lab.lin0 = 0.45;
    lab.lin1 = -0.25;
    lab.xor_w = -0.45;
    lab.parity_w = 0.60;
    lab.radial_w = -0.40;
    lab.bend_w = 0.30;
    lab.bias = 0.02;
    Rng rng = Rng::stream(suite_seed, "labeler-drift");
    for (int k = 1; k <= version_index; ++k) {
        lab.lin0 *= 1.0 + rng.uniform(-0.07, 0.07);
        lab.lin1 *= 1.0 + rng.uniform(-0.07, 0.07);
        lab.xor_w *= 1.0 + rng.uniform(-0.07, 0.07);
        lab.parity_w *= 1.0 + rng.uniform(-0.07, 0.07);
        lab.radial_w *= 1.0 + rng.uniform(-0.07, 0.07);
        lab.bend_w *= 1.0 + rng.uniform(-0.07, 0.07);
        lab.bias += rng.uniform(-0.015, 0.015);
        lab.rotation += 0.08;
    }
    return lab;
}

LabeledSet sample_pretrain_batch(const std::vector<TaskSpec>& suite, const GenericLabeler& labeler,
                                 int n, Rng& rng) {
    if (suite.empty()) throw ConfigError("pretrain mixture requires a task suite");
    const int dim = suite.front().input_dim;
    LabeledSet set;
    set.inputs = Tensor<float>({n, dim});
    set.labels.resize(static_cast<std::size_t>(n));
    const double c = std::cos(labeler.rotation);
    const double s = std::sin(labeler.rotation);
    for (int i = 0; i < n; ++i) {
        const auto task =
            static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(suite.size()) - 1));
        float* x = set.inputs.data() + static_cast<Index>(i) * dim;
        sample_point(suite[task].family, static_cast<int>(rng.uniform_int(0, 1)), x, dim, rng);
        const double x0 = x[0];
        const double x1 = x[1];
        x[0] = static_cast<float>(c * x0 - s * x1);
        x[1] = static_cast<float>(s * x0 + c * x1);
        set.labels[static_cast<std::size_t>(i)] = labeler.label(x);
    }
    return set;
}

}  // namespace forge
