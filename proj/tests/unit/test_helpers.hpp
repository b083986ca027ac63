// Copyright (c) 2026 The loraforge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "forge/optim.hpp"

namespace forge::test {

struct GradcheckOptions {
    std::vector<std::string> names;  // empty: every parameter on the tape
    int max_entries_per_param = 0;   // 0: every entry; else a sampled subset
    std::uint64_t sample_seed = 17;
    double h = 1e-5;
};

// Central-difference gradient oracle. Independent of the tape's backward
// path: it only re-evaluates the forward builder at perturbed parameters.
// Returns the maximum relative error across all checked parameter entries.
template <class Builder>
double gradcheck_max_rel_err(ParamStore<double>& store, Builder&& build,
                             GradcheckOptions opts = {}) {
    GradMap<double> analytic;
    {
        Tape<double> tape;
        TapeCtx<double> cx(tape, store);
        Var<double> loss = build(cx);
        analytic = tape.backward(loss);
    }
    const auto eval_loss = [&]() {
        Tape<double> tape;
        TapeCtx<double> cx(tape, store);
        return build(cx).value()[0];
    };
    Rng rng(opts.sample_seed);
    double max_rel = 0.0;
    const double h = opts.h;
    for (const auto& [name, grad] : analytic) {
        if (!opts.names.empty() &&
            std::find(opts.names.begin(), opts.names.end(), name) == opts.names.end())
            continue;
        Tensor<double>& value = store.mutable_value(name);
        std::vector<Index> entries;
        if (opts.max_entries_per_param > 0 &&
            value.size() > static_cast<Index>(opts.max_entries_per_param)) {
            for (int k = 0; k < opts.max_entries_per_param; ++k)
                entries.push_back(static_cast<Index>(rng.uniform_int(0, value.size() - 1)));
        } else {
            for (Index i = 0; i < value.size(); ++i) entries.push_back(i);
        }
        for (Index i : entries) {
            const double orig = value[i];
            value[i] = orig + h;
            const double fp = eval_loss();
            value[i] = orig - h;
            const double fm = eval_loss();
            value[i] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double a = grad[i];
            const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

inline Tensor<double> rand_tensor(std::vector<int> shape, Rng& rng, double stddev = 1.0) {
    return Tensor<double>::randn(std::move(shape), rng, stddev);
}

}  // namespace forge::test
