// Copyright (c) 2026 The loraforge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "forge/model.hpp"
#include "forge/tensor.hpp"

namespace forge {

// One low-rank factor pair: the update to layer `layer_id` is delta = B * A.
template <class S>
struct LoraFactor {
    std::string layer_id;
    Tensor<S> B;  // [d_out, r]
    Tensor<S> A;  // [r, d_in]
    int rank = 0;

    int d_out() const { return B.extent(0); }
    int d_in() const { return A.extent(1); }

    void validate() const {
        if (B.rank() != 2 || A.rank() != 2) throw ShapeError("LoRA factors must be matrices");
        if (rank <= 0) throw ConfigError("LoRA rank must be positive");
        if (B.extent(1) != rank || A.extent(0) != rank)
            throw ShapeError("factor shapes disagree on rank for layer " + layer_id);
        if (rank > std::min(d_out(), d_in()))
            throw ConfigError("rank " + std::to_string(rank) + " exceeds min dimension of layer " +
                              layer_id);
    }
};

struct Provenance {
    std::string kind = "trained";  // "trained" or "generated"
    std::string base_version;
    std::string task_id;
    int seed = 0;

    static Provenance generated() { return Provenance{"generated", {}, {}, 0}; }
};

// Ordered collection of factors with one shared rank. Ordering is canonical:
// the traversal order of the base model's target layers.
template <class S>
struct LoraAdapter {
    std::vector<LoraFactor<S>> factors;
    int rank = 0;
    Provenance provenance;

    void validate() const {
        if (factors.empty()) throw StructuralError("adapter has no factors");
        std::set<std::string> seen;
        for (const auto& f : factors) {
            f.validate();
            if (f.rank != rank) throw StructuralError("adapter factors disagree on rank");
            if (!seen.insert(f.layer_id).second)
                throw StructuralError("duplicate layer_id '" + f.layer_id + "' in adapter");
        }
    }

    const LoraFactor<S>* find(const std::string& layer_id) const {
        for (const auto& f : factors)
            if (f.layer_id == layer_id) return &f;
        return nullptr;
    }
};

// delta = B * A, the dense update for one layer.
template <class S>
Tensor<S> delta_weight(const LoraFactor<S>& f) {
    f.validate();
    return matmul_val(f.B, f.A);
}

// Returns a new model with W := W0 + B*A on each targeted layer; the input
// model is untouched. Unknown layers or shape mismatches indicate the adapter
// was generated for a different base and raise a structural error.
template <class S>
BaseModel<S> merge_adapter(const BaseModel<S>& base, const LoraAdapter<S>& adapter) {
    adapter.validate();
    BaseModel<S> merged = base;
    for (const auto& f : adapter.factors) {
        Tensor<S>* w = merged.find(f.layer_id);
        if (!w)
            throw StructuralError("adapter targets unknown layer '" + f.layer_id +
                                  "' of base model " + base.version_id);
        if (w->rank() != 2 || w->extent(0) != f.d_out() || w->extent(1) != f.d_in())
            throw StructuralError("adapter factor shape [" + std::to_string(f.d_out()) + "," +
                                  std::to_string(f.d_in()) + "] does not match layer '" +
                                  f.layer_id + "' of base model " + base.version_id);
        const Tensor<S> delta = delta_weight(f);
        if (delta.vec().isZero(S(0))) continue;  // exact no-op keeps base bits
        w->vec() += delta.vec();
    }
    return merged;
}

// Trainable parameter count for adapting `target_layers` of `base` at rank r:
// r * (d_in + d_out) per layer (2rd for square layers).
template <class S>
std::int64_t lora_param_count(const BaseModel<S>& base, const std::vector<std::string>& target_layers,
                              int r) {
    if (r <= 0) throw ConfigError("LoRA rank must be >= 1");
    std::int64_t count = 0;
    for (const auto& layer_id : target_layers) {
        const Tensor<S>* w = base.find(layer_id);
        if (!w) throw StructuralError("unknown target layer '" + layer_id + "'");
        if (w->rank() != 2) throw StructuralError("target layer '" + layer_id + "' is not a matrix");
        count += static_cast<std::int64_t>(r) * (w->extent(0) + w->extent(1));
    }
    return count;
}

// Target layers of the toy base models: every linear layer whose minimum
// dimension can host the configured ranks. The classifier head (out_dim x
// hidden) is excluded because its minimum dimension is the class count.
template <class S>
std::vector<std::string> default_target_layers(const BaseModel<S>& base, int max_rank) {
    std::vector<std::string> out;
    for (const auto& nt : base.layers) {
        if (nt.value.rank() != 2) continue;
        if (std::min(nt.value.extent(0), nt.value.extent(1)) >= max_rank)
            out.push_back(nt.name);
    }
    if (out.empty())
        throw ConfigError("no base layer can host rank " + std::to_string(max_rank));
    return out;
}

// Fresh adapter positioned at delta = 0: B zero, A ~ N(0, 0.02^2).
template <class S>
LoraAdapter<S> init_adapter(const BaseModel<S>& base, const std::vector<std::string>& target_layers,
                            int r, Rng& rng) {
    LoraAdapter<S> adapter;
    adapter.rank = r;
    for (const auto& layer_id : target_layers) {
        const Tensor<S>* w = base.find(layer_id);
        if (!w) throw StructuralError("unknown target layer '" + layer_id + "'");
        LoraFactor<S> f;
        f.layer_id = layer_id;
        f.rank = r;
        f.B = Tensor<S>({w->extent(0), r});
        f.A = Tensor<S>::randn({r, w->extent(1)}, rng, 0.02);
        f.validate();
        adapter.factors.push_back(std::move(f));
    }
    adapter.validate();
    return adapter;
}

}  // namespace forge
