// Copyright (c) 2026 The loraforge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "forge/optim.hpp"
#include "forge/tensor.hpp"

namespace forge {

// A named weight tensor of a base model. Linear layers store weight [d_out,
// d_in] and bias [d_out]; only weights are LoRA targets.
template <class S>
struct NamedTensor {
    std::string name;
    Tensor<S> value;
};

struct ArchMeta {
    std::string arch = "mlp";
    int input_dim = 0;
    std::vector<int> hidden_dims;
    int output_dim = 0;
    std::string activation = "silu";

    int layer_count() const { return static_cast<int>(hidden_dims.size()) + 1; }
};

// Toy base model: an MLP with named layers and a recorded version lineage
// (t0 -> t1 -> ... for continually trained snapshots).
template <class S>
struct BaseModel {
    std::string version_id;
    std::vector<std::string> lineage;  // includes version_id as last element
    ArchMeta meta;
    std::vector<NamedTensor<S>> layers;  // W0,b0,W1,b1,... definition order

    const Tensor<S>* find(const std::string& name) const {
        for (const auto& nt : layers)
            if (nt.name == name) return &nt.value;
        return nullptr;
    }

    Tensor<S>* find(const std::string& name) {
        for (auto& nt : layers)
            if (nt.name == name) return &nt.value;
        return nullptr;
    }

    std::string lineage_string() const {
        std::string s;
        for (std::size_t i = 0; i < lineage.size(); ++i) {
            if (i) s += ">";
            s += lineage[i];
        }
        return s;
    }

    // Canonical architecture/lineage description used by the condition encoder.
    std::string metadata_string() const {
        std::string s = "arch=" + meta.arch + "|in=" + std::to_string(meta.input_dim) + "|hidden=";
        for (std::size_t i = 0; i < meta.hidden_dims.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(meta.hidden_dims[static_cast<std::size_t>(i)]);
        }
        s += "|out=" + std::to_string(meta.output_dim);
        s += "|layers=" + std::to_string(meta.layer_count());
        s += "|act=" + meta.activation;
        s += "|version=" + version_id;
        s += "|lineage=" + lineage_string();
        return s;
    }
};

// Weight names follow definition order; these helpers pin the convention.
inline std::string weight_name(int layer) { return "W" + std::to_string(layer); }
inline std::string bias_name(int layer) { return "b" + std::to_string(layer); }

template <class S>
BaseModel<S> init_mlp(const ArchMeta& meta, const std::string& version_id, Rng& rng) {
    BaseModel<S> model;
    model.version_id = version_id;
    model.lineage = {version_id};
    model.meta = meta;
    std::vector<int> dims;
    dims.push_back(meta.input_dim);
    for (int h : meta.hidden_dims) dims.push_back(h);
    dims.push_back(meta.output_dim);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const int d_in = dims[l];
        const int d_out = dims[l + 1];
        const double stddev = std::sqrt(2.0 / static_cast<double>(d_in));
        model.layers.push_back({weight_name(static_cast<int>(l)),
                                Tensor<S>::randn({d_out, d_in}, rng, stddev)});
        model.layers.push_back({bias_name(static_cast<int>(l)), Tensor<S>({d_out})});
    }
    return model;
}

// Forward pass over a batch [N, d_in] with explicit per-layer weights; shared
// by base training, LoRA fine-tuning (merged weights on the tape) and eval.
template <class Ctx>
typename Ctx::T mlp_logits(Ctx& cx, const ArchMeta& meta, const typename Ctx::T& x,
                           const std::vector<typename Ctx::T>& weights,
                           const std::vector<typename Ctx::T>& biases) {
    const int n_layers = meta.layer_count();
    if (static_cast<int>(weights.size()) != n_layers || static_cast<int>(biases.size()) != n_layers)
        throw ShapeError("mlp_logits: expected " + std::to_string(n_layers) + " layers");
    typename Ctx::T h = x;
    for (int l = 0; l < n_layers; ++l) {
        const auto& w = weights[static_cast<std::size_t>(l)];
        h = cx.add_bias_rows(cx.matmul(h, cx.transpose(w)), biases[static_cast<std::size_t>(l)]);
        if (l + 1 < n_layers) h = cx.silu(h);
    }
    return h;
}

template <class S>
int argmax_row(const Tensor<S>& logits, int row) {
    int best = 0;
    S best_v = logits.at(row, 0);
    for (int c = 1; c < logits.extent(1); ++c) {
        if (logits.at(row, c) > best_v) {
            best_v = logits.at(row, c);
            best = c;
        }
    }
    return best;
}

// Plain-value accuracy of an MLP on a labeled batch.
template <class S>
double mlp_accuracy(const BaseModel<S>& model, const Tensor<S>& inputs,
                    const std::vector<int>& labels) {
    std::vector<Tensor<S>> w, b;
    for (int l = 0; l < model.meta.layer_count(); ++l) {
        const Tensor<S>* wl = model.find(weight_name(l));
        const Tensor<S>* bl = model.find(bias_name(l));
        if (!wl || !bl) throw StructuralError("base model is missing layer " + std::to_string(l));
        w.push_back(*wl);
        b.push_back(*bl);
    }
    ParamStore<S> dummy;
    ValueCtx<S> cx(dummy);
    Tensor<S> logits = mlp_logits(cx, model.meta, inputs, w, b);
    int correct = 0;
    for (int i = 0; i < inputs.extent(0); ++i)
        if (argmax_row(logits, i) == labels[static_cast<std::size_t>(i)]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(inputs.extent(0));
}

}  // namespace forge
