// Copyright (c) 2026 The loraforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "forge/conditioning.hpp"

#include <cmath>

#include "forge/hash.hpp"

namespace forge {

Tensor<float> hashed_ngrams(const std::string& text, const CondDims& dims) {
    if (text.empty()) throw ConfigError("cannot featurize an empty string");
    Tensor<float> counts({dims.buckets});
    const int n = dims.ngram;
    if (static_cast<int>(text.size()) >= n) {
        for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= text.size(); ++i) {
            const std::uint64_t h = fnv1a64(text.data() + i, static_cast<std::size_t>(n));
            counts[static_cast<Index>(h % static_cast<std::uint64_t>(dims.buckets))] += 1.0f;
        }
    } else {
        counts[static_cast<Index>(fnv1a64(text) % static_cast<std::uint64_t>(dims.buckets))] = 1.0f;
    }
    const float norm = counts.vec().norm();
    if (norm > 0.0f) counts.vec() /= norm;
    return counts;
}

Tensor<float> base_model_features(const BaseModel<float>& base, const CondDims& dims) {
    if (base.meta.input_dim <= 0 || base.meta.output_dim <= 0 || base.meta.hidden_dims.empty() ||
        base.meta.activation.empty() || base.version_id.empty())
        throw ConfigError("base model metadata is incomplete");
    const Tensor<float> text_part = hashed_ngrams(base.metadata_string(), dims);
    Tensor<float> feat({dims.buckets + dims.stats_per_layer * static_cast<int>(base.layers.size())});
    feat.vec().head(dims.buckets) = text_part.vec();
    Index cursor = dims.buckets;
    for (const auto& nt : base.layers) {
        double mean = 0.0, sq = 0.0;
        for (Index i = 0; i < nt.value.size(); ++i) {
            mean += nt.value[i];
            sq += static_cast<double>(nt.value[i]) * nt.value[i];
        }
        mean /= static_cast<double>(nt.value.size());
        const double var = sq / static_cast<double>(nt.value.size()) - mean * mean;
        feat[cursor++] = static_cast<float>(mean);
        feat[cursor++] = static_cast<float>(std::sqrt(std::max(0.0, var)));
        feat[cursor++] = static_cast<float>(std::sqrt(sq));
    }
    return feat;
}

Tensor<float> task_text_features(const TaskSpec& spec, const CondDims& dims) {
    if (spec.prompt_text.empty()) throw ConfigError("task prompt text is empty");
    return hashed_ngrams(spec.prompt_text, dims);
}

void init_condition_params(ParamStore<float>& store, const CondDims& dims, int n_base_layers,
                           Rng& rng) {
    const int model_feat_dim = dims.buckets + dims.stats_per_layer * n_base_layers;
    store.add(kCondProjModel, Tensor<float>::randn({dims.model_dim, model_feat_dim}, rng, 0.05));
    store.add(kCondProjText, Tensor<float>::randn({dims.text_dim, dims.buckets}, rng, 0.05));
}

std::string provenance_name(CondProvenance p) {
    switch (p) {
        case CondProvenance::Real: return "real";
        case CondProvenance::RandomModel: return "random_model";
        case CondProvenance::RandomText: return "random_text";
    }
    return "real";
}

Condition make_condition(const Tensor<float>& c_model, const Tensor<float>& c_text) {
    if (c_model.rank() != 1 || c_text.rank() != 1)
        throw ShapeError("condition halves must be vectors");
    Condition cond;
    cond.c_model = c_model;
    cond.c_text = c_text;
    cond.combined = concat_vec_val(c_model, c_text);
    for (Index i = 0; i < c_model.size(); ++i)
        if (cond.combined[i] != c_model[i]) throw ContractError("condition concatenation mismatch");
    for (Index i = 0; i < c_text.size(); ++i)
        if (cond.combined[c_model.size() + i] != c_text[i])
            throw ContractError("condition concatenation mismatch");
    return cond;
}

Tensor<float> encode_base_model(const ParamStore<float>& params, const BaseModel<float>& base,
                                const CondDims& dims) {
    return matvec_val(params.value(kCondProjModel), base_model_features(base, dims));
}

Tensor<float> encode_task_text(const ParamStore<float>& params, const TaskSpec& spec,
                               const CondDims& dims) {
    return matvec_val(params.value(kCondProjText), task_text_features(spec, dims));
}

Condition encode_condition(const ParamStore<float>& params, const BaseModel<float>& base,
                           const TaskSpec& spec, const CondDims& dims) {
    return make_condition(encode_base_model(params, base, dims),
                          encode_task_text(params, spec, dims));
}

Condition randomize_condition(const Condition& cond, CondProvenance mode, std::uint64_t seed,
                              double target_norm) {
    if (cond.provenance != CondProvenance::Real)
        throw ContractError("randomize_condition expects a real condition");
    if (mode == CondProvenance::Real)
        throw ConfigError("randomize_condition mode must name a half to replace");
    if (!(target_norm > 0.0)) throw ConfigError("empirical norm must be positive");
    Rng rng = Rng::stream(seed, "randomize-condition/" + provenance_name(mode));
    const Tensor<float>& half =
        mode == CondProvenance::RandomModel ? cond.c_model : cond.c_text;
    Tensor<float> noise = Tensor<float>::randn(half.shape(), rng);
    const float norm = noise.vec().norm();
    if (norm > 0.0f) noise.vec() *= static_cast<float>(target_norm) / norm;
    Condition out = mode == CondProvenance::RandomModel
                        ? make_condition(noise, cond.c_text)
                        : make_condition(cond.c_model, noise);
    out.provenance = mode;
    return out;
}

}  // namespace forge
