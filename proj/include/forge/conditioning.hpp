// Copyright (c) 2026 The loraforge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "forge/model.hpp"
#include "forge/optim.hpp"
#include "forge/tasks.hpp"
#include "forge/tensor.hpp"

namespace forge {

// Deterministic hashed character n-gram featurizer. Stands in for the heavy
// pretrained text/model encoders of full-scale setups; the projections on top
// are trained jointly with the diffusion loss.
struct CondDims {
    int buckets = 2048;
    int ngram = 3;
    int stats_per_layer = 3;  // mean, std, frobenius
    int model_dim = 64;
    int text_dim = 64;

    int combined_dim() const { return model_dim + text_dim; }
};

inline constexpr const char* kCondProjModel = "cond/proj_model";
inline constexpr const char* kCondProjText = "cond/proj_text";

// L2-normalized bucket counts of character n-grams.
Tensor<float> hashed_ngrams(const std::string& text, const CondDims& dims);

// Hashed metadata string plus per-layer weight statistics, so evolved weights
// with identical architecture still produce distinct embeddings.
Tensor<float> base_model_features(const BaseModel<float>& base, const CondDims& dims);
Tensor<float> task_text_features(const TaskSpec& spec, const CondDims& dims);

void init_condition_params(ParamStore<float>& store, const CondDims& dims, int n_base_layers,
                           Rng& rng);

enum class CondProvenance { Real, RandomModel, RandomText };

std::string provenance_name(CondProvenance p);

struct Condition {
    Tensor<float> c_model;
    Tensor<float> c_text;
    Tensor<float> combined;
    CondProvenance provenance = CondProvenance::Real;
};

// Concatenation [c_model ; c_text], validated elementwise.
Condition make_condition(const Tensor<float>& c_model, const Tensor<float>& c_text);

// Projected embeddings through the trained linear maps.
Tensor<float> encode_base_model(const ParamStore<float>& params, const BaseModel<float>& base,
                                const CondDims& dims);
Tensor<float> encode_task_text(const ParamStore<float>& params, const TaskSpec& spec,
                               const CondDims& dims);
Condition encode_condition(const ParamStore<float>& params, const BaseModel<float>& base,
                           const TaskSpec& spec, const CondDims& dims);

// Replaces one half with Gaussian noise scaled to the empirical norm of real
// embeddings; the other half is untouched.
Condition randomize_condition(const Condition& cond, CondProvenance mode, std::uint64_t seed,
                              double target_norm);

// In-graph projection used during training so gradients reach both maps.
// Features enter as context constants prepared by the caller.
template <class Ctx>
typename Ctx::T project_condition(Ctx& cx, const typename Ctx::T& model_features,
                                  const typename Ctx::T& text_features) {
    auto c_model = cx.matvec(cx.param(kCondProjModel), model_features);
    auto c_text = cx.matvec(cx.param(kCondProjText), text_features);
    return cx.concat_vec(c_model, c_text);
}

}  // namespace forge
