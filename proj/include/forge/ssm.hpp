// Copyright (c) 2026 The loraforge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <type_traits>
#include <vector>

#include "forge/optim.hpp"
#include "forge/tokenizer.hpp"

namespace forge {

// Gated linear recurrence standing in for a selective state-space block:
//   lambda = sigmoid(decay_logits)                    (per-channel, in (0,1))
//   h_j    = lambda * h_{j-1} + (1 - lambda) * (W_in u_j + b_in)
//   g_j    = sigmoid(W_gate u_j + b_gate)
//   p_j    = W_out (g_j * h_j) + b_out
// The convex-combination state update keeps the recurrence stable; the
// input-dependent output gate keeps it selective.
struct SsmDims {
    int input_dim = 0;   // token size + position dim
    int hidden_dim = 128;
    int proto_dim = 32;
};

inline constexpr const char* kSsmWIn = "ssm/w_in";
inline constexpr const char* kSsmBIn = "ssm/b_in";
inline constexpr const char* kSsmWGate = "ssm/w_gate";
inline constexpr const char* kSsmBGate = "ssm/b_gate";
inline constexpr const char* kSsmDecay = "ssm/decay_logits";
inline constexpr const char* kSsmWOut = "ssm/w_out";
inline constexpr const char* kSsmBOut = "ssm/b_out";
inline constexpr const char* kSsmStart = "ssm/start";  // learned priming input

template <class S>
void init_ssm_params(ParamStore<S>& store, const SsmDims& dims, Rng& rng) {
    const double in_std = 1.0 / std::sqrt(static_cast<double>(dims.input_dim));
    store.add(kSsmWIn, Tensor<S>::randn({dims.hidden_dim, dims.input_dim}, rng, in_std));
    store.add(kSsmBIn, Tensor<S>({dims.hidden_dim}));
    store.add(kSsmWGate, Tensor<S>::randn({dims.hidden_dim, dims.input_dim}, rng, in_std));
    store.add(kSsmBGate, Tensor<S>({dims.hidden_dim}));
    // spread of decay rates: lambda roughly uniform in (0.55, 0.98)
    Tensor<S> decay({dims.hidden_dim});
    for (int i = 0; i < dims.hidden_dim; ++i) {
        const double lambda = rng.uniform(0.55, 0.98);
        decay[i] = static_cast<S>(std::log(lambda / (1.0 - lambda)));
    }
    store.add(kSsmDecay, decay);
    store.add(kSsmWOut, Tensor<S>::randn({dims.proto_dim, dims.hidden_dim}, rng,
                                         1.0 / std::sqrt(static_cast<double>(dims.hidden_dim))));
    store.add(kSsmBOut, Tensor<S>({dims.proto_dim}));
    store.add(kSsmStart, Tensor<S>::randn({dims.input_dim}, rng, 0.1));
}

template <class Ctx>
struct SsmStepOut {
    typename Ctx::T proto;
    typename Ctx::T hidden;
};

template <class Ctx>
SsmStepOut<Ctx> ssm_step(Ctx& cx, const SsmDims& dims, const typename Ctx::T& input,
                         const typename Ctx::T& h_prev) {
    if (Ctx::value_of(input).size() != dims.input_dim ||
        Ctx::value_of(h_prev).size() != dims.hidden_dim)
        throw ShapeError("ssm_step input/state dims do not match block config");
    auto lambda = cx.sigmoid(cx.param(kSsmDecay));
    auto drive = cx.add(cx.matvec(cx.param(kSsmWIn), input), cx.param(kSsmBIn));
    auto hidden = cx.add(cx.mul(lambda, h_prev), cx.mul(cx.one_minus(lambda), drive));
    auto gate = cx.sigmoid(cx.add(cx.matvec(cx.param(kSsmWGate), input), cx.param(kSsmBGate)));
    auto proto = cx.add(cx.matvec(cx.param(kSsmWOut), cx.mul(gate, hidden)), cx.param(kSsmBOut));
    return {proto, hidden};
}

template <class Ctx>
struct SsmScanOut {
    std::vector<typename Ctx::T> protos;
    typename Ctx::T final_hidden;
};

// Sequential scan over prepared input vectors with h_0 = 0.
template <class Ctx>
SsmScanOut<Ctx> ssm_scan_inputs(Ctx& cx, const SsmDims& dims,
                                const std::vector<typename Ctx::T>& inputs) {
    if (inputs.empty()) throw ContractError("ssm scan requires a nonempty sequence");
    using S = typename std::decay_t<decltype(Ctx::value_of(inputs.front()))>::Scalar;
    SsmScanOut<Ctx> out;
    auto hidden = cx.constant(Tensor<S>({dims.hidden_dim}));
    for (const auto& input : inputs) {
        auto step = ssm_step(cx, dims, input, hidden);
        hidden = step.hidden;
        out.protos.push_back(step.proto);
    }
    out.final_hidden = hidden;
    return out;
}

template <class S>
Tensor<S> row_vector(const Tensor<S>& m, int row) {
    Tensor<S> out({m.extent(1)});
    for (int i = 0; i < m.extent(1); ++i) out[i] = m.at(row, i);
    return out;
}

// Spec-level scan over a token sequence: input j is [token_j ; position_j].
template <class Ctx, class S>
SsmScanOut<Ctx> ssm_scan(Ctx& cx, const SsmDims& dims, const TokenSequence<S>& seq) {
    std::vector<typename Ctx::T> inputs;
    for (int j = 0; j < seq.count(); ++j)
        inputs.push_back(cx.constant(
            concat_vec_val(row_vector(seq.tokens, j), row_vector(seq.positions, j))));
    return ssm_scan_inputs(cx, dims, inputs);
}

}  // namespace forge
