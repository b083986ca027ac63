// Copyright (c) 2026 The loraforge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "forge/conditioning.hpp"
#include "forge/denoiser.hpp"
#include "forge/parallel.hpp"
#include "forge/schedule.hpp"
#include "forge/ssm.hpp"
#include "forge/tokenizer.hpp"

namespace forge {

// Reference iteration count for full-scale training; desk configs are far
// smaller and every threshold downstream is tuned to the desk defaults.
inline constexpr int kFullScaleTrainIterations = 100000;

struct DiffusionDims {
    int token_size = 64;
    int position_dim = 16;
    SsmDims ssm;
    DenoiserDims den;

    void validate() const {
        if (ssm.input_dim != token_size + position_dim)
            throw ConfigError("ssm input dim must equal token size + position dim");
        if (den.token_size != token_size) throw ConfigError("denoiser token size mismatch");
        if (den.proto_dim != ssm.proto_dim) throw ConfigError("prototype dim mismatch");
    }
};

// One (token index, time step) training sample with its pre-drawn noise.
template <class S>
struct JtDraw {
    int token = 0;  // 0-based position in the sequence
    int t = 1;      // 1..T
    Tensor<S> eps;  // [token_size]
};

template <class S>
Tensor<S> masked_token(const TokenSequence<S>& seq, int j) {
    return mul_val(row_vector(seq.tokens, j), row_vector(seq.mask, j));
}

// Scan inputs for prototype computation: the learned start token primes the
// recurrence, then each clean token (pad slots zeroed, mask applied) feeds the
// next position. The prototype conditioning token j therefore depends only on
// tokens before j, matching how sampling unrolls.
template <class Ctx, class S>
std::vector<typename Ctx::T> prototype_scan_inputs(Ctx& cx, const TokenSequence<S>& seq) {
    std::vector<typename Ctx::T> inputs;
    inputs.push_back(cx.param(kSsmStart));
    for (int j = 0; j + 1 < seq.count(); ++j)
        inputs.push_back(cx.constant(
            concat_vec_val(masked_token(seq, j), row_vector(seq.positions, j))));
    return inputs;
}

// Noise-prediction loss for one sequence: prototypes come from a scan over
// the clean tokens inside the same graph, then each sampled (j, t) adds a
// pad-masked MSE between the true and predicted noise. `predict` is the
// denoiser; tests substitute stubs.
template <class Ctx, class S, class Predictor>
typename Ctx::T sequence_diffusion_loss(Ctx& cx, const DiffusionDims& dims,
                                        const TokenSequence<S>& seq, const typename Ctx::T& cond,
                                        const NoiseSchedule& sched,
                                        const std::vector<JtDraw<S>>& draws,
                                        Predictor&& predict) {
    if (draws.empty()) throw ContractError("diffusion loss requires at least one (j, t) draw");
    auto scan = ssm_scan_inputs(cx, dims.ssm, prototype_scan_inputs(cx, seq));
    typename Ctx::T total = cx.constant(Tensor<S>({1}));
    for (const auto& draw : draws) {
        if (draw.token < 0 || draw.token >= seq.count())
            throw ContractError("draw token index out of range");
        const Tensor<S> mask = row_vector(seq.mask, draw.token);
        const Tensor<S> clean = masked_token(seq, draw.token);
        Tensor<S> noisy = forward_diffuse(clean, draw.t, draw.eps, sched);
        noisy = mul_val(noisy, mask);  // pad slots stay exactly zero
        auto predicted = predict(cx, cx.constant(noisy),
                                 scan.protos[static_cast<std::size_t>(draw.token)], cond, draw.t);
        total = cx.add(total, mse_masked(predicted, draw.eps, mask));
    }
    return cx.affine(total, S(1) / static_cast<S>(draws.size()), S(0));
}

// Production predictor: the conditional 1D-conv denoiser.
template <class S>
struct DenoiserPredictor {
    const DenoiserDims* dims;
    template <class Ctx>
    typename Ctx::T operator()(Ctx& cx, const typename Ctx::T& u_t, const typename Ctx::T& proto,
                               const typename Ctx::T& cond, int t) const {
        return denoiser_forward(cx, *dims, u_t, proto, cond, t);
    }
};

// A corpus entry prepared for training: clean tokens plus condition features.
struct PreparedSequence {
    TokenSequence<float> seq;
    Tensor<float> model_features;
    Tensor<float> text_features;
};

struct DiffusionTrainConfig {
    int iterations = 20000;
    int batch = 8;
    int draws_per_sequence = 2;
    double lr = 1e-3;
    int warmup = 200;
    double final_lr_frac = 0.2;  // cosine decay floor
    int log_every = 500;
};

struct TrainLogPoint {
    int iteration = 0;
    double loss = 0.0;
};

// Spec-shaped loss entry point: batch of prepared sequences, schedule, rng.
// Builds a tape, projects conditions in-graph, averages per-sequence losses.
// Returns the loss value and, if grads_out is nonnull, the merged gradients.
double diffusion_loss(const ParamStore<float>& params, const DiffusionDims& dims,
                      const NoiseSchedule& sched, const std::vector<const PreparedSequence*>& batch,
                      Rng& rng, int draws_per_sequence, GradMap<float>* grads_out);

// Full training loop: deterministic given (params init, data, config). The
// batch is processed by parallel workers with gradients reduced in index
// order, so FORGE_THREADS never changes the result.
std::vector<TrainLogPoint> train_diffusion(ParamStore<float>& params, const DiffusionDims& dims,
                                           const NoiseSchedule& sched,
                                           const std::vector<PreparedSequence>& data,
                                           const DiffusionTrainConfig& cfg, std::uint64_t seed);

// Builds an all-zero sequence skeleton (tokens, positions, masks) from a
// layout; the sampler fills the tokens.
template <class S>
TokenSequence<S> empty_sequence(const TokenLayout& layout) {
    TokenSequence<S> seq;
    seq.layout = layout;
    const int total = layout.total_tokens();
    seq.tokens = Tensor<S>({total, layout.token_size});
    seq.positions = Tensor<S>({total, layout.position_dim});
    seq.mask = Tensor<S>({total, layout.token_size});
    int row = 0;
    for (std::size_t l = 0; l < layout.layers.size(); ++l) {
        const auto& info = layout.layers[l];
        for (int t = 0; t < info.token_span; ++t, ++row) {
            const Tensor<S> pos =
                positional_annotation<S>(static_cast<int>(l), t, layout.position_dim);
            for (int d = 0; d < layout.position_dim; ++d) seq.positions.at(row, d) = pos[d];
            const int real = std::min(layout.token_size, info.element_count - t * layout.token_size);
            for (int i = 0; i < real; ++i) seq.mask.at(row, i) = S(1);
        }
    }
    return seq;
}

// Ancestral sampling, sequential over positions: the learned start token
// primes the recurrence, each position runs the full reverse chain on its
// token conditioned on (prototype, condition), and the denoised token feeds
// the recurrence to produce the next prototype. The final reverse step is
// noiseless; pad slots are zeroed before the token re-enters the scan.
TokenSequence<float> sample_sequence(const ParamStore<float>& params, const DiffusionDims& dims,
                                     const NoiseSchedule& sched, const Tensor<float>& condition,
                                     const TokenLayout& layout, std::uint64_t seed);

LoraAdapter<float> generate_adapter(const ParamStore<float>& params, const DiffusionDims& dims,
                                    const NoiseSchedule& sched, const Tensor<float>& condition,
                                    const TokenLayout& layout, std::uint64_t seed);

}  // namespace forge
