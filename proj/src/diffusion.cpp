// Copyright (c) 2026 The loraforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "forge/diffusion.hpp"

#include <cmath>

namespace forge {

namespace {

std::vector<JtDraw<float>> draw_jt(Rng& rng, int token_count, int token_size, int steps,
                                   int n_draws) {
    std::vector<JtDraw<float>> draws;
    draws.reserve(static_cast<std::size_t>(n_draws));
    for (int d = 0; d < n_draws; ++d) {
        JtDraw<float> draw;
        draw.token = static_cast<int>(rng.uniform_int(0, token_count - 1));
        draw.t = static_cast<int>(rng.uniform_int(1, steps));
        draw.eps = Tensor<float>::uninitialized({token_size});
        for (int i = 0; i < token_size; ++i) draw.eps[i] = static_cast<float>(rng.normal());
        draws.push_back(std::move(draw));
    }
    return draws;
}

double item_loss_and_grads(const ParamStore<float>& params, const DiffusionDims& dims,
                           const NoiseSchedule& sched, const PreparedSequence& item,
                           const std::vector<JtDraw<float>>& draws, GradMap<float>* grads_out) {
    Tape<float> tape;
    TapeCtx<float> cx(tape, params);
    auto cond = project_condition(cx, cx.constant(item.model_features),
                                  cx.constant(item.text_features));
    auto loss = sequence_diffusion_loss(cx, dims, item.seq, cond, sched, draws,
                                        DenoiserPredictor<float>{&dims.den});
    const double value = loss.value()[0];
    if (grads_out) *grads_out = tape.backward(loss);
    return value;
}

void merge_grads(GradMap<float>& total, const GradMap<float>& part) {
    for (const auto& [name, grad] : part) {
        auto it = total.find(name);
        if (it == total.end())
            total.emplace(name, grad);
        else
            it->second.vec() += grad.vec();
    }
}

}  // namespace

double diffusion_loss(const ParamStore<float>& params, const DiffusionDims& dims,
                      const NoiseSchedule& sched, const std::vector<const PreparedSequence*>& batch,
                      Rng& rng, int draws_per_sequence, GradMap<float>* grads_out) {
    if (batch.empty()) throw ContractError("diffusion loss requires a nonempty batch");
    dims.validate();

    // all randomness drawn up front on the caller's stream: results never
    // depend on worker scheduling
    std::vector<std::vector<JtDraw<float>>> draws(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i)
        draws[i] = draw_jt(rng, batch[i]->seq.count(), dims.token_size, sched.steps,
                           draws_per_sequence);

    std::vector<double> losses(batch.size(), 0.0);
    std::vector<GradMap<float>> grads(batch.size());
    parallel_for(static_cast<int>(batch.size()), [&](int i) {
        losses[static_cast<std::size_t>(i)] =
            item_loss_and_grads(params, dims, sched, *batch[static_cast<std::size_t>(i)],
                                draws[static_cast<std::size_t>(i)],
                                grads_out ? &grads[static_cast<std::size_t>(i)] : nullptr);
    });

    double mean_loss = 0.0;
    for (double l : losses) mean_loss += l;
    mean_loss /= static_cast<double>(batch.size());

    if (grads_out) {
        grads_out->clear();
        for (std::size_t i = 0; i < grads.size(); ++i) merge_grads(*grads_out, grads[i]);
        const float inv = 1.0f / static_cast<float>(batch.size());
        for (auto& [name, grad] : *grads_out) grad.vec() *= inv;
    }
    return mean_loss;
}

std::vector<TrainLogPoint> train_diffusion(ParamStore<float>& params, const DiffusionDims& dims,
                                           const NoiseSchedule& sched,
                                           const std::vector<PreparedSequence>& data,
                                           const DiffusionTrainConfig& cfg, std::uint64_t seed) {
    if (data.empty()) throw ContractError("diffusion training requires a nonempty corpus");
    dims.validate();
    Rng rng = Rng::stream(seed, "diffusion-train");
    AdamConfig adam;
    std::vector<TrainLogPoint> log;
    double running = 0.0;
    int running_n = 0;
    for (int iter = 0; iter < cfg.iterations; ++iter) {
        std::vector<const PreparedSequence*> batch;
        for (int b = 0; b < cfg.batch; ++b)
            batch.push_back(
                &data[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(data.size()) - 1))]);

        GradMap<float> grads;
        const double loss =
            diffusion_loss(params, dims, sched, batch, rng, cfg.draws_per_sequence, &grads);
        if (!std::isfinite(loss))
            throw TrainingError("diffusion loss diverged at iteration " + std::to_string(iter));

        // linear warmup then cosine decay to final_lr_frac * lr
        double lr = cfg.lr;
        if (cfg.warmup > 0 && iter < cfg.warmup)
            lr *= static_cast<double>(iter + 1) / cfg.warmup;
        else if (cfg.iterations > cfg.warmup) {
            const double progress =
                static_cast<double>(iter - cfg.warmup) / std::max(1, cfg.iterations - cfg.warmup);
            const double floor = cfg.final_lr_frac;
            lr *= floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(progress * 3.14159265358979323846));
        }
        adam.lr = lr;
        params.adam_step(grads, adam);

        running += loss;
        ++running_n;
        if (cfg.log_every > 0 && ((iter + 1) % cfg.log_every == 0 || iter + 1 == cfg.iterations)) {
            log.push_back({iter + 1, running / running_n});
            running = 0.0;
            running_n = 0;
        }
    }
    return log;
}

TokenSequence<float> sample_sequence(const ParamStore<float>& params, const DiffusionDims& dims,
                                     const NoiseSchedule& sched, const Tensor<float>& condition,
                                     const TokenLayout& layout, std::uint64_t seed) {
    dims.validate();
    if (layout.token_size != dims.token_size || layout.position_dim != dims.position_dim)
        throw StructuralError("layout does not match the trained pipeline dims");
    if (condition.rank() != 1 || condition.extent(0) != dims.den.cond_dim)
        throw StructuralError("condition dim does not match the trained denoiser");

    Rng rng = Rng::stream(seed, "sample-sequence");
    ValueCtx<float> cx(params);
    TokenSequence<float> seq = empty_sequence<float>(layout);

    Tensor<float> hidden({dims.ssm.hidden_dim});
    Tensor<float> scan_input = params.value(kSsmStart);
    for (int j = 0; j < seq.count(); ++j) {
        const auto step = ssm_step(cx, dims.ssm, scan_input, hidden);
        hidden = step.hidden;
        const Tensor<float>& proto = step.proto;
        const Tensor<float> mask = row_vector(seq.mask, j);

        // reverse chain from pure noise, pad slots pinned to zero throughout
        Tensor<float> x = Tensor<float>::uninitialized({dims.token_size});
        for (int i = 0; i < dims.token_size; ++i) x[i] = static_cast<float>(rng.normal());
        x = mul_val(x, mask);
        for (int t = sched.steps; t >= 1; --t) {
            const Tensor<float> eps_hat =
                denoiser_forward(cx, dims.den, x, proto, condition, t);
            const double beta = sched.beta(t);
            const double alpha = 1.0 - beta;
            const double mean_scale = 1.0 / std::sqrt(alpha);
            const double eps_scale = beta / std::sqrt(1.0 - sched.alphabar(t));
            Tensor<float> mean = Tensor<float>::uninitialized({dims.token_size});
            mean.vec() = (x.vec() - static_cast<float>(eps_scale) * eps_hat.vec()) *
                         static_cast<float>(mean_scale);
            if (t > 1) {
                const double stddev = std::sqrt(sched.posterior_var(t));
                for (int i = 0; i < dims.token_size; ++i)
                    mean[i] += static_cast<float>(stddev * rng.normal());
            }
            x = mul_val(mean, mask);
        }

        for (int i = 0; i < dims.token_size; ++i) seq.tokens.at(j, i) = x[i];
        if (j + 1 < seq.count())
            scan_input = concat_vec_val(x, row_vector(seq.positions, j));
    }
    return seq;
}

LoraAdapter<float> generate_adapter(const ParamStore<float>& params, const DiffusionDims& dims,
                                    const NoiseSchedule& sched, const Tensor<float>& condition,
                                    const TokenLayout& layout, std::uint64_t seed) {
    const TokenSequence<float> seq = sample_sequence(params, dims, sched, condition, layout, seed);
    LoraAdapter<float> adapter = detokenize(seq);
    adapter.provenance = Provenance::generated();
    return adapter;
}

}  // namespace forge
