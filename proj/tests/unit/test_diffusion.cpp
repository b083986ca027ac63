// Copyright (c) 2026 The loraforge Authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "forge/corpus.hpp"
#include "forge/diffusion.hpp"
#include "test_helpers.hpp"

using namespace forge;

namespace {

DiffusionDims micro_dims(int token_size = 16, int position_dim = 8) {
    DiffusionDims dims;
    dims.token_size = token_size;
    dims.position_dim = position_dim;
    dims.ssm = SsmDims{token_size + position_dim, 32, 8};
    dims.den.token_size = token_size;
    dims.den.proto_dim = dims.ssm.proto_dim;
    dims.den.cond_dim = 32;
    dims.den.time_dim = 8;
    dims.den.channels = 24;
    dims.den.blocks = 2;
    return dims;
}

ParamStore<float> micro_params(const DiffusionDims& dims, std::uint64_t seed,
                               int model_feat_dim = 40, int text_feat_dim = 40) {
    ParamStore<float> store;
    Rng rng(seed);
    init_ssm_params(store, dims.ssm, rng);
    init_denoiser_params(store, dims.den, rng);
    store.add(kCondProjModel, Tensor<float>::randn({16, model_feat_dim}, rng, 0.05));
    store.add(kCondProjText, Tensor<float>::randn({16, text_feat_dim}, rng, 0.05));
    return store;
}

LoraAdapter<float> padded_adapter(Rng& rng) {
    LoraAdapter<float> adapter;
    adapter.rank = 2;
    LoraFactor<float> f;
    f.layer_id = "W0";
    f.rank = 2;
    f.B = Tensor<float>::randn({9, 2}, rng, 0.4);
    f.A = Tensor<float>::randn({2, 9}, rng, 0.4);
    adapter.factors.push_back(std::move(f));
    return adapter;  // 36 elements -> 3 tokens of 16 with pad_len 12
}

}  // namespace

TEST_CASE("noise schedule invariants") {
    auto sched = make_schedule(1000);
    CHECK(sched.beta(1) == doctest::Approx(1e-4));
    CHECK(sched.beta(1000) == doctest::Approx(0.02));
    CHECK(sched.alphabar(1000) < 0.01);  // terminal state is near-pure noise
    for (int t = 1; t <= 1000; ++t) {
        CHECK(sched.alphabar(t) < sched.alphabar(t - 1));
        const double a = sched.signal_coeff(t);
        const double s = sched.noise_coeff(t);
        CHECK(std::abs(a * a + s * s - 1.0) <= 1e-6);
    }

    auto single = make_schedule(1);
    CHECK(single.alphabar(1) == doctest::Approx(1.0 - single.beta(1)));
    CHECK_THROWS_AS(make_schedule(0), ConfigError);
}

TEST_CASE("forward_diffuse boundaries and moments") {
    auto sched = make_schedule(50);
    Rng rng(11);
    auto u0 = Tensor<float>::randn({4}, rng);

    // t = 0 boundary: identity
    CHECK(forward_diffuse(u0, 0, Tensor<float>({4}), sched).bitwise_equal(u0));
    CHECK_THROWS_AS(forward_diffuse(u0, 51, Tensor<float>({4}), sched), ConfigError);

    // eps = 0: pure shrinkage by sqrt(alphabar)
    const int t = 30;
    auto shrunk = forward_diffuse(u0, t, Tensor<float>({4}), sched);
    for (Index i = 0; i < 4; ++i)
        CHECK(shrunk[i] == doctest::Approx(u0[i] * sched.signal_coeff(t)).epsilon(1e-6));

    // Monte Carlo marginal moments over 1e5 draws
    const int n = 100000;
    std::vector<double> mean(4, 0.0);
    double var_acc = 0.0;
    for (int k = 0; k < n; ++k) {
        Tensor<float> eps = Tensor<float>::uninitialized({4});
        for (Index i = 0; i < 4; ++i) eps[i] = static_cast<float>(rng.normal());
        auto ut = forward_diffuse(u0, t, eps, sched);
        for (Index i = 0; i < 4; ++i) {
            const double centered = ut[i] - sched.signal_coeff(t) * u0[i];
            mean[static_cast<std::size_t>(i)] += centered;
            var_acc += centered * centered;
        }
    }
    const double sigma = sched.noise_coeff(t);
    for (double m : mean) {
        m /= n;
        CHECK(std::abs(m) < 3.0 * sigma / std::sqrt(static_cast<double>(n)));
    }
    const double sample_var = var_acc / (4.0 * n);
    CHECK(std::abs(sample_var - sigma * sigma) / (sigma * sigma) < 0.02);
}

TEST_CASE("denoiser zero-initialized head predicts zero for any input") {
    for (int token_size : {4, 64}) {
        auto dims = micro_dims(token_size, 4);
        ParamStore<float> store;
        Rng rng(12);
        init_ssm_params(store, dims.ssm, rng);
        init_denoiser_params(store, dims.den, rng);
        ValueCtx<float> cx(store);
        auto out = denoiser_forward(cx, dims.den, Tensor<float>::randn({token_size}, rng),
                                    Tensor<float>::randn({dims.den.proto_dim}, rng),
                                    Tensor<float>::randn({dims.den.cond_dim}, rng), 7);
        CHECK(out.extent(0) == token_size);
        CHECK(out.vec().isZero());
    }
}

TEST_CASE("denoiser gradient w.r.t. the prototype matches finite differences") {
    DiffusionDims dims = micro_dims(6, 4);
    dims.den.channels = 8;
    dims.den.blocks = 1;
    dims.den.cond_dim = 6;
    dims.den.time_dim = 4;
    dims.ssm.proto_dim = 3;
    dims.den.proto_dim = 3;

    ParamStore<double> store;
    Rng rng(13);
    init_denoiser_params(store, dims.den, rng);
    store.mutable_value(den_name("out/w")) = Tensor<double>::randn({1, 8, 1}, rng, 0.5);
    store.add("proto", Tensor<double>::randn({3}, rng));
    const auto u_t = Tensor<double>::randn({6}, rng);
    const auto cond = Tensor<double>::randn({6}, rng);

    test::GradcheckOptions opts;
    opts.names = {"proto"};
    const double err = test::gradcheck_max_rel_err(
        store,
        [&](TapeCtx<double>& cx) {
            auto out = denoiser_forward(cx, dims.den, cx.constant(u_t), cx.param("proto"),
                                        cx.constant(cond), 3);
            return sum(mul(out, out));
        },
        opts);
    CHECK(err < 1e-4);
}

TEST_CASE("diffusion loss against predictor stubs") {
    auto dims = micro_dims();
    auto store = micro_params(dims, 14);
    auto sched = make_schedule(40);
    Rng rng(15);
    auto adapter = padded_adapter(rng);
    auto seq = tokenize(adapter, dims.token_size, dims.position_dim);

    std::vector<JtDraw<float>> draws;
    Rng noise_rng(16);
    for (int d = 0; d < 200; ++d) {
        JtDraw<float> draw;
        draw.token = static_cast<int>(noise_rng.uniform_int(0, seq.count() - 1));
        draw.t = static_cast<int>(noise_rng.uniform_int(1, sched.steps));
        draw.eps = Tensor<float>::uninitialized({dims.token_size});
        for (int i = 0; i < dims.token_size; ++i)
            draw.eps[i] = static_cast<float>(noise_rng.normal());
        draws.push_back(std::move(draw));
    }

    Tape<float> tape;
    TapeCtx<float> cx(tape, store);
    auto cond = cx.constant(Tensor<float>({dims.den.cond_dim}));

    // a perfect predictor (returns the injected noise) scores exactly zero
    int cursor = 0;
    auto perfect = [&](TapeCtx<float>& c, const Var<float>&, const Var<float>&,
                       const Var<float>&, int) {
        return c.constant(draws[static_cast<std::size_t>(cursor++)].eps);
    };
    auto loss0 = sequence_diffusion_loss(cx, dims, seq, cond, sched, draws, perfect);
    CHECK(loss0.value()[0] == 0.0f);

    // the zero predictor scores the mean squared norm of unit noise, ~1
    auto zero = [&](TapeCtx<float>& c, const Var<float>&, const Var<float>&, const Var<float>&,
                    int) { return c.constant(Tensor<float>({dims.token_size})); };
    auto loss1 = sequence_diffusion_loss(cx, dims, seq, cond, sched, draws, zero);
    CHECK(loss1.value()[0] == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("pad slots never influence the loss") {
    auto dims = micro_dims();
    auto store = micro_params(dims, 17);
    auto sched = make_schedule(40);
    Rng rng(18);
    auto adapter = padded_adapter(rng);
    auto seq = tokenize(adapter, dims.token_size, dims.position_dim);
    REQUIRE(seq.layout.layers[0].pad_len > 0);

    std::vector<JtDraw<float>> draws;
    for (int d = 0; d < 4; ++d) {
        JtDraw<float> draw;
        draw.token = d % seq.count();
        draw.t = 5 + d;
        draw.eps = Tensor<float>::randn({dims.token_size}, rng);
        draws.push_back(std::move(draw));
    }

    const auto run = [&](const TokenSequence<float>& s) {
        Tape<float> tape;
        TapeCtx<float> cx(tape, store);
        auto cond = project_condition(cx, cx.constant(Tensor<float>::full({40}, 0.1f)),
                                      cx.constant(Tensor<float>::full({40}, -0.2f)));
        return sequence_diffusion_loss(cx, dims, s, cond, sched, draws,
                                       DenoiserPredictor<float>{&dims.den})
            .value()[0];
    };

    const float base_loss = run(seq);
    TokenSequence<float> tampered = seq;
    for (int j = 0; j < tampered.count(); ++j)
        for (int i = 0; i < dims.token_size; ++i)
            if (tampered.mask.at(j, i) == 0.0f) tampered.tokens.at(j, i) = 123.456f;
    CHECK(run(tampered) == base_loss);  // bitwise
}

TEST_CASE("end-to-end loss gradients reach the recurrent module") {
    DiffusionDims dims = micro_dims(8, 4);
    dims.ssm = SsmDims{12, 10, 4};
    dims.den.token_size = 8;
    dims.den.proto_dim = 4;
    dims.den.cond_dim = 8;
    dims.den.time_dim = 4;
    dims.den.channels = 6;
    dims.den.blocks = 1;

    ParamStore<double> store;
    Rng rng(19);
    init_ssm_params(store, dims.ssm, rng);
    init_denoiser_params(store, dims.den, rng);
    store.mutable_value(den_name("out/w")) = Tensor<double>::randn({1, 6, 1}, rng, 0.3);
    store.add(kCondProjModel, Tensor<double>::randn({4, 10}, rng, 0.1));
    store.add(kCondProjText, Tensor<double>::randn({4, 10}, rng, 0.1));

    LoraAdapter<double> adapter;
    adapter.rank = 1;
    LoraFactor<double> f;
    f.layer_id = "W0";
    f.rank = 1;
    f.B = Tensor<double>::randn({5, 1}, rng, 0.4);
    f.A = Tensor<double>::randn({1, 5}, rng, 0.4);
    adapter.factors.push_back(std::move(f));
    auto seq = tokenize(adapter, dims.token_size, dims.position_dim);

    auto sched = make_schedule(10);
    std::vector<JtDraw<double>> draws;
    for (int d = 0; d < 2; ++d) {
        JtDraw<double> draw;
        draw.token = d % seq.count();
        draw.t = 3 + 2 * d;
        draw.eps = Tensor<double>::randn({dims.token_size}, rng);
        draws.push_back(std::move(draw));
    }
    const auto model_feat = Tensor<double>::randn({10}, rng, 0.3);
    const auto text_feat = Tensor<double>::randn({10}, rng, 0.3);

    test::GradcheckOptions opts;
    opts.names = {kSsmWIn, kSsmWGate, kSsmDecay, kSsmStart, kCondProjModel,
                  den_name("in/w"), den_block_name(0, "film/w")};
    opts.max_entries_per_param = 6;
    const double err = test::gradcheck_max_rel_err(
        store,
        [&](TapeCtx<double>& cx) {
            auto cond = project_condition(cx, cx.constant(model_feat), cx.constant(text_feat));
            return sequence_diffusion_loss(cx, dims, seq, cond, sched, draws,
                                           DenoiserPredictor<double>{&dims.den});
        },
        opts);
    CHECK(err < 1e-3);
}

TEST_CASE("training smoke: loss halves within 2000 steps on a micro-corpus") {
    CorpusConfig ccfg;
    ccfg.seed = 23;
    ccfg.pretrain_steps = 200;
    ccfg.lora_steps = 250;
    auto suite = make_task_suite(ccfg.seed);
    auto base = pretrain_base(ccfg, suite);

    auto dims = micro_dims();
    CondDims cdims;
    cdims.buckets = 32;
    cdims.model_dim = 16;
    cdims.text_dim = 16;

    std::vector<PreparedSequence> data;
    for (int i = 0; i < 4; ++i) {
        auto entry = finetune_lora(base, suite[static_cast<std::size_t>(i % 2)], 2, 1 + i / 2, ccfg);
        PreparedSequence prep;
        prep.seq = tokenize(entry.adapter, dims.token_size, dims.position_dim);
        prep.model_features = base_model_features(base, cdims);
        prep.text_features = task_text_features(suite[static_cast<std::size_t>(i % 2)], cdims);
        data.push_back(std::move(prep));
    }

    ParamStore<float> store;
    Rng rng(24);
    init_ssm_params(store, dims.ssm, rng);
    init_denoiser_params(store, dims.den, rng);
    init_condition_params(store, cdims, static_cast<int>(base.layers.size()), rng);

    // beta_max is scaled up for the short schedule so alphabar_T is near zero
    const auto sched = make_schedule(40, "linear", 1e-4, 0.25);

    // untrained baseline on a fixed probe batch (zero-init head -> ~1.0)
    Rng probe_rng(26);
    std::vector<const PreparedSequence*> probe{&data[0], &data[1], &data[2], &data[3]};
    const double initial = diffusion_loss(store, dims, sched, probe, probe_rng, 8, nullptr);
    CHECK(initial == doctest::Approx(1.0).epsilon(0.1));

    DiffusionTrainConfig tcfg;
    tcfg.iterations = 2000;
    tcfg.batch = 4;
    tcfg.draws_per_sequence = 2;
    tcfg.lr = 3e-3;
    tcfg.log_every = 200;
    auto log = train_diffusion(store, dims, sched, data, tcfg, 25);
    REQUIRE(log.size() >= 2);
    CHECK(log.back().loss <= 0.5 * initial);
}

TEST_CASE("sampling determinism, structure, and seed diversity") {
    auto dims = micro_dims();
    auto store = micro_params(dims, 26);
    auto sched = make_schedule(20);
    Rng rng(27);
    auto adapter = padded_adapter(rng);
    auto layout = tokenize(adapter, dims.token_size, dims.position_dim).layout;
    auto cond = Tensor<float>::randn({dims.den.cond_dim}, rng, 0.3);

    auto s1 = sample_sequence(store, dims, sched, cond, layout, 99);
    auto s2 = sample_sequence(store, dims, sched, cond, layout, 99);
    CHECK(s1.tokens.bitwise_equal(s2.tokens));

    CHECK(s1.count() == layout.total_tokens());
    for (int j = 0; j < s1.count(); ++j)
        for (int i = 0; i < dims.token_size; ++i)
            if (s1.mask.at(j, i) == 0.0f) CHECK(s1.tokens.at(j, i) == 0.0f);

    auto a1 = generate_adapter(store, dims, sched, cond, layout, 1);
    auto a2 = generate_adapter(store, dims, sched, cond, layout, 2);
    auto a3 = generate_adapter(store, dims, sched, cond, layout, 3);
    CHECK(a1.provenance.kind == "generated");
    CHECK_FALSE(a1.factors[0].B.bitwise_equal(a2.factors[0].B));
    CHECK_FALSE(a2.factors[0].B.bitwise_equal(a3.factors[0].B));

    TokenLayout wrong = layout;
    wrong.token_size = 8;
    CHECK_THROWS_AS(sample_sequence(store, dims, sched, cond, wrong, 1), StructuralError);
}
